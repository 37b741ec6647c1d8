use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compute::{grad_check, CoordinateCheck, Graph};
use crate::config::{BaselineConfig, ChiveConfig};
use crate::corpus::{generate, CorpusConfig};
use crate::decoder::DurationMode;
use crate::error::Result;
use crate::model::{Model, ModelKind};
use crate::variational::{sample_on, standard_normal};

use super::{loss_on, LossWeights};

/// Settings of [`objective_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveCheckConfig {
    pub trees: usize,
    pub samples_per_tree: usize,
    pub epsilon: f64,
    /// Parameters are redrawn uniformly from `[-scale, scale]`.
    pub parameter_scale: f64,
    /// Extra factor on the output readouts and the posterior projection.
    pub head_scale: f64,
    /// Standard deviation of the random log-F0 and c0 targets.
    pub target_scale: f64,
    /// Inclusive range of ground-truth phone durations in frames.
    pub duration_frames: (u32, u32),
    pub seed: u64,
}

impl Default for ObjectiveCheckConfig {
    fn default() -> Self {
        ObjectiveCheckConfig {
            trees: 20,
            samples_per_tree: 40,
            epsilon: 1.5e-2,
            parameter_scale: 0.5,
            head_scale: 0.1,
            target_scale: 0.05,
            duration_frames: (1, 1),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeCheck {
    pub utterance_id: String,
    pub words: usize,
    pub phones: usize,
    pub frames: usize,
    pub max_relative_error: f64,
    pub worst: Option<CoordinateCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveCheckReport {
    pub model: ModelKind,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub trees: Vec<TreeCheck>,
}

/// Checks the gradient of the full weighted objective (durations, F0/c0 and
/// KL, all weights 1) on random trees of 1 to 6 words, with a small model at
/// a random parameter point and fixed reparameterisation noise.
pub fn objective_grad_check(kind: ModelKind, config: &ObjectiveCheckConfig) -> Result<ObjectiveCheckReport> {
    let corpus = generate(&CorpusConfig {
        utterances: config.trees,
        seed: config.seed,
        words: (1, 6),
        duration_frames: config.duration_frames,
        ..CorpusConfig::default()
    })?;
    let dims = corpus.feature_dims();
    let mut model = match kind {
        ModelKind::Chive => Model::chive(ChiveConfig::toy(dims), config.seed)?,
        ModelKind::Baseline => {
            let mut c = BaselineConfig::new(dims, 8);
            c.latent_dim = 8;
            Model::baseline(c, config.seed)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = rng.gen_range(-config.parameter_scale..=config.parameter_scale);
        }
    }
    let heads = model.output_head_weights();
    for id in heads {
        for v in model.store.get_mut(id).data_mut() {
            *v *= config.head_scale;
        }
    }
    let (lo, hi) = config.duration_frames;
    model.init_output_biases(0.0, 0.0, 0.5 * (lo + hi) as f64);
    let weights = LossWeights {
        kl_warmup_steps: 0,
        ..LossWeights::default()
    };
    let mut report = ObjectiveCheckReport {
        model: kind,
        parameters: model.parameter_count(),
        max_relative_error: 0.0,
        trees: Vec::with_capacity(corpus.items.len()),
    };
    for (i, item) in corpus.items.iter().enumerate() {
        let mut targets = item.targets.clone();
        for v in targets.log_f0.iter_mut().chain(targets.c0.iter_mut()) {
            *v = config.target_scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let noise = standard_normal(&mut rng, model.latent_dim());
        let tree = &item.tree;
        let r = grad_check(
            &model.store,
            |g: &mut Graph| {
                let post = model.posterior(g, tree, &targets)?;
                let s = sample_on(g, post, &noise);
                let decoded = model.decode(g, tree, s, DurationMode::TeacherForced)?;
                Ok(loss_on(g, &decoded, &targets, post, &weights)?.total)
            },
            config.epsilon,
            config.samples_per_tree,
            config.seed.wrapping_add(i as u64),
        )?;
        report.max_relative_error = report.max_relative_error.max(r.max_relative_error);
        report.trees.push(TreeCheck {
            utterance_id: tree.utterance_id.clone(),
            words: tree.words.len(),
            phones: tree.phone_count(),
            frames: targets.frame_count(),
            max_relative_error: r.max_relative_error,
            worst: r.worst,
        });
    }
    Ok(report)
}
