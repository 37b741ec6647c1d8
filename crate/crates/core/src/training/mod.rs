//! Objective, optimizer and the training loop.

mod check;
mod loss;
mod optim;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use check::{objective_grad_check, ObjectiveCheckConfig, ObjectiveCheckReport, TreeCheck};
pub use loss::{loss, loss_on, LossBreakdown, LossVars, LossWeights};
pub use optim::{Adam, AdamConfig};

use crate::compute::{Checkpoint, Gradients, Graph, ParameterStore};
use crate::config::ProsodyNorm;
use crate::corpus::CorpusItem;
use crate::decoder::DurationMode;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EmbeddingSource, MetricReport};
use crate::model::Model;
use crate::parallel::par_map;
use crate::variational::{sample_on, standard_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    /// Steps between evaluations and checkpoints; 0 evaluates only at the end.
    pub eval_interval: u64,
    /// Evaluate on at most this many held-out utterances during training.
    pub eval_limit: Option<usize>,
    pub seed: u64,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub jobs: usize,
    /// Before the first step, set output-head biases to training-set means
    /// and fit the encoder's prosody standardisation on the training set.
    pub data_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_steps: 10_000,
            eval_interval: 500,
            eval_limit: None,
            seed: 0,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            jobs: 1,
            data_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Input("batch size must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Input("clip norm must be positive".into()));
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::Input("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Input("Adam decay rates must lie in [0, 1)".into()));
        }
        self.weights.validate()
    }
}

/// Seed of the reparameterisation noise for batch slot `slot` at `step`.
pub fn noise_seed(seed: u64, step: u64, slot: usize) -> u64 {
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(step.wrapping_add(1));
    z = z.wrapping_add((slot as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loss and parameter gradients for one utterance with fixed noise.
pub fn utterance_gradients(
    model: &Model,
    item: &CorpusItem,
    weights: &LossWeights,
    noise: &[f64],
) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Graph::new(&model.store);
    let post = model.posterior(&mut g, &item.tree, &item.targets)?;
    let s = sample_on(&mut g, post, noise);
    let decoded = model.decode(&mut g, &item.tree, s, DurationMode::TeacherForced)?;
    let l = loss_on(&mut g, &decoded, &item.targets, post, weights)?;
    let value = l.value(&g);
    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss for utterance {} (duration {}, f0/c0 {}, kl {})",
            item.tree.utterance_id, value.duration_l2, value.f0c0_l2, value.kl
        )));
    }
    let mut grads = model.store.zero_grads();
    g.backward(l.total, &mut grads);
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient for utterance {}",
            item.tree.utterance_id
        )));
    }
    Ok((value, grads))
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Batch means of the loss components.
    pub loss: LossBreakdown,
    pub kl_weight: f64,
    pub grad_norm: f64,
    pub utterances: Vec<String>,
}

/// Row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub total: f64,
    pub dur_l2: f64,
    pub f0c0_l2: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub grad_norm: f64,
    pub eval: Option<EvalSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub encoded: MetricReport,
    pub zero: MetricReport,
    /// Random embeddings drawn with the training seed.
    pub random: MetricReport,
}

/// Corpus means used for data-dependent output bias initialisation.
pub fn target_means(items: &[CorpusItem]) -> Result<(f64, f64, f64)> {
    let (mut f0, mut c0, mut frames, mut dur, mut phones) = (0.0, 0.0, 0usize, 0.0, 0usize);
    for it in items {
        f0 += it.targets.log_f0.iter().sum::<f64>();
        c0 += it.targets.c0.iter().sum::<f64>();
        frames += it.targets.frame_count();
        dur += it.targets.durations.iter().map(|d| *d as f64).sum::<f64>();
        phones += it.targets.durations.len();
    }
    if frames == 0 || phones == 0 {
        return Err(Error::Input("no training data".into()));
    }
    Ok((f0 / frames as f64, c0 / frames as f64, dur / phones as f64))
}

/// Stateful trainer. The batch for a given step depends only on the seed,
/// the step and the training set, so a resumed run sees the same batches.
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub config: TrainConfig,
    data: Vec<CorpusItem>,
    permutations: HashMap<u64, Vec<usize>>,
}

impl Trainer {
    pub fn new(mut model: Model, config: TrainConfig, mut data: Vec<CorpusItem>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        data.sort_by(|a, b| a.tree.utterance_id.cmp(&b.tree.utterance_id));
        if config.data_init {
            let (f0, c0, dur) = target_means(&data)?;
            model.init_output_biases(f0, c0, dur);
            if let Some(norm) = ProsodyNorm::fit(data.iter().map(|it| &it.targets)) {
                model.set_prosody_norm(norm);
            }
        }
        let adam = Adam::new(config.adam, &model.store);
        Ok(Trainer {
            model,
            adam,
            config,
            data,
            permutations: HashMap::new(),
        })
    }

    /// Restores model, optimizer state and step from a training checkpoint.
    pub fn resume(ck: &Checkpoint, config: TrainConfig, mut data: Vec<CorpusItem>) -> Result<Self> {
        config.validate()?;
        let model = Model::from_checkpoint(ck)?;
        let step = ck.header["step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("training checkpoint lacks a step".into()))?;
        let adam = Adam::restore(config.adam, step, &model.store, |name| ck.get(name).cloned())?;
        data.sort_by(|a, b| a.tree.utterance_id.cmp(&b.tree.utterance_id));
        Ok(Trainer {
            model,
            adam,
            config,
            data,
            permutations: HashMap::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn data(&self) -> &[CorpusItem] {
        &self.data
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        let n = self.data.len();
        let seed = self.config.seed;
        self.permutations.retain(|e, _| *e + 1 >= epoch);
        self.permutations.entry(epoch).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
    }

    /// Training-set indices of the batch taken at `step`.
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let n = self.data.len() as u64;
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|j| {
                let pos = step * b + j;
                self.permutation(pos / n)[(pos % n) as usize]
            })
            .collect()
    }

    /// Runs one optimizer step.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.adam.step;
        let batch = self.batch_indices(step);
        let weights = self.config.weights.at_step(step);
        let dim = self.model.latent_dim();
        let seed = self.config.seed;
        let model = &self.model;
        let data = &self.data;
        let results = par_map(&batch, self.config.jobs, |slot, &i| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(seed, step, slot));
            let noise = standard_normal(&mut rng, dim);
            utterance_gradients(model, &data[i], &weights, &noise)
        })?;
        let mut grads = self.model.store.zero_grads();
        let mut mean = LossBreakdown {
            total: 0.0,
            duration_l2: 0.0,
            f0c0_l2: 0.0,
            kl: 0.0,
        };
        for (l, g) in &results {
            grads.add_assign(g);
            mean.total += l.total;
            mean.duration_l2 += l.duration_l2;
            mean.f0c0_l2 += l.f0c0_l2;
            mean.kl += l.kl;
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        mean.total *= scale;
        mean.duration_l2 *= scale;
        mean.f0c0_l2 *= scale;
        mean.kl *= scale;
        let grad_norm = grads.clip_global_norm(self.config.clip_norm);
        self.adam.apply(&mut self.model.store, &grads);
        if !self.model.store.iter().all(|(_, _, t)| t.is_finite()) {
            return Err(Error::NonFinite(format!("parameters after step {}", step + 1)));
        }
        Ok(StepReport {
            step: step + 1,
            loss: mean,
            kl_weight: weights.kl,
            grad_norm,
            utterances: batch.iter().map(|&i| self.data[i].tree.utterance_id.clone()).collect(),
        })
    }

    /// Model, optimizer moments and step in one checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(json!({
            "step": self.adam.step,
            "train": self.config,
        }));
        ck.tensors.extend(self.adam.state_tensors(&self.model.store));
        ck
    }

    pub fn eval_snapshot(&self, eval: &[CorpusItem]) -> Result<EvalSnapshot> {
        let limit = self.config.eval_limit.unwrap_or(eval.len()).min(eval.len());
        let items = &eval[..limit];
        Ok(EvalSnapshot {
            encoded: evaluate(&self.model, items, EmbeddingSource::Encoded, self.config.jobs)?.report,
            zero: evaluate(&self.model, items, EmbeddingSource::Zero, self.config.jobs)?.report,
            random: evaluate(&self.model, items, EmbeddingSource::Random { seed: self.config.seed }, self.config.jobs)?.report,
        })
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_step: u64,
    pub best_step: Option<u64>,
    pub best_logf0_rmse: Option<f64>,
    /// Parameters with the lowest held-out encoded log-F0 RMSE.
    pub best_store: Option<ParameterStore>,
    pub rows: Vec<MetricsRow>,
}

/// Where [`train`] writes its artefacts.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
}

/// Trains until `max_steps`, evaluating every `eval_interval` steps on
/// `eval`. With an output directory, `last.ckpt`, `best.ckpt` and
/// `metrics.jsonl` are maintained there. `on_row` sees every log row.
pub fn train(
    trainer: &mut Trainer,
    eval: &[CorpusItem],
    out: Option<&OutputPaths>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainSummary> {
    use std::io::Write;
    let mut log = match out {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.metrics();
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, std::io::BufWriter::new(file)))
        }
        None => None,
    };
    let mut summary = TrainSummary {
        final_step: trainer.step(),
        best_step: None,
        best_logf0_rmse: None,
        best_store: None,
        rows: Vec::new(),
    };
    if let Some(o) = out {
        if o.best().exists() {
            let ck = Checkpoint::read(&o.best())?;
            summary.best_step = ck.header["step"].as_u64();
            summary.best_logf0_rmse = ck.header["eval_logf0_rmse"].as_f64();
        }
    }
    let max = trainer.config.max_steps;
    let interval = trainer.config.eval_interval;
    while trainer.step() < max {
        let report = trainer.train_step()?;
        let step = report.step;
        let due = (interval > 0 && step % interval == 0) || step == max;
        let snapshot = if due && !eval.is_empty() {
            Some(trainer.eval_snapshot(eval)?)
        } else {
            None
        };
        let row = MetricsRow {
            step,
            total: report.loss.total,
            dur_l2: report.loss.duration_l2,
            f0c0_l2: report.loss.f0c0_l2,
            kl: report.loss.kl,
            kl_weight: report.kl_weight,
            grad_norm: report.grad_norm,
            eval: snapshot.clone(),
        };
        on_row(&row);
        if let Some((path, w)) = log.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&row).expect("row serializes")).map_err(|e| Error::io(path.as_path(), e))?;
        }
        summary.rows.push(row);
        if let Some(s) = snapshot {
            let rmse = s.encoded.logf0_rmse;
            if summary.best_logf0_rmse.map_or(true, |b| rmse < b) {
                summary.best_logf0_rmse = Some(rmse);
                summary.best_step = Some(step);
                summary.best_store = Some(trainer.model.store.clone());
                if let Some(o) = out {
                    trainer
                        .model
                        .to_checkpoint(json!({"step": step, "eval_logf0_rmse": rmse}))
                        .write(&o.best())?;
                }
            }
        }
        if due {
            if let Some(o) = out {
                if let Some((path, w)) = log.as_mut() {
                    w.flush().map_err(|e| Error::io(path.as_path(), e))?;
                }
                trainer.checkpoint().write(&o.last())?;
            }
        }
    }
    if let Some((path, w)) = log.as_mut() {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    summary.final_step = trainer.step();
    Ok(summary)
}

/// Loads `last.ckpt` from `dir` when present.
pub fn resume_checkpoint(dir: &Path) -> Result<Option<Checkpoint>> {
    let path = dir.join("last.ckpt");
    if path.exists() {
        Ok(Some(Checkpoint::read(&path)?))
    } else {
        Ok(None)
    }
}
