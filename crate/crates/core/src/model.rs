//! The two trainable models behind one interface, plus checkpoint I/O.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baseline::Baseline;
use crate::compute::{Checkpoint, Graph, ParameterStore, Var};
use crate::config::{BaselineConfig, ChiveConfig, ProsodyNorm};
use crate::decoder::{DecodeVars, Decoder, DurationMode};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linguistic::{ProsodicTargets, UtteranceTree};
use crate::variational::{PosteriorVars, VariationalLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Chive,
    Baseline,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Chive => "chive",
            ModelKind::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chive" => Ok(ModelKind::Chive),
            "baseline" => Ok(ModelKind::Baseline),
            other => Err(Error::Input(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Hierarchical encoder, variational layer and hierarchical decoder.
#[derive(Debug, Clone)]
pub struct Chive {
    pub config: ChiveConfig,
    pub encoder: Encoder,
    pub variational: VariationalLayer,
    pub decoder: Decoder,
}

impl Chive {
    pub fn new(store: &mut ParameterStore, config: ChiveConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = Encoder::new(store, &config, rng)?;
        let variational =
            VariationalLayer::new(store, "variational", encoder.summary_dim(), config.latent_dim, rng)?;
        let decoder = Decoder::new(store, &config, rng)?;
        Ok(Chive {
            config,
            encoder,
            variational,
            decoder,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Architecture {
    Chive(Chive),
    Baseline(Baseline, BaselineConfig),
}

/// A model and its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Architecture,
    pub store: ParameterStore,
}

impl Model {
    pub fn chive(config: ChiveConfig, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chive = Chive::new(&mut store, config, &mut rng)?;
        Ok(Model {
            arch: Architecture::Chive(chive),
            store,
        })
    }

    pub fn baseline(config: BaselineConfig, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Baseline::new(&mut store, &config, &mut rng)?;
        Ok(Model {
            arch: Architecture::Baseline(b, config),
            store,
        })
    }

    /// Baseline whose parameter count is closest to that of a CHiVE model
    /// with `config`, with the same latent width.
    pub fn matched_baseline_config(config: &ChiveConfig) -> Result<BaselineConfig> {
        let target = Model::chive(*config, 0)?.parameter_count() as i64;
        let mut best: Option<(i64, BaselineConfig)> = None;
        for hidden in 1..=1024 {
            let mut candidate = BaselineConfig::new(config.features, hidden);
            candidate.latent_dim = config.latent_dim;
            candidate.layers = config.layers;
            candidate.prosody_norm = config.prosody_norm;
            let diff = Model::baseline(candidate, 0)?.parameter_count() as i64 - target;
            if best.as_ref().map_or(true, |(d, _)| diff.abs() < d.abs()) {
                best = Some((diff, candidate));
            }
            if diff > 0 {
                break;
            }
        }
        Ok(best.expect("at least one candidate").1)
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Architecture::Chive(_) => ModelKind::Chive,
            Architecture::Baseline(..) => ModelKind::Baseline,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match &self.arch {
            Architecture::Chive(c) => c.config.latent_dim,
            Architecture::Baseline(_, c) => c.latent_dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Posterior over the sentence prosody embedding given a reference.
    pub fn posterior(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        targets: &ProsodicTargets,
    ) -> Result<PosteriorVars> {
        match &self.arch {
            Architecture::Chive(c) => {
                let (summary, _) = c.encoder.encode(g, tree, targets)?;
                c.variational.project(g, summary)
            }
            Architecture::Baseline(b, _) => Ok(b.encode(g, tree, targets)?.0),
        }
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        embedding: Var,
        mode: DurationMode,
    ) -> Result<DecodeVars> {
        match &self.arch {
            Architecture::Chive(c) => Ok(c.decoder.decode(g, tree, embedding, mode)?.0),
            Architecture::Baseline(b, _) => Ok(b.decode(g, tree, embedding, mode)?.0),
        }
    }

    /// Sets the output-head biases to corpus means so training starts from
    /// the right operating point.
    pub fn init_output_biases(&mut self, log_f0: f64, c0: f64, duration: f64) {
        let heads = match &self.arch {
            Architecture::Chive(c) => [
                (c.decoder.f0_out.b, log_f0),
                (c.decoder.c0_out.b, c0),
                (c.decoder.duration_out.b, duration),
            ],
            Architecture::Baseline(b, _) => [
                (b.f0_out.b, log_f0),
                (b.c0_out.b, c0),
                (b.duration_out.b, duration),
            ],
        };
        for (id, v) in heads {
            self.store.get_mut(id).fill(v);
        }
    }

    pub fn prosody_norm(&self) -> ProsodyNorm {
        match &self.arch {
            Architecture::Chive(c) => c.config.prosody_norm,
            Architecture::Baseline(_, c) => c.prosody_norm,
        }
    }

    /// Sets the standardisation applied to reference prosody in the encoder.
    pub fn set_prosody_norm(&mut self, norm: ProsodyNorm) {
        match &mut self.arch {
            Architecture::Chive(c) => {
                c.config.prosody_norm = norm;
                c.encoder.prosody_norm = norm;
            }
            Architecture::Baseline(b, c) => {
                c.prosody_norm = norm;
                b.prosody_norm = norm;
            }
        }
    }

    /// Initial posterior log-variance, before any input dependence.
    pub fn init_posterior_log_var(&mut self, value: f64) {
        match &self.arch {
            Architecture::Chive(c) => c.variational.set_log_var_bias(&mut self.store, value),
            Architecture::Baseline(b, _) => b.variational.set_log_var_bias(&mut self.store, value),
        }
    }

    /// Weights of the scalar readouts and the posterior projection (with its bias).
    pub fn output_head_weights(&self) -> Vec<crate::compute::ParamId> {
        match &self.arch {
            Architecture::Chive(c) => vec![
                c.decoder.f0_out.w,
                c.decoder.c0_out.w,
                c.decoder.duration_out.w,
                c.variational.projection.w,
                c.variational.projection.b,
            ],
            Architecture::Baseline(b, _) => vec![
                b.f0_out.w,
                b.c0_out.w,
                b.duration_out.w,
                b.variational.projection.w,
                b.variational.projection.b,
            ],
        }
    }

    pub fn header(&self) -> serde_json::Value {
        match &self.arch {
            Architecture::Chive(c) => json!({"model": ModelKind::Chive, "config": c.config}),
            Architecture::Baseline(_, c) => json!({"model": ModelKind::Baseline, "config": c}),
        }
    }

    /// Builds an untrained model from a checkpoint header.
    pub fn from_header(header: &serde_json::Value) -> Result<Self> {
        let kind: ModelKind = serde_json::from_value(header["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad model tag: {e}")))?;
        let config = header["config"].clone();
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("bad model config: {e}"));
        match kind {
            ModelKind::Chive => Model::chive(serde_json::from_value(config).map_err(bad)?, 0),
            ModelKind::Baseline => Model::baseline(serde_json::from_value(config).map_err(bad)?, 0),
        }
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut header = self.header();
        if let serde_json::Value::Object(map) = extra {
            for (k, v) in map {
                header[k] = v;
            }
        }
        let mut ck = Checkpoint::from_store(header, &self.store);
        for (name, _) in &mut ck.tensors {
            *name = format!("param/{name}");
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Model::from_header(&ck.header)?;
        let stored = ck.store_with_prefix("param/")?;
        model.store.load_from(&stored)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint(json!({})).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_checkpoint(&Checkpoint::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linguistic::tests::two_word_tree;

    #[test]
    fn checkpoint_round_trip_restores_parameters() {
        let (tree, _) = two_word_tree();
        let dims = tree.feature_dims().unwrap();
        for model in [
            Model::chive(ChiveConfig::toy(dims), 5).unwrap(),
            Model::baseline(BaselineConfig::new(dims, 10), 5).unwrap(),
        ] {
            let ck = Checkpoint::from_bytes(&model.to_checkpoint(json!({"step": 7})).to_bytes()).unwrap();
            assert_eq!(ck.header["step"], 7);
            let back = Model::from_checkpoint(&ck).unwrap();
            assert_eq!(back.kind(), model.kind());
            assert_eq!(back.store, model.store);
        }
    }

    #[test]
    fn matched_baseline_is_within_ten_percent() {
        let (tree, _) = two_word_tree();
        let config = ChiveConfig::new(tree.feature_dims().unwrap());
        let chive = Model::chive(config, 1).unwrap().parameter_count() as f64;
        let base = Model::baseline(Model::matched_baseline_config(&config).unwrap(), 1)
            .unwrap()
            .parameter_count() as f64;
        assert!((base / chive - 1.0).abs() <= 0.1, "{base} vs {chive}");
    }

    #[test]
    fn parameter_names_have_one_owner_prefix() {
        let (tree, _) = two_word_tree();
        let model = Model::chive(ChiveConfig::new(tree.feature_dims().unwrap()), 1).unwrap();
        let owners = model.store.counts_by_prefix(1);
        assert_eq!(
            owners.keys().cloned().collect::<Vec<_>>(),
            vec!["decoder", "encoder", "variational"]
        );
    }
}
