use serde::{Deserialize, Serialize};

use crate::linguistic::{FeatureDims, ProsodicTargets};

/// Affine standardisation of the prosodic encoder inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyNorm {
    pub log_f0_mean: f64,
    pub log_f0_std: f64,
    pub c0_mean: f64,
    pub c0_std: f64,
}

impl Default for ProsodyNorm {
    fn default() -> Self {
        ProsodyNorm {
            log_f0_mean: 0.0,
            log_f0_std: 1.0,
            c0_mean: 0.0,
            c0_std: 1.0,
        }
    }
}

impl ProsodyNorm {
    /// Frame-pooled mean and standard deviation over `targets`. A constant
    /// channel keeps unit scale.
    pub fn fit<'a>(targets: impl IntoIterator<Item = &'a ProsodicTargets>) -> Option<Self> {
        let (mut n, mut f, mut ff, mut c, mut cc) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for t in targets {
            for (a, b) in t.log_f0.iter().zip(&t.c0) {
                n += 1;
                f += a;
                ff += a * a;
                c += b;
                cc += b * b;
            }
        }
        if n == 0 {
            return None;
        }
        let n = n as f64;
        let std = |s: f64, ss: f64| {
            let v = (ss / n - (s / n) * (s / n)).max(0.0).sqrt();
            if v > 1e-12 {
                v
            } else {
                1.0
            }
        };
        Some(ProsodyNorm {
            log_f0_mean: f / n,
            log_f0_std: std(f, ff),
            c0_mean: c / n,
            c0_std: std(c, cc),
        })
    }

    pub fn apply(&self, log_f0: f64, c0: f64) -> Vec<f64> {
        vec![
            (log_f0 - self.log_f0_mean) / self.log_f0_std,
            (c0 - self.c0_mean) / self.c0_std,
        ]
    }
}

/// Sizes of the hierarchical model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiveConfig {
    pub features: FeatureDims,
    /// Width of the sentence prosody embedding.
    pub latent_dim: usize,
    /// Hidden width of the syllable- and phone-rate stacks.
    pub hidden: usize,
    /// Hidden width of the frame-rate stacks (encoder frames, c0, F0).
    pub frame_hidden: usize,
    /// Hidden width of the single-layer duration head.
    pub duration_hidden: usize,
    /// Layers per recurrent stack (the duration head always has one).
    pub layers: usize,
    #[serde(default)]
    pub prosody_norm: ProsodyNorm,
}

impl ChiveConfig {
    pub fn new(features: FeatureDims) -> Self {
        ChiveConfig {
            features,
            latent_dim: 256,
            hidden: 32,
            frame_hidden: 16,
            duration_hidden: 16,
            layers: 2,
            prosody_norm: ProsodyNorm::default(),
        }
    }

    /// Small configuration for overfitting and gradient checks.
    pub fn toy(features: FeatureDims) -> Self {
        ChiveConfig {
            features,
            latent_dim: 8,
            hidden: 16,
            frame_hidden: 16,
            duration_hidden: 16,
            layers: 2,
            prosody_norm: ProsodyNorm::default(),
        }
    }
}

/// Sizes of the frame-rate comparison model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub features: FeatureDims,
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    #[serde(default)]
    pub prosody_norm: ProsodyNorm,
}

impl BaselineConfig {
    pub fn new(features: FeatureDims, hidden: usize) -> Self {
        BaselineConfig {
            features,
            latent_dim: 256,
            hidden,
            layers: 2,
            prosody_norm: ProsodyNorm::default(),
        }
    }
}
