use serde::{Deserialize, Serialize};

use crate::compute::{Graph, ParameterStore, Var};
use crate::decoder::{DecodeVars, DurationMode, ProsodicPrediction};
use crate::error::{Error, Result};
use crate::linguistic::ProsodicTargets;
use crate::variational::{kl_on, GaussianPosterior, PosteriorVars};

/// Weights of the duration, F0/c0 and KL terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub duration: f64,
    pub f0c0: f64,
    pub kl: f64,
    /// Steps over which the KL weight ramps linearly from zero to `kl`.
    pub kl_warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            duration: 1.0,
            f0c0: 1.0,
            kl: 1.0,
            kl_warmup_steps: 2000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("duration", self.duration), ("f0c0", self.f0c0), ("kl", self.kl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// KL weight in effect at `step`.
    pub fn kl_weight_at(&self, step: u64) -> f64 {
        if self.kl_warmup_steps == 0 {
            self.kl
        } else {
            self.kl * (step as f64 / self.kl_warmup_steps as f64).min(1.0)
        }
    }

    /// Copy with the KL weight ramped to `step`.
    pub fn at_step(&self, step: u64) -> LossWeights {
        LossWeights {
            kl: self.kl_weight_at(step),
            kl_warmup_steps: 0,
            ..*self
        }
    }
}

/// Unweighted components and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub duration_l2: f64,
    pub f0c0_l2: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub duration_l2: Var,
    pub f0c0_l2: Var,
    pub kl: Var,
}

impl LossVars {
    pub fn value(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            total: g.scalar(self.total),
            duration_l2: g.scalar(self.duration_l2),
            f0c0_l2: g.scalar(self.f0c0_l2),
            kl: g.scalar(self.kl),
        }
    }
}

fn check_lengths(durations: usize, frames: usize, targets: &ProsodicTargets) -> Result<()> {
    if durations != targets.durations.len() {
        return Err(Error::dim("duration loss", targets.durations.len(), durations));
    }
    if frames != targets.frame_count() {
        return Err(Error::dim("frame loss (teacher forcing broken?)", targets.frame_count(), frames));
    }
    Ok(())
}

/// Weighted objective on the tape: duration L2 over phones, F0 and c0 L2
/// over frames, and the KL divergence to the standard normal prior. The
/// weights are used as given; apply any warm-up beforehand.
pub fn loss_on(
    g: &mut Graph,
    decoded: &DecodeVars,
    targets: &ProsodicTargets,
    posterior: PosteriorVars,
    weights: &LossWeights,
) -> Result<LossVars> {
    if decoded.mode != DurationMode::TeacherForced {
        return Err(Error::Input("loss requires a teacher-forced prediction".into()));
    }
    check_lengths(g.dim(decoded.durations_raw), g.dim(decoded.log_f0), targets)?;
    if g.dim(decoded.c0) != targets.frame_count() {
        return Err(Error::dim("c0 loss", targets.frame_count(), g.dim(decoded.c0)));
    }
    let dur_t = g.input(targets.durations.iter().map(|d| *d as f64).collect());
    let f0_t = g.input(targets.log_f0.clone());
    let c0_t = g.input(targets.c0.clone());
    let duration_l2 = g.squared_distance(decoded.durations_raw, dur_t);
    let f0 = g.squared_distance(decoded.log_f0, f0_t);
    let c0 = g.squared_distance(decoded.c0, c0_t);
    let f0c0_l2 = g.add(f0, c0);
    let kl = kl_on(g, posterior);
    let terms = [
        g.scale(duration_l2, weights.duration),
        g.scale(f0c0_l2, weights.f0c0),
        g.scale(kl, weights.kl),
    ];
    let total = g.add_n(&terms);
    Ok(LossVars {
        total,
        duration_l2,
        f0c0_l2,
        kl,
    })
}

/// Value-level objective, computed through the same tape path.
pub fn loss(
    prediction: &ProsodicPrediction,
    targets: &ProsodicTargets,
    posterior: &GaussianPosterior,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    if prediction.c0.len() != prediction.log_f0.len() {
        return Err(Error::dim("prediction c0", prediction.log_f0.len(), prediction.c0.len()));
    }
    let empty = ParameterStore::new();
    let mut g = Graph::new(&empty);
    let decoded = DecodeVars {
        durations_raw: g.input(prediction.durations_raw.clone()),
        log_f0: g.input(prediction.log_f0.clone()),
        c0: g.input(prediction.c0.clone()),
        durations_realized: prediction.durations_realized.clone(),
        mode: prediction.mode,
    };
    let post = PosteriorVars {
        mu: g.input(posterior.mu.clone()),
        log_var: g.input(posterior.log_var.clone()),
    };
    Ok(loss_on(&mut g, &decoded, targets, post, weights)?.value(&g))
}
