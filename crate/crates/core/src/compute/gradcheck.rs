use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub worst: Option<CoordinateCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateCheck {
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `loss_fn` against sixth-order central
/// differences, `(45[f(x+h) - f(x-h)] - 9[f(x+2h) - f(x-2h)] + f(x+3h) - f(x-3h)) / 60h`,
/// on `samples` randomly chosen parameter coordinates.
///
/// `loss_fn` must be deterministic: any sampling noise has to be supplied as
/// a fixed input rather than drawn inside the closure.
pub fn grad_check<F>(
    store: &ParameterStore,
    loss_fn: F,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = loss_fn(&mut g)?;
        let v = g.scalar(loss);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("loss evaluated to {v}")))
        }
    };

    let mut grads = store.zero_grads();
    {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {v}")));
        }
        g.backward(loss, &mut grads);
    }

    let candidates: Vec<_> = store.iter().filter(|(_, _, t)| !t.is_empty()).map(|(id, _, _)| id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    for _ in 0..samples {
        let id = candidates[rng.gen_range(0..candidates.len())];
        let index = rng.gen_range(0..store.get(id).len());
        let original = store.get(id).data()[index];

        let mut at = |offset: f64| -> Result<f64> {
            probe.get_mut(id).data_mut()[index] = original + offset;
            eval(&probe)
        };
        let (p3, p2, p1) = (at(3.0 * epsilon)?, at(2.0 * epsilon)?, at(epsilon)?);
        let (m1, m2, m3) = (at(-epsilon)?, at(-2.0 * epsilon)?, at(-3.0 * epsilon)?);
        probe.get_mut(id).data_mut()[index] = original;

        let numeric = (45.0 * (p1 - m1) - 9.0 * (p2 - m2) + (p3 - m3)) / (60.0 * epsilon);
        let analytic = grads.get(id).data()[index];
        let err = relative_error(analytic, numeric);
        report.coordinates += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(CoordinateCheck {
                parameter: store.name(id).to_string(),
                index,
                analytic,
                numeric,
                relative_error: err,
            });
        }
    }
    Ok(report)
}
