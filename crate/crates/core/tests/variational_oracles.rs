//! Closed-form KL against a Monte-Carlo estimate, and the deterministic limit
//! of reparameterised sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use chive::variational::{kl_divergence, sample, GaussianPosterior};

const POSTERIORS: usize = 50;
const SAMPLES: usize = 1_000_000;
const DIM: usize = 6;

fn random_posterior(rng: &mut ChaCha8Rng, dim: usize) -> GaussianPosterior {
    GaussianPosterior {
        mu: (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        log_var: (0..dim).map(|_| rng.gen_range(-1.5..1.0)).collect(),
    }
}

/// Mean of log q(s) - log p(s) over draws s ~ q; the 2*pi terms cancel.
fn monte_carlo_kl(post: &GaussianPosterior, rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let sigma: Vec<f64> = post.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let mut total = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for k in 0..post.mu.len() {
            let e: f64 = rng.sample(StandardNormal);
            let s = post.mu[k] + sigma[k] * e;
            log_ratio += -0.5 * (e * e + post.log_var[k]) + 0.5 * s * s;
        }
        total += log_ratio;
    }
    total / n as f64
}

#[test]
fn closed_form_kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..POSTERIORS {
        let post = random_posterior(&mut rng, DIM);
        let exact = kl_divergence(&post);
        let estimate = monte_carlo_kl(&post, &mut rng, SAMPLES);
        let rel = (estimate - exact).abs() / exact;
        worst = worst.max(rel);
        assert!(rel < 0.01, "kl {exact} vs monte carlo {estimate}: {rel}");
    }
    assert!(worst > 0.0);
}

#[test]
fn kl_vanishes_only_at_the_prior() {
    let prior = GaussianPosterior::standard(DIM);
    assert_eq!(kl_divergence(&prior), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..POSTERIORS {
        assert!(kl_divergence(&random_posterior(&mut rng, DIM)) > 0.0);
    }
}

#[test]
fn vanishing_variance_sample_is_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..POSTERIORS {
        let mut post = random_posterior(&mut rng, 256);
        post.log_var.iter_mut().for_each(|lv| *lv = -80.0);
        let noise: Vec<f64> = (0..256).map(|_| rng.sample(StandardNormal)).collect();
        let s = sample(&post, &noise).unwrap();
        for (a, b) in s.0.iter().zip(&post.mu) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}
