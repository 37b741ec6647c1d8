//! Variational bottleneck: posterior projection, reparameterised sampling and
//! the KL divergence to the standard normal prior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compute::{Affine, Graph, ParameterStore, Var};
use crate::error::{Error, Result};

/// Diagonal Gaussian with log-variance parameterisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianPosterior {
    pub fn standard(dim: usize) -> Self {
        GaussianPosterior {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// The latent vector conditioning the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceProsodyEmbedding(pub Vec<f64>);

impl SentenceProsodyEmbedding {
    pub fn zeros(dim: usize) -> Self {
        SentenceProsodyEmbedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("embedding serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Vec<f64> = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding component".into()));
        }
        Ok(SentenceProsodyEmbedding(v))
    }
}

/// Standard-normal noise of the given width.
pub fn standard_normal<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Tape nodes of a posterior.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mu: Var,
    pub log_var: Var,
}

impl PosteriorVars {
    pub fn value(&self, g: &Graph) -> GaussianPosterior {
        GaussianPosterior {
            mu: g.value(self.mu).to_vec(),
            log_var: g.value(self.log_var).to_vec(),
        }
    }
}

/// One affine layer whose output is split into mean and log-variance halves.
#[derive(Debug, Clone)]
pub struct VariationalLayer {
    pub projection: Affine,
    pub latent_dim: usize,
}

impl VariationalLayer {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        summary_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let projection = Affine::new(store, &format!("{name}.projection"), summary_dim, 2 * latent_dim, rng)?;
        Ok(VariationalLayer {
            projection,
            latent_dim,
        })
    }

    /// Sets the log-variance half of the projection bias.
    pub fn set_log_var_bias(&self, store: &mut ParameterStore, value: f64) {
        let b = store.get_mut(self.projection.b).data_mut();
        for v in &mut b[self.latent_dim..] {
            *v = value;
        }
    }

    pub fn project(&self, g: &mut Graph, summary: Var) -> Result<PosteriorVars> {
        if g.dim(summary) != self.projection.input_dim {
            return Err(Error::dim("variational projection", self.projection.input_dim, g.dim(summary)));
        }
        let out = self.projection.apply(g, summary);
        let mu = g.slice(out, 0, self.latent_dim);
        let log_var = g.slice(out, self.latent_dim, self.latent_dim);
        Ok(PosteriorVars { mu, log_var })
    }
}

/// `mu + exp(log_var / 2) * noise` on the tape.
pub fn sample_on(g: &mut Graph, post: PosteriorVars, noise: &[f64]) -> Var {
    let half = g.scale(post.log_var, 0.5);
    let sigma = g.exp(half);
    let eps = g.input(noise.to_vec());
    let scaled = g.mul(sigma, eps);
    g.add(post.mu, scaled)
}

/// `sum_d 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)` on the tape.
pub fn kl_on(g: &mut Graph, post: PosteriorVars) -> Var {
    let mu_sq = g.sum_squares(post.mu);
    let var_m1 = g.exp_m1(post.log_var);
    let excess = g.sub(var_m1, post.log_var);
    let excess_sum = g.sum(excess);
    let total = g.add(mu_sq, excess_sum);
    g.scale(total, 0.5)
}

pub fn sample(post: &GaussianPosterior, noise: &[f64]) -> Result<SentenceProsodyEmbedding> {
    if noise.len() != post.dim() {
        return Err(Error::dim("sample noise", post.dim(), noise.len()));
    }
    Ok(SentenceProsodyEmbedding(
        post.mu
            .iter()
            .zip(&post.log_var)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect(),
    ))
}

pub fn kl_divergence(post: &GaussianPosterior) -> f64 {
    post.mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp_m1() - lv))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::{grad_check, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(summary: usize, latent: usize) -> (ParameterStore, VariationalLayer) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = VariationalLayer::new(&mut store, "variational", summary, latent, &mut rng).unwrap();
        (store, l)
    }

    #[test]
    fn zero_projection_gives_standard_normal() {
        let (mut store, l) = layer(32, 256);
        store.get_mut(l.projection.w).fill(0.0);
        let mut g = Graph::new(&store);
        let s = g.input(vec![0.3; 32]);
        let post = l.project(&mut g, s).unwrap().value(&g);
        assert_eq!(post.mu, vec![0.0; 256]);
        assert_eq!(post.log_var, vec![0.0; 256]);
        assert_eq!(post.sigma(), vec![1.0; 256]);
        assert_eq!(kl_divergence(&post), 0.0);
    }

    #[test]
    fn projection_output_is_twice_latent() {
        let (store, l) = layer(32, 256);
        assert_eq!(store.get(l.projection.w).shape(), (512, 32));
        let mut g = Graph::new(&store);
        let s = g.input(vec![0.1; 32]);
        let p = l.project(&mut g, s).unwrap();
        assert_eq!(g.dim(p.mu) + g.dim(p.log_var), 512);
    }

    #[test]
    fn projection_without_bias_is_linear() {
        let (store, l) = layer(6, 4);
        let x: Vec<f64> = (0..6).map(|k| 0.2 * k as f64 - 0.5).collect();
        let run = |scale: f64| {
            let mut g = Graph::new(&store);
            let s = g.input(x.iter().map(|v| v * scale).collect());
            let p = l.project(&mut g, s).unwrap().value(&g);
            [p.mu, p.log_var].concat()
        };
        for (a, b) in run(1.0).iter().zip(run(3.0)) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_summary_width_is_rejected() {
        let (store, l) = layer(6, 4);
        let mut g = Graph::new(&store);
        let s = g.input(vec![0.0; 5]);
        assert!(matches!(l.project(&mut g, s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let post = GaussianPosterior {
            mu: vec![0.4, -1.3, 2.0],
            log_var: vec![-60.0; 3],
        };
        let s = sample(&post, &[1.5, -2.0, 0.7]).unwrap();
        for (a, b) in s.0.iter().zip(&post.mu) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(sample(&post, &[0.0; 3]).unwrap().0, post.mu);
    }

    #[test]
    fn sample_is_linear_in_noise() {
        let post = GaussianPosterior {
            mu: vec![0.5, -0.5],
            log_var: vec![0.3, -1.1],
        };
        let a = sample(&post, &[1.0, 2.0]).unwrap().0;
        let b = sample(&post, &[3.0, 6.0]).unwrap().0;
        for k in 0..2 {
            assert!(((b[k] - post.mu[k]) - 3.0 * (a[k] - post.mu[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_mean_matches_mu() {
        let post = GaussianPosterior {
            mu: vec![0.7, -1.2, 0.0, 3.0],
            log_var: vec![0.0, 0.5, -1.0, 1.2],
        };
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sums = vec![0.0; 4];
        for _ in 0..n {
            let noise = standard_normal(&mut rng, 4);
            for (s, v) in sums.iter_mut().zip(sample(&post, &noise).unwrap().0) {
                *s += v;
            }
        }
        for ((s, m), sd) in sums.iter().zip(&post.mu).zip(post.sigma()) {
            let mean = s / n as f64;
            assert!((mean - m).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {m}");
        }
    }

    #[test]
    fn kl_closed_form_values() {
        let unit_shift = GaussianPosterior {
            mu: vec![1.0],
            log_var: vec![0.0],
        };
        assert_eq!(kl_divergence(&unit_shift), 0.5);
        assert_eq!(kl_divergence(&GaussianPosterior::standard(256)), 0.0);
    }

    #[test]
    fn kl_on_tape_matches_closed_form_and_gradient() {
        let mut store = ParameterStore::new();
        let mu = store
            .register("v.mu", Tensor::vector(vec![0.3, -1.2, 0.8]))
            .unwrap();
        let lv = store
            .register("v.lv", Tensor::vector(vec![-0.4, 0.9, 0.1]))
            .unwrap();
        let post = GaussianPosterior {
            mu: store.get(mu).data().to_vec(),
            log_var: store.get(lv).data().to_vec(),
        };
        let mut g = Graph::new(&store);
        let m = g.param(mu);
        let l = g.param(lv);
        let kl = kl_on(&mut g, PosteriorVars { mu: m, log_var: l });
        assert!((g.scalar(kl) - kl_divergence(&post)).abs() < 1e-14);

        let report = grad_check(
            &store,
            |g| {
                let m = g.param(mu);
                let l = g.param(lv);
                Ok(kl_on(g, PosteriorVars { mu: m, log_var: l }))
            },
            1e-6,
            30,
            3,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-7, "{report:?}");
    }

    #[test]
    fn embedding_json_round_trip() {
        let e = SentenceProsodyEmbedding(vec![0.1, -2.5, 1e-300]);
        assert_eq!(SentenceProsodyEmbedding::from_json(&e.to_json()).unwrap(), e);
        assert!(SentenceProsodyEmbedding::from_json("[1.0,").is_err());
    }
}
