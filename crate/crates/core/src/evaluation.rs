//! Inference, objective metrics, the embedding-ablation ordering and style
//! transfer analysis.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compute::Graph;
use crate::corpus::{CorpusItem, OFFSET_GAIN};
use crate::decoder::{DurationMode, ProsodicPrediction};
use crate::error::{Error, Result};
use crate::linguistic::{ProsodicTargets, UtteranceTree, FRAME_SHIFT_MS};
use crate::model::Model;
use crate::parallel::par_map;
use crate::variational::{standard_normal, GaussianPosterior, SentenceProsodyEmbedding};

/// Where the sentence prosody embedding comes from at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EmbeddingSource {
    /// Posterior mean of the utterance's own reference prosody.
    Encoded,
    /// The prior mean.
    Zero,
    /// One standard normal draw per utterance.
    Random { seed: u64 },
}

impl std::fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmbeddingSource::Encoded => f.write_str("encoded"),
            EmbeddingSource::Zero => f.write_str("zero"),
            EmbeddingSource::Random { seed } => write!(f, "random(seed={seed})"),
        }
    }
}

/// Posterior of a reference utterance, evaluated without sampling.
pub fn posterior(model: &Model, tree: &UtteranceTree, targets: &ProsodicTargets) -> Result<GaussianPosterior> {
    let mut g = Graph::new(&model.store);
    let post = model.posterior(&mut g, tree, targets)?;
    Ok(post.value(&g))
}

/// Decodes prosody for `tree` conditioned on `embedding`.
pub fn predict(
    model: &Model,
    tree: &UtteranceTree,
    embedding: &SentenceProsodyEmbedding,
    mode: DurationMode,
) -> Result<ProsodicPrediction> {
    if embedding.dim() != model.latent_dim() {
        return Err(Error::dim("embedding", model.latent_dim(), embedding.dim()));
    }
    let mut g = Graph::new(&model.store);
    let s = g.input(embedding.0.clone());
    let out = model.decode(&mut g, tree, s, mode)?;
    if let Some(v) = g.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "decoding {}: node {v:?} is not finite",
            tree.utterance_id
        )));
    }
    Ok(out.value(&g))
}

/// Deterministic per-utterance random embedding.
pub fn random_embedding(seed: u64, index: usize, dim: usize) -> SentenceProsodyEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    SentenceProsodyEmbedding(standard_normal(&mut rng, dim))
}

/// Embedding for corpus item `index` under `source`.
pub fn embedding_for(
    model: &Model,
    source: EmbeddingSource,
    item: &CorpusItem,
    index: usize,
) -> Result<SentenceProsodyEmbedding> {
    let dim = model.latent_dim();
    Ok(match source {
        EmbeddingSource::Encoded => SentenceProsodyEmbedding(posterior(model, &item.tree, &item.targets)?.mu),
        EmbeddingSource::Zero => SentenceProsodyEmbedding::zeros(dim),
        EmbeddingSource::Random { seed } => random_embedding(seed, index, dim),
    })
}

/// Error sums for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UtteranceErrors {
    pub frames: usize,
    pub phones: usize,
    pub log_f0_sq: f64,
    pub f0_abs_hz: f64,
    pub c0_sq: f64,
    pub duration_sq: f64,
    pub duration_abs: f64,
}

impl UtteranceErrors {
    pub fn add(&mut self, o: &UtteranceErrors) {
        self.frames += o.frames;
        self.phones += o.phones;
        self.log_f0_sq += o.log_f0_sq;
        self.f0_abs_hz += o.f0_abs_hz;
        self.c0_sq += o.c0_sq;
        self.duration_sq += o.duration_sq;
        self.duration_abs += o.duration_abs;
    }
}

/// Compares a teacher-forced prediction to targets. Duration errors use the
/// unrounded predictions.
pub fn utterance_errors(pred: &ProsodicPrediction, targets: &ProsodicTargets) -> Result<UtteranceErrors> {
    if pred.log_f0.len() != targets.frame_count() || pred.c0.len() != targets.frame_count() {
        return Err(Error::dim("prediction frames", targets.frame_count(), pred.log_f0.len()));
    }
    if pred.durations_raw.len() != targets.durations.len() {
        return Err(Error::dim("prediction phones", targets.durations.len(), pred.durations_raw.len()));
    }
    let mut e = UtteranceErrors {
        frames: targets.frame_count(),
        phones: targets.durations.len(),
        ..Default::default()
    };
    for t in 0..e.frames {
        let d = pred.log_f0[t] - targets.log_f0[t];
        e.log_f0_sq += d * d;
        e.f0_abs_hz += (pred.log_f0[t].exp() - targets.log_f0[t].exp()).abs();
        let c = pred.c0[t] - targets.c0[t];
        e.c0_sq += c * c;
    }
    for (p, &d) in pred.durations_raw.iter().zip(&targets.durations) {
        let diff = p - d as f64;
        e.duration_sq += diff * diff;
        e.duration_abs += diff.abs();
    }
    Ok(e)
}

/// Pooled objective metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub logf0_rmse: f64,
    pub f0_abs_hz: f64,
    pub c0_rmse: f64,
    pub dur_rmse_frames: f64,
    pub dur_abs_ms: f64,
    pub utterances: usize,
}

impl MetricReport {
    pub fn from_errors<'a>(errors: impl IntoIterator<Item = &'a UtteranceErrors>) -> Result<Self> {
        let mut sum = UtteranceErrors::default();
        let mut n = 0;
        for e in errors {
            sum.add(e);
            n += 1;
        }
        if n == 0 || sum.frames == 0 || sum.phones == 0 {
            return Err(Error::Input("no utterances to evaluate".into()));
        }
        let frames = sum.frames as f64;
        let phones = sum.phones as f64;
        Ok(MetricReport {
            logf0_rmse: (sum.log_f0_sq / frames).sqrt(),
            f0_abs_hz: sum.f0_abs_hz / frames,
            c0_rmse: (sum.c0_sq / frames).sqrt(),
            dur_rmse_frames: (sum.duration_sq / phones).sqrt(),
            dur_abs_ms: sum.duration_abs / phones * FRAME_SHIFT_MS,
            utterances: n,
        })
    }

    /// One-line human-readable summary.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<18} {:>10.5} {:>10.3} {:>10.5} {:>10.4} {:>10.3} {:>6}",
            self.logf0_rmse, self.f0_abs_hz, self.c0_rmse, self.dur_rmse_frames, self.dur_abs_ms, self.utterances
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<18} {:>10} {:>10} {:>10} {:>10} {:>10} {:>6}",
            "source", "logf0_rmse", "f0_abs_hz", "c0_rmse", "dur_rmse", "dur_abs_ms", "utts"
        )
    }
}

/// Metrics plus the per-utterance sums they were pooled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub source: EmbeddingSource,
    pub report: MetricReport,
    pub per_utterance: Vec<UtteranceErrors>,
}

/// Teacher-forced evaluation of `items` with embeddings from `source`.
pub fn evaluate(model: &Model, items: &[CorpusItem], source: EmbeddingSource, jobs: usize) -> Result<Evaluation> {
    let per_utterance = par_map(items, jobs, |i, item| {
        let emb = embedding_for(model, source, item, i)?;
        let pred = predict(model, &item.tree, &emb, DurationMode::TeacherForced)?;
        utterance_errors(&pred, &item.targets)
    })?;
    let report = MetricReport::from_errors(&per_utterance)?;
    Ok(Evaluation {
        source,
        report,
        per_utterance,
    })
}

fn pooled_logf0_rmse(errors: &[UtteranceErrors], idx: &[usize]) -> f64 {
    let (sq, n) = idx
        .iter()
        .fold((0.0, 0usize), |(s, n), &i| (s + errors[i].log_f0_sq, n + errors[i].frames));
    (sq / n as f64).sqrt()
}

/// Paired bootstrap standard error of `rmse(b) - rmse(a)` in pooled log-F0.
pub fn bootstrap_gap_se(a: &[UtteranceErrors], b: &[UtteranceErrors], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input("bootstrap needs paired, non-empty evaluations".into()));
    }
    if resamples < 2 {
        return Err(Error::Input("bootstrap needs at least 2 resamples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = a.len();
    let mut idx = vec![0usize; n];
    let gaps: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.gen_range(0..n);
            }
            pooled_logf0_rmse(b, &idx) - pooled_logf0_rmse(a, &idx)
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / resamples as f64;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (resamples - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub value: f64,
    pub bootstrap_se: f64,
}

impl Gap {
    /// The gap is positive and exceeds `k` standard errors.
    pub fn significant(&self, k: f64) -> bool {
        self.value > 0.0 && self.value > k * self.bootstrap_se
    }
}

/// log-F0 RMSE under encoded, zero and random embeddings, with the two gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub encoded: MetricReport,
    pub zero: MetricReport,
    pub random: MetricReport,
    pub zero_minus_encoded: Gap,
    pub random_minus_zero: Gap,
    /// Both gaps are positive and larger than three standard errors.
    pub ordered: bool,
    /// Set when the ordering does not hold, which indicates an undertrained
    /// model rather than a usable result.
    pub not_converged: bool,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

pub fn ordering_report(model: &Model, items: &[CorpusItem], random_seed: u64, jobs: usize) -> Result<OrderingReport> {
    let enc = evaluate(model, items, EmbeddingSource::Encoded, jobs)?;
    let zero = evaluate(model, items, EmbeddingSource::Zero, jobs)?;
    let random = evaluate(model, items, EmbeddingSource::Random { seed: random_seed }, jobs)?;
    let zero_minus_encoded = Gap {
        value: zero.report.logf0_rmse - enc.report.logf0_rmse,
        bootstrap_se: bootstrap_gap_se(&enc.per_utterance, &zero.per_utterance, BOOTSTRAP_RESAMPLES, random_seed ^ 1)?,
    };
    let random_minus_zero = Gap {
        value: random.report.logf0_rmse - zero.report.logf0_rmse,
        bootstrap_se: bootstrap_gap_se(&zero.per_utterance, &random.per_utterance, BOOTSTRAP_RESAMPLES, random_seed ^ 2)?,
    };
    let ordered = zero_minus_encoded.significant(3.0) && random_minus_zero.significant(3.0);
    Ok(OrderingReport {
        encoded: enc.report,
        zero: zero.report,
        random: random.report,
        zero_minus_encoded,
        random_minus_zero,
        ordered,
        not_converged: !ordered,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input("correlation needs two equal-length series of length >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Input("correlation of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub reference: usize,
    pub target: usize,
    /// Pitch offset planted in the reference.
    pub planted: f64,
    /// Mean log-F0 shift of the target relative to its zero-embedding decode.
    pub induced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pairs: Vec<TransferPair>,
    pub correlation: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Transfers the posterior mean of random references onto random distinct
/// targets and correlates the induced mean log-F0 shift with the reference's
/// planted offset.
pub fn transfer_correlation(
    model: &Model,
    items: &[CorpusItem],
    pairs: usize,
    seed: u64,
    jobs: usize,
) -> Result<TransferReport> {
    if items.len() < 2 {
        return Err(Error::Input("transfer needs at least two utterances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..items.len()).collect();
    let chosen: Vec<(usize, usize)> = (0..pairs)
        .map(|_| {
            let picked: Vec<usize> = all.choose_multiple(&mut rng, 2).copied().collect();
            (picked[0], picked[1])
        })
        .collect();
    let zero = SentenceProsodyEmbedding::zeros(model.latent_dim());
    let out = par_map(&chosen, jobs, |_, &(r, t)| {
        let reference = &items[r];
        let target = &items[t];
        let mu = SentenceProsodyEmbedding(posterior(model, &reference.tree, &reference.targets)?.mu);
        let moved = predict(model, &target.tree, &mu, DurationMode::TeacherForced)?;
        let neutral = predict(model, &target.tree, &zero, DurationMode::TeacherForced)?;
        Ok(TransferPair {
            reference: r,
            target: t,
            planted: OFFSET_GAIN * reference.style.z_offset,
            induced: mean(&moved.log_f0) - mean(&neutral.log_f0),
        })
    })?;
    let x: Vec<f64> = out.iter().map(|p| p.planted).collect();
    let y: Vec<f64> = out.iter().map(|p| p.induced).collect();
    Ok(TransferReport {
        correlation: pearson(&x, &y)?,
        pairs: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errs(sq: f64, frames: usize) -> UtteranceErrors {
        UtteranceErrors {
            frames,
            phones: 1,
            log_f0_sq: sq,
            ..Default::default()
        }
    }

    #[test]
    fn metrics_are_pooled_over_frames() {
        let r = MetricReport::from_errors(&[errs(4.0, 1), errs(0.0, 3)]).unwrap();
        assert!((r.logf0_rmse - 1.0).abs() < 1e-15);
        assert_eq!(r.utterances, 2);
    }

    #[test]
    fn errors_from_prediction() {
        let targets = ProsodicTargets {
            log_f0: vec![0.0, 0.0],
            c0: vec![1.0, 1.0],
            durations: vec![2],
        };
        let pred = ProsodicPrediction {
            durations_raw: vec![2.5],
            durations_realized: vec![2],
            log_f0: vec![1.0, 0.0],
            c0: vec![1.0, 0.0],
            mode: DurationMode::TeacherForced,
        };
        let e = utterance_errors(&pred, &targets).unwrap();
        assert_eq!(e.log_f0_sq, 1.0);
        assert!((e.f0_abs_hz - (1f64.exp() - 1.0)).abs() < 1e-12);
        assert_eq!(e.c0_sq, 1.0);
        assert_eq!(e.duration_sq, 0.25);
        let r = MetricReport::from_errors(&[e]).unwrap();
        assert!((r.dur_abs_ms - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_evaluation_is_rejected() {
        assert!(MetricReport::from_errors(&[]).is_err());
    }

    #[test]
    fn pearson_of_linear_series() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -3.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn identical_evaluations_have_zero_gap_se() {
        let a: Vec<_> = (0..10).map(|i| errs(i as f64, 3)).collect();
        assert_eq!(bootstrap_gap_se(&a, &a, 50, 1).unwrap(), 0.0);
        let b: Vec<_> = (0..10).map(|i| errs(2.0 * i as f64 + (i % 3) as f64, 3)).collect();
        assert!(bootstrap_gap_se(&a, &b, 50, 1).unwrap() > 0.0);
    }

    #[test]
    fn random_embeddings_are_reproducible_per_index() {
        assert_eq!(random_embedding(3, 7, 5), random_embedding(3, 7, 5));
        assert_ne!(random_embedding(3, 7, 5), random_embedding(3, 8, 5));
    }
}
