use proptest::prelude::*;

use chive::config::ChiveConfig;
use chive::corpus::{generate, speaker_of, split, CorpusConfig, SPEAKER_BASE_LOG_F0};
use chive::decoder::{round_duration, DurationMode, ProsodicPrediction};
use chive::evaluation::{evaluate, EmbeddingSource};
use chive::linguistic::{ProsodicTargets, UtteranceDocument};
use chive::model::Model;
use chive::training::{loss, LossWeights, TrainConfig, Trainer};
use chive::variational::GaussianPosterior;

fn small(seed: u64, utterances: usize) -> chive::corpus::Corpus {
    generate(&CorpusConfig {
        utterances,
        seed,
        ..CorpusConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_pairs_validate_and_round_trip(seed in any::<u64>(), words in 1usize..8) {
        let corpus = generate(&CorpusConfig {
            utterances: 3,
            seed,
            words: (words, words),
            ..CorpusConfig::default()
        })
        .unwrap();
        for item in &corpus.items {
            prop_assert!(item.tree.validate(Some(&item.targets)).is_ok());
            let t = &item.targets;
            let total: u32 = t.durations.iter().sum();
            prop_assert_eq!(total as usize, t.log_f0.len());
            prop_assert_eq!(t.c0.len(), t.log_f0.len());
            prop_assert!(t.frame_count() >= t.durations.len());
            let doc = UtteranceDocument::new(item.tree.clone(), Some(item.targets.clone()));
            prop_assert_eq!(UtteranceDocument::from_json(&doc.to_json()).unwrap(), doc);
        }
    }

    #[test]
    fn loss_is_the_weighted_sum_of_non_negative_parts(
        frames in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..12),
        durations in proptest::collection::vec((1u32..6, 0.0f64..8.0), 1..5),
        posterior in proptest::collection::vec((-2.0f64..2.0, -3.0f64..2.0), 1..6),
        weights in (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0),
    ) {
        let targets = ProsodicTargets {
            log_f0: frames.iter().map(|f| f.0).collect(),
            c0: frames.iter().map(|f| f.1).collect(),
            durations: durations.iter().map(|d| d.0).collect(),
        };
        let pred = ProsodicPrediction {
            durations_raw: durations.iter().map(|d| d.1).collect(),
            durations_realized: targets.durations.clone(),
            log_f0: frames.iter().map(|f| f.2).collect(),
            c0: frames.iter().map(|f| f.3).collect(),
            mode: DurationMode::TeacherForced,
        };
        let post = GaussianPosterior {
            mu: posterior.iter().map(|p| p.0).collect(),
            log_var: posterior.iter().map(|p| p.1).collect(),
        };
        let w = LossWeights { duration: weights.0, f0c0: weights.1, kl: weights.2, kl_warmup_steps: 0 };
        let l = loss(&pred, &targets, &post, &w).unwrap();

        let dur: f64 = durations.iter().map(|(d, r)| (*d as f64 - r).powi(2)).sum();
        let f0c0: f64 = frames.iter().map(|f| (f.0 - f.2).powi(2) + (f.1 - f.3).powi(2)).sum();
        let kl: f64 = posterior.iter().map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum();
        prop_assert!(l.duration_l2 >= 0.0 && l.f0c0_l2 >= 0.0 && l.kl >= 0.0);
        prop_assert!((l.duration_l2 - dur).abs() <= 1e-12 * dur.max(1.0));
        prop_assert!((l.f0c0_l2 - f0c0).abs() <= 1e-12 * f0c0.max(1.0));
        prop_assert!((l.kl - kl).abs() <= 1e-12 * kl.max(1.0));
        let total = w.duration * l.duration_l2 + w.f0c0 * l.f0c0_l2 + w.kl * l.kl;
        prop_assert!((l.total - total).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn rounded_durations_are_positive_and_nearest(raw in -50.0f64..50.0) {
        let d = round_duration(raw).unwrap();
        prop_assert!(d >= 1);
        if raw >= 0.5 {
            prop_assert!((d as f64 - raw).abs() <= 0.5);
        }
    }

    #[test]
    fn splits_partition_the_corpus(n in 2usize..60, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let corpus = small(1, n);
        match split(&corpus, fraction, seed) {
            Ok(s) => {
                let mut all: Vec<usize> = s.train.iter().chain(&s.eval).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(s.train.len(), (fraction * n as f64).round() as usize);
                prop_assert_eq!(split(&corpus, fraction, seed).unwrap(), s);
            }
            Err(_) => {
                let n_train = (fraction * n as f64).round() as usize;
                prop_assert!(n_train == 0 || n_train == n);
            }
        }
    }
}

#[test]
fn style_offset_is_recoverable_by_least_squares() {
    let corpus = small(0, 2200);
    let (x, y): (Vec<f64>, Vec<f64>) = corpus
        .items
        .iter()
        .map(|it| {
            let mean = it.targets.log_f0.iter().sum::<f64>() / it.targets.frame_count() as f64;
            (it.style.z_offset, mean - SPEAKER_BASE_LOG_F0[speaker_of(&it.tree)])
        })
        .unzip();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 > 0.9, "r2 {r2}");
    assert!((slope - 0.3).abs() < 0.02, "slope {slope}");
}

#[test]
fn training_ignores_corpus_order() {
    let corpus = small(5, 10);
    let config = TrainConfig {
        max_steps: 4,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let run = |items: Vec<_>| {
        let model = Model::chive(ChiveConfig::toy(corpus.feature_dims()), 2).unwrap();
        let mut t = Trainer::new(model, config.clone(), items).unwrap();
        (0..4).map(|_| t.train_step().unwrap().loss.total).collect::<Vec<_>>()
    };
    let mut reversed = corpus.items.clone();
    reversed.reverse();
    assert_eq!(run(corpus.items.clone()), run(reversed));
}

#[test]
fn evaluation_is_deterministic_and_thread_count_free() {
    let corpus = small(8, 6);
    let model = Model::chive(ChiveConfig::toy(corpus.feature_dims()), 1).unwrap();
    for source in [EmbeddingSource::Encoded, EmbeddingSource::Zero, EmbeddingSource::Random { seed: 4 }] {
        let a = evaluate(&model, &corpus.items, source, 1).unwrap();
        let b = evaluate(&model, &corpus.items, source, 3).unwrap();
        assert_eq!(a, b);
    }
    let r4 = evaluate(&model, &corpus.items, EmbeddingSource::Random { seed: 4 }, 1).unwrap();
    let r5 = evaluate(&model, &corpus.items, EmbeddingSource::Random { seed: 5 }, 1).unwrap();
    assert_ne!(r4.report, r5.report);
}
