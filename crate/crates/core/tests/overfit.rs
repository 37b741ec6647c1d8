//! A toy model must nearly interpolate a single training utterance.

use chive::config::ChiveConfig;
use chive::corpus::{generate, CorpusConfig};
use chive::evaluation::{evaluate, EmbeddingSource};
use chive::linguistic::FRAME_SHIFT_MS;
use chive::model::Model;
use chive::training::{TrainConfig, Trainer};

#[test]
fn toy_model_overfits_one_utterance() {
    let corpus = generate(&CorpusConfig {
        utterances: 1,
        seed: 4,
        words: (3, 3),
        noise_scale: 0.0,
        ..CorpusConfig::default()
    })
    .unwrap();
    let item = corpus.items[0].clone();
    let config = ChiveConfig::toy(corpus.feature_dims());
    assert_eq!((config.hidden, config.latent_dim), (16, 8));
    let train = TrainConfig {
        max_steps: 5000,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::chive(config, 0).unwrap(), train, vec![item.clone()]).unwrap();
    while trainer.step() < 5000 {
        trainer.train_step().unwrap();
    }
    let report = evaluate(&trainer.model, &[item], EmbeddingSource::Encoded, 1).unwrap().report;
    let duration_abs_frames = report.dur_abs_ms / FRAME_SHIFT_MS;
    assert!(report.logf0_rmse < 0.01, "{report:?}");
    assert!(duration_abs_frames < 0.1, "{report:?}");
}
