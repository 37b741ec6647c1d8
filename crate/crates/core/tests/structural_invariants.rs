//! Unroll-length invariants of both architectures over many random trees.

use chive::compute::Graph;
use chive::config::{BaselineConfig, ChiveConfig};
use chive::corpus::{generate, CorpusConfig};
use chive::decoder::{round_duration, DurationMode};
use chive::evaluation::random_embedding;
use chive::model::{Architecture, Model};

const TREES: usize = 1000;

fn corpus() -> chive::corpus::Corpus {
    generate(&CorpusConfig {
        utterances: TREES,
        seed: 11,
        words: (1, 6),
        duration_frames: (1, 12),
        ..CorpusConfig::default()
    })
    .unwrap()
}

/// Makes raw duration predictions spread over several frames so rounding
/// produces varied free-running lengths.
fn spread_durations(model: &mut Model) {
    let (w, b) = match &model.arch {
        Architecture::Chive(c) => (c.decoder.duration_out.w, c.decoder.duration_out.b),
        Architecture::Baseline(m, _) => (m.duration_out.w, m.duration_out.b),
    };
    for v in model.store.get_mut(w).data_mut() {
        *v *= 40.0;
    }
    model.store.get_mut(b).fill(3.0);
}

#[test]
fn chive_unrolls_follow_the_tree() {
    let corpus = corpus();
    let mut model = Model::chive(ChiveConfig::toy(corpus.feature_dims()), 5).unwrap();
    spread_durations(&mut model);
    let Architecture::Chive(chive) = &model.arch else { unreachable!() };
    let mut rounded_lengths = std::collections::BTreeSet::new();
    for (i, item) in corpus.items.iter().enumerate() {
        let tree = &item.tree;
        let targets = &item.targets;
        let syllables = tree.syllables().count();
        let frames = targets.frame_count();

        let mut g = Graph::new(&model.store);
        let (_, enc) = chive.encoder.encode(&mut g, tree, targets).unwrap();
        assert_eq!(enc.frame_captures.len(), syllables);
        assert_eq!(enc.phone_captures.len(), syllables);
        assert_eq!(enc.syllable_steps, syllables);
        assert_eq!(enc.frame_steps, frames);
        assert_eq!(enc.phone_steps, tree.phone_count());

        let z = g.zeros(chive.config.latent_dim);
        let (tf, trace) = chive.decoder.decode(&mut g, tree, z, DurationMode::TeacherForced).unwrap();
        let expected: Vec<usize> = tree
            .syllables()
            .map(|s| {
                targets.durations[s.first_phone..s.first_phone + s.node.phones.len()]
                    .iter()
                    .map(|d| *d as usize)
                    .sum()
            })
            .collect();
        assert_eq!(trace.f0_steps_per_syllable, expected);
        assert_eq!(trace.c0_steps_per_phone, targets.durations.iter().map(|d| *d as usize).collect::<Vec<_>>());
        let tf = tf.value(&g);
        assert_eq!(tf.log_f0.len(), frames);
        assert_eq!(tf.c0.len(), frames);
        assert_eq!(tf.durations_raw.len(), tree.phone_count());

        let bare = tree.without_durations();
        let z = g.input(random_embedding(3, i, chive.config.latent_dim).0);
        let (fr, trace) = chive.decoder.decode(&mut g, &bare, z, DurationMode::FreeRunning).unwrap();
        let fr = fr.value(&g);
        let rounded: Vec<u32> = fr.durations_raw.iter().map(|d| round_duration(*d).unwrap()).collect();
        assert_eq!(fr.durations_realized, rounded);
        let total: usize = rounded.iter().map(|d| *d as usize).sum();
        assert_eq!(fr.log_f0.len(), total);
        assert_eq!(fr.c0.len(), total);
        assert_eq!(trace.f0_steps(), total);
        rounded_lengths.extend(rounded);
    }
    assert!(rounded_lengths.len() >= 3, "{rounded_lengths:?}");
}

#[test]
fn baseline_unrolls_follow_the_tree() {
    let corpus = corpus();
    let mut model = Model::baseline(BaselineConfig::new(corpus.feature_dims(), 8), 5).unwrap();
    spread_durations(&mut model);
    let Architecture::Baseline(base, config) = &model.arch else { unreachable!() };
    for item in &corpus.items {
        let tree = &item.tree;
        let frames = item.targets.frame_count();
        let mut g = Graph::new(&model.store);
        let (_, enc) = base.encode(&mut g, tree, &item.targets).unwrap();
        assert_eq!(enc.encoder_steps, frames);

        let z = g.zeros(config.latent_dim);
        let (tf, trace) = base.decode(&mut g, tree, z, DurationMode::TeacherForced).unwrap();
        assert_eq!(trace.decoder_steps, frames);
        assert_eq!(tf.value(&g).log_f0.len(), frames);

        let z = g.zeros(config.latent_dim);
        let (fr, _) = base.decode(&mut g, &tree.without_durations(), z, DurationMode::FreeRunning).unwrap();
        let fr = fr.value(&g);
        let total: u32 = fr.durations_raw.iter().map(|d| round_duration(*d).unwrap()).sum();
        assert_eq!(fr.log_f0.len(), total as usize);
    }
}
