//! Synthetic corpus with a hidden per-utterance style factor.
//!
//! Structure and features are drawn at random; the acoustics follow a fixed
//! generator in which the style factor shifts and scales the pitch contour
//! but never appears in the linguistic features. An auto-encoder can only
//! recover the style from the prosody it reads.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linguistic::{
    relative_position, FeatureDims, PhoneNode, ProsodicTargets, SyllableNode, UtteranceDocument,
    UtteranceTree, WordNode,
};

/// Base log-F0 per speaker.
pub const SPEAKER_BASE_LOG_F0: [f64; 4] = [4.6, 4.8, 5.0, 5.2];
pub const DECLINATION: f64 = 0.2;
pub const OFFSET_GAIN: f64 = 0.3;
pub const RANGE_GAIN: f64 = 0.5;
pub const BUMP_HEIGHT: f64 = 0.25;
pub const STRESS_PROBABILITY: f64 = 0.3;
pub const C0_BASE: f64 = 0.5;
pub const C0_ACCENT_GAIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub seed: u64,
    pub words: (usize, usize),
    pub syllables_per_word: (usize, usize),
    pub phones_per_syllable: (usize, usize),
    pub duration_frames: (u32, u32),
    pub speakers: usize,
    pub phone_inventory: usize,
    pub noise_scale: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            utterances: 2200,
            seed: 0,
            words: (2, 6),
            syllables_per_word: (1, 4),
            phones_per_syllable: (1, 3),
            duration_frames: (3, 12),
            speakers: 4,
            phone_inventory: 20,
            noise_scale: 0.02,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("words", self.words.0, self.words.1),
            ("syllables_per_word", self.syllables_per_word.0, self.syllables_per_word.1),
            ("phones_per_syllable", self.phones_per_syllable.0, self.phones_per_syllable.1),
            (
                "duration_frames",
                self.duration_frames.0 as usize,
                self.duration_frames.1 as usize,
            ),
        ];
        for (name, lo, hi) in ranges {
            if lo == 0 || lo > hi {
                return Err(Error::Input(format!("{name} range [{lo}, {hi}] is empty or non-positive")));
            }
        }
        if self.utterances == 0 || self.phone_inventory == 0 {
            return Err(Error::Input("utterance count and phone inventory must be positive".into()));
        }
        if self.speakers == 0 || self.speakers > SPEAKER_BASE_LOG_F0.len() {
            return Err(Error::Input(format!(
                "speaker count must be in 1..={}",
                SPEAKER_BASE_LOG_F0.len()
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Input("noise_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn feature_dims(&self) -> FeatureDims {
        FeatureDims {
            sentence: self.speakers + 1,
            word: 2,
            syllable: 1,
            phone: self.phone_inventory,
        }
    }
}

/// Hidden style of one utterance; kept out of every feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleFactor {
    /// Global pitch shift in `[-1, 1]`.
    pub z_offset: f64,
    /// Accent amplitude scale in `[-1, 1]`.
    pub z_range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub tree: UtteranceTree,
    pub targets: ProsodicTargets,
    pub style: StyleFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub items: Vec<CorpusItem>,
}

fn uniform_usize<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Raised-cosine arch of unit height over `n` frames, sampled at frame centres.
fn arch(k: usize, n: usize) -> f64 {
    let u = (k as f64 + 0.5) / n as f64;
    0.5 * (1.0 - (2.0 * PI * u).cos())
}

/// Speaker index encoded in the sentence features.
pub fn speaker_of(tree: &UtteranceTree) -> usize {
    let onehot = &tree.sentence_features[..tree.sentence_features.len() - 1];
    onehot.iter().position(|v| *v == 1.0).unwrap_or(0)
}

/// Whether a syllable carries the stress flag.
pub fn is_stressed(node: &SyllableNode) -> bool {
    node.features.first().copied() == Some(1.0)
}

/// Generates the acoustic targets of a tree with ground-truth durations.
pub fn generate_targets<R: Rng>(
    tree: &UtteranceTree,
    speaker: usize,
    style: StyleFactor,
    noise_scale: f64,
    rng: &mut R,
) -> Result<ProsodicTargets> {
    let durations = tree
        .durations()
        .ok_or_else(|| Error::Input("target generation needs phone durations".into()))?;
    let total: usize = durations.iter().map(|d| *d as usize).sum();
    let base = *SPEAKER_BASE_LOG_F0
        .get(speaker)
        .ok_or_else(|| Error::Input(format!("speaker {speaker} out of range")))?;

    let mut accent = vec![0.0; total];
    let mut start = 0usize;
    for syl in tree.syllables() {
        let n: usize = durations[syl.first_phone..syl.first_phone + syl.node.phones.len()]
            .iter()
            .map(|d| *d as usize)
            .sum();
        if is_stressed(syl.node) {
            for k in 0..n {
                accent[start + k] += arch(k, n);
            }
        }
        start += n;
    }

    let noise = if noise_scale > 0.0 {
        Some(Normal::new(0.0, noise_scale).expect("positive noise scale"))
    } else {
        None
    };
    let draw = |rng: &mut R| noise.map_or(0.0, |d| d.sample(rng));
    let gain = 1.0 + RANGE_GAIN * style.z_range;
    let mut log_f0 = Vec::with_capacity(total);
    let mut c0 = Vec::with_capacity(total);
    for (t, a) in accent.iter().enumerate() {
        let declination = DECLINATION * t as f64 / total as f64;
        log_f0.push(base - declination + OFFSET_GAIN * style.z_offset + gain * BUMP_HEIGHT * a + draw(rng));
        c0.push(C0_BASE + C0_ACCENT_GAIN * a + draw(rng));
    }
    Ok(ProsodicTargets {
        log_f0,
        c0,
        durations,
    })
}

fn generate_one(config: &CorpusConfig, index: usize) -> Result<CorpusItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let n_words = uniform_usize(&mut rng, config.words);
    let speaker = rng.gen_range(0..config.speakers);
    let mut words = Vec::with_capacity(n_words);
    for w in 0..n_words {
        let n_syl = uniform_usize(&mut rng, config.syllables_per_word);
        let mut syllables = Vec::with_capacity(n_syl);
        for _ in 0..n_syl {
            let stressed = rng.gen_bool(STRESS_PROBABILITY);
            let n_ph = uniform_usize(&mut rng, config.phones_per_syllable);
            let phones = (0..n_ph)
                .map(|_| {
                    let mut features = vec![0.0; config.phone_inventory];
                    features[rng.gen_range(0..config.phone_inventory)] = 1.0;
                    let d = rng.gen_range(config.duration_frames.0..=config.duration_frames.1);
                    PhoneNode {
                        features,
                        duration_frames: Some(d),
                    }
                })
                .collect();
            syllables.push(SyllableNode {
                features: vec![if stressed { 1.0 } else { 0.0 }],
                phones,
            });
        }
        let prominent = syllables.iter().any(is_stressed);
        words.push(WordNode {
            features: vec![relative_position(w, n_words), if prominent { 1.0 } else { 0.0 }],
            syllables,
        });
    }

    let mut sentence_features = vec![0.0; config.speakers + 1];
    sentence_features[speaker] = 1.0;
    let span = (config.words.1 - config.words.0).max(1) as f64;
    sentence_features[config.speakers] = (n_words - config.words.0) as f64 / span;

    let tree = UtteranceTree {
        utterance_id: format!("{index:05}"),
        sentence_features,
        words,
    };
    let style = StyleFactor {
        z_offset: rng.gen_range(-1.0..=1.0),
        z_range: rng.gen_range(-1.0..=1.0),
    };
    let targets = generate_targets(&tree, speaker, style, config.noise_scale, &mut rng)?;
    Ok(CorpusItem { tree, targets, style })
}

/// Generates the corpus; utterance `i` depends only on `(config, i)`.
pub fn generate(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let items = (0..config.utterances)
        .map(|i| generate_one(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: config.clone(),
        items,
    })
}

/// Index sets of a train/eval partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Deterministic split stratified by word count.
///
/// Items are ordered by word count (shuffled within each stratum) and the
/// eval items are picked systematically along that order, so every stratum
/// is represented in proportion.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<Split> {
    let n = corpus.items.len();
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Input(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    let n_eval = n - n_train;
    if n_train == 0 || n_eval == 0 {
        return Err(Error::Input(format!(
            "degenerate split: {n_train} train / {n_eval} eval of {n}"
        )));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in corpus.items.iter().enumerate() {
        strata.entry(item.tree.words.len()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(n);
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut out = Split {
        train: Vec::with_capacity(n_train),
        eval: Vec::with_capacity(n_eval),
    };
    for (k, idx) in order.into_iter().enumerate() {
        if (k + 1) * n_eval / n > k * n_eval / n {
            out.eval.push(idx);
        } else {
            out.train.push(idx);
        }
    }
    out.train.sort_unstable();
    out.eval.sort_unstable();
    Ok(out)
}

impl Corpus {
    pub fn feature_dims(&self) -> FeatureDims {
        self.config.feature_dims()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<CorpusItem> {
        indices.iter().map(|&i| self.items[i].clone()).collect()
    }

    pub fn styles(&self) -> BTreeMap<String, StyleFactor> {
        self.items
            .iter()
            .map(|it| (it.tree.utterance_id.clone(), it.style))
            .collect()
    }

    /// Writes `NNNNN.utt.json` files, `styles.json` and `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let name = format!("{}.utt.json", item.tree.utterance_id);
            let text = UtteranceDocument::new(item.tree.clone(), Some(item.targets.clone())).to_json();
            let path = dir.join(&name);
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            files.push(serde_json::json!({"file": name, "crc32": crc32fast::hash(text.as_bytes())}));
        }
        let styles = serde_json::to_string_pretty(&self.styles()).expect("styles serialize");
        let path = dir.join("styles.json");
        std::fs::write(&path, &styles).map_err(|e| Error::io(&path, e))?;
        let manifest = serde_json::json!({
            "schema_version": crate::linguistic::SCHEMA_VERSION,
            "config": self.config,
            "seed": self.config.seed,
            "files": files,
            "styles": {"file": "styles.json", "crc32": crc32fast::hash(styles.as_bytes())},
        });
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(|e| Error::io(&path, e))
    }

    /// Reads a corpus directory, verifying manifest checksums.
    pub fn read_dir(dir: &Path) -> Result<Corpus> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let config: CorpusConfig = serde_json::from_value(manifest["config"].clone())
            .map_err(|e| Error::Schema(format!("manifest config: {e}")))?;
        let styles = read_styles(dir)?;
        let files = manifest["files"]
            .as_array()
            .ok_or_else(|| Error::Schema("manifest lacks a file list".into()))?;
        let mut items = Vec::with_capacity(files.len());
        for entry in files {
            let name = entry["file"]
                .as_str()
                .ok_or_else(|| Error::Schema("manifest entry without file name".into()))?;
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if entry["crc32"].as_u64() != Some(crc32fast::hash(text.as_bytes()) as u64) {
                return Err(Error::Schema(format!("{name}: checksum mismatch")));
            }
            let doc = UtteranceDocument::from_json(&text)?;
            let targets = doc
                .targets
                .ok_or_else(|| Error::Schema(format!("{name}: corpus utterance without targets")))?;
            let style = *styles
                .get(&doc.tree.utterance_id)
                .ok_or_else(|| Error::Schema(format!("{name}: no style in sidecar")))?;
            items.push(CorpusItem {
                tree: doc.tree,
                targets,
                style,
            });
        }
        Ok(Corpus { config, items })
    }
}

pub fn read_styles(dir: &Path) -> Result<BTreeMap<String, StyleFactor>> {
    let path = dir.join("styles.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("styles.json: {e}")))
}
