//! The linguistic tree that drives the network layout, and the prosodic
//! targets aligned to it.

mod document;
mod timing;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use document::{UtteranceDocument, SCHEMA_VERSION};
pub use timing::{timing_signal, TimingLevel};

/// Frame shift of the prosodic feature streams, in milliseconds.
pub const FRAME_SHIFT_MS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneNode {
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_frames: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyllableNode {
    pub features: Vec<f64>,
    pub phones: Vec<PhoneNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordNode {
    pub features: Vec<f64>,
    pub syllables: Vec<SyllableNode>,
}

/// Sentence, word, syllable and phone nodes with per-level feature vectors.
/// The sentence features carry the one-hot speaker identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceTree {
    pub utterance_id: String,
    pub sentence_features: Vec<f64>,
    pub words: Vec<WordNode>,
}

/// Frame-level log-F0 (natural log of Hz) and c0, plus frames per phone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodicTargets {
    pub log_f0: Vec<f64>,
    pub c0: Vec<f64>,
    pub durations: Vec<u32>,
}

impl ProsodicTargets {
    pub fn frame_count(&self) -> usize {
        self.log_f0.len()
    }

    pub fn f0_hz(&self) -> Vec<f64> {
        self.log_f0.iter().map(|l| l.exp()).collect()
    }
}

/// Feature widths at each level, shared by every tree of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub sentence: usize,
    pub word: usize,
    pub syllable: usize,
    pub phone: usize,
}

/// Flattened view of one syllable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyllableRef<'a> {
    pub word: usize,
    pub index_in_word: usize,
    pub node: &'a SyllableNode,
    /// Global index of the syllable's first phone.
    pub first_phone: usize,
}

/// Flattened view of one phone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhoneRef<'a> {
    pub word: usize,
    pub syllable: usize,
    pub index_in_syllable: usize,
    pub node: &'a PhoneNode,
}

/// Relative position of child `index` among `count` siblings. A single
/// child sits at 0.
pub fn relative_position(index: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        index as f64 / (count - 1) as f64
    }
}

/// Relative positions of the frames of a phone lasting `frames` frames.
pub fn frame_positions(frames: usize) -> Vec<f64> {
    (0..frames).map(|i| relative_position(i, frames)).collect()
}

/// Relative positions at every level of a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePositions {
    pub words: Vec<f64>,
    /// Per word, positions of its syllables.
    pub syllables: Vec<Vec<f64>>,
    /// Per syllable (flattened), positions of its phones.
    pub phones: Vec<Vec<f64>>,
    /// Per phone (flattened), positions of its frames; empty without durations.
    pub frames: Vec<Vec<f64>>,
}

impl UtteranceTree {
    pub fn syllable_count(&self) -> usize {
        self.words.iter().map(|w| w.syllables.len()).sum()
    }

    pub fn phone_count(&self) -> usize {
        self.syllables().map(|s| s.node.phones.len()).sum()
    }

    pub fn syllables(&self) -> impl Iterator<Item = SyllableRef<'_>> + '_ {
        let mut first_phone = 0;
        self.words.iter().enumerate().flat_map(move |(w, word)| {
            word.syllables.iter().enumerate().map(move |(i, node)| (w, i, node))
        })
        .map(move |(word, index_in_word, node)| {
            let r = SyllableRef {
                word,
                index_in_word,
                node,
                first_phone,
            };
            first_phone += node.phones.len();
            r
        })
    }

    pub fn phones(&self) -> impl Iterator<Item = PhoneRef<'_>> + '_ {
        self.syllables().enumerate().flat_map(|(s, syl)| {
            syl.node
                .phones
                .iter()
                .enumerate()
                .map(move |(i, node)| PhoneRef {
                    word: syl.word,
                    syllable: s,
                    index_in_syllable: i,
                    node,
                })
        })
    }

    /// Ground-truth durations, if every phone carries one.
    pub fn durations(&self) -> Option<Vec<u32>> {
        self.phones().map(|p| p.node.duration_frames).collect()
    }

    pub fn has_durations(&self) -> bool {
        self.phones().all(|p| p.node.duration_frames.is_some())
    }

    /// Returns a copy with every phone duration removed (bare inference input).
    pub fn without_durations(&self) -> UtteranceTree {
        let mut t = self.clone();
        for w in &mut t.words {
            for s in &mut w.syllables {
                for p in &mut s.phones {
                    p.duration_frames = None;
                }
            }
        }
        t
    }

    /// Feature widths taken from the first node at each level.
    pub fn feature_dims(&self) -> Option<FeatureDims> {
        let word = self.words.first()?;
        let syl = word.syllables.first()?;
        let phone = syl.phones.first()?;
        Some(FeatureDims {
            sentence: self.sentence_features.len(),
            word: word.features.len(),
            syllable: syl.features.len(),
            phone: phone.features.len(),
        })
    }

    pub fn positions(&self) -> TreePositions {
        let n_words = self.words.len();
        let words = (0..n_words).map(|i| relative_position(i, n_words)).collect();
        let syllables = self
            .words
            .iter()
            .map(|w| {
                let n = w.syllables.len();
                (0..n).map(|i| relative_position(i, n)).collect()
            })
            .collect();
        let phones = self
            .syllables()
            .map(|s| {
                let n = s.node.phones.len();
                (0..n).map(|i| relative_position(i, n)).collect()
            })
            .collect();
        let frames = self
            .phones()
            .map(|p| p.node.duration_frames.map(|d| frame_positions(d as usize)).unwrap_or_default())
            .collect();
        TreePositions {
            words,
            syllables,
            phones,
            frames,
        }
    }

    /// Checks the tree (and optionally its targets) against every structural
    /// invariant. Never fails; violations are collected in the report.
    pub fn validate(&self, targets: Option<&ProsodicTargets>) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.words.is_empty() {
            report.push(Violation::EmptySentence);
        }
        let dims = self.feature_dims();
        let mut with_duration = 0usize;
        let mut phones = 0usize;
        for (w, word) in self.words.iter().enumerate() {
            if word.syllables.is_empty() {
                report.push(Violation::EmptyWord { word: w });
            }
            if let Some(d) = dims {
                if word.features.len() != d.word {
                    report.push(Violation::DimensionMismatch {
                        level: "word",
                        expected: d.word,
                        actual: word.features.len(),
                    });
                }
            }
            for (s, syl) in word.syllables.iter().enumerate() {
                if syl.phones.is_empty() {
                    report.push(Violation::EmptySyllable { word: w, syllable: s });
                }
                if let Some(d) = dims {
                    if syl.features.len() != d.syllable {
                        report.push(Violation::DimensionMismatch {
                            level: "syllable",
                            expected: d.syllable,
                            actual: syl.features.len(),
                        });
                    }
                }
                for phone in &syl.phones {
                    phones += 1;
                    if let Some(d) = dims {
                        if phone.features.len() != d.phone {
                            report.push(Violation::DimensionMismatch {
                                level: "phone",
                                expected: d.phone,
                                actual: phone.features.len(),
                            });
                        }
                    }
                    match phone.duration_frames {
                        Some(0) => {
                            with_duration += 1;
                            report.push(Violation::NonPositiveDuration { phone: phones - 1 });
                        }
                        Some(_) => with_duration += 1,
                        None => {}
                    }
                }
            }
        }
        if with_duration != 0 && with_duration != phones {
            report.push(Violation::PartialDurations {
                present: with_duration,
                phones,
            });
        }
        let features_finite = self.sentence_features.iter().all(|v| v.is_finite())
            && self.words.iter().all(|w| {
                w.features.iter().all(|v| v.is_finite())
                    && w.syllables.iter().all(|s| {
                        s.features.iter().all(|v| v.is_finite())
                            && s.phones.iter().all(|p| p.features.iter().all(|v| v.is_finite()))
                    })
            });
        if !features_finite {
            report.push(Violation::NonFiniteValue { field: "features" });
        }

        if let Some(t) = targets {
            if t.durations.len() != phones {
                report.push(Violation::DurationCount {
                    phones,
                    durations: t.durations.len(),
                });
            }
            for (p, d) in t.durations.iter().enumerate() {
                if *d == 0 {
                    report.push(Violation::NonPositiveDuration { phone: p });
                }
            }
            let total: usize = t.durations.iter().map(|d| *d as usize).sum();
            if t.log_f0.len() != total {
                report.push(Violation::FrameCount {
                    stream: "log_f0",
                    frames: t.log_f0.len(),
                    duration_sum: total,
                });
            }
            if t.c0.len() != total {
                report.push(Violation::FrameCount {
                    stream: "c0",
                    frames: t.c0.len(),
                    duration_sum: total,
                });
            }
            if with_duration == phones && phones == t.durations.len() {
                let tree_d = self.durations().unwrap_or_default();
                if tree_d != t.durations {
                    report.push(Violation::DurationDisagreement);
                }
            }
            if !t.log_f0.iter().chain(&t.c0).all(|v| v.is_finite()) {
                report.push(Violation::NonFiniteValue { field: "targets" });
            }
        }
        report
    }

    /// Validates against the feature widths of a corpus.
    pub fn validate_dims(&self, dims: &FeatureDims) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.sentence_features.len() != dims.sentence {
            report.push(Violation::DimensionMismatch {
                level: "sentence",
                expected: dims.sentence,
                actual: self.sentence_features.len(),
            });
        }
        if let Some(own) = self.feature_dims() {
            for (level, expected, actual) in [
                ("word", dims.word, own.word),
                ("syllable", dims.syllable, own.syllable),
                ("phone", dims.phone, own.phone),
            ] {
                if expected != actual {
                    report.push(Violation::DimensionMismatch {
                        level,
                        expected,
                        actual,
                    });
                }
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptySentence,
    EmptyWord { word: usize },
    EmptySyllable { word: usize, syllable: usize },
    DimensionMismatch { level: &'static str, expected: usize, actual: usize },
    NonPositiveDuration { phone: usize },
    PartialDurations { present: usize, phones: usize },
    DurationCount { phones: usize, durations: usize },
    FrameCount { stream: &'static str, frames: usize, duration_sum: usize },
    DurationDisagreement,
    NonFiniteValue { field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySentence => write!(f, "empty sentence"),
            Violation::EmptyWord { word } => write!(f, "empty word (word {word})"),
            Violation::EmptySyllable { word, syllable } => {
                write!(f, "empty syllable (word {word}, syllable {syllable})")
            }
            Violation::DimensionMismatch {
                level,
                expected,
                actual,
            } => write!(f, "dimension mismatch at {level} level: expected {expected}, got {actual}"),
            Violation::NonPositiveDuration { phone } => {
                write!(f, "non-positive duration (phone {phone})")
            }
            Violation::PartialDurations { present, phones } => {
                write!(f, "durations present on {present} of {phones} phones")
            }
            Violation::DurationCount { phones, durations } => {
                write!(f, "{durations} durations for {phones} phones")
            }
            Violation::FrameCount {
                stream,
                frames,
                duration_sum,
            } => write!(
                f,
                "T ≠ Σ durations: {stream} has {frames} frames, durations sum to {duration_sum}"
            ),
            Violation::DurationDisagreement => {
                write!(f, "tree durations disagree with target durations")
            }
            Violation::NonFiniteValue { field } => write!(f, "non-finite value in {field}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(crate::Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn phone(id: usize, dur: Option<u32>) -> PhoneNode {
        let mut features = vec![0.0; 4];
        features[id % 4] = 1.0;
        PhoneNode {
            features,
            duration_frames: dur,
        }
    }

    /// Two words; the first syllable has two phones and the second one.
    pub(crate) fn two_word_tree() -> (UtteranceTree, ProsodicTargets) {
        let tree = UtteranceTree {
            utterance_id: "fig".into(),
            sentence_features: vec![1.0, 0.0, 0.5],
            words: vec![
                WordNode {
                    features: vec![0.0, 1.0],
                    syllables: vec![SyllableNode {
                        features: vec![1.0],
                        phones: vec![phone(0, Some(2)), phone(1, Some(4))],
                    }],
                },
                WordNode {
                    features: vec![1.0, 0.0],
                    syllables: vec![SyllableNode {
                        features: vec![0.0],
                        phones: vec![phone(2, Some(3))],
                    }],
                },
            ],
        };
        let targets = ProsodicTargets {
            log_f0: (0..9).map(|t| 4.8 + 0.01 * t as f64).collect(),
            c0: vec![0.5; 9],
            durations: vec![2, 4, 3],
        };
        (tree, targets)
    }

    #[test]
    fn consistent_two_word_tree_is_ok() {
        let (tree, targets) = two_word_tree();
        let report = tree.validate(Some(&targets));
        assert!(report.is_ok(), "{report}");
        assert_eq!(tree.syllable_count(), 2);
        assert_eq!(tree.phone_count(), 3);
    }

    #[test]
    fn word_without_syllables_is_reported() {
        let (mut tree, _) = two_word_tree();
        tree.words[1].syllables.clear();
        let report = tree.validate(None);
        assert!(report.violations.contains(&Violation::EmptyWord { word: 1 }));
        assert!(report.to_string().contains("empty word"));
    }

    #[test]
    fn frame_count_must_equal_duration_sum() {
        let (mut tree, _) = two_word_tree();
        tree.words.truncate(1);
        let targets = ProsodicTargets {
            log_f0: vec![5.0; 5],
            c0: vec![0.5; 6],
            durations: vec![2, 4],
        };
        let report = tree.validate(Some(&targets));
        assert_eq!(report.violations.len(), 1, "{report}");
        assert!(report.to_string().contains("T ≠ Σ durations"));
    }

    #[test]
    fn zero_duration_and_partial_durations_are_reported() {
        let (mut tree, _) = two_word_tree();
        tree.words[0].syllables[0].phones[0].duration_frames = Some(0);
        tree.words[1].syllables[0].phones[0].duration_frames = None;
        let report = tree.validate(None);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonPositiveDuration { phone: 0 })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::PartialDurations { present: 2, phones: 3 })));
    }

    #[test]
    fn mixed_feature_widths_are_reported() {
        let (mut tree, _) = two_word_tree();
        tree.words[1].features.push(0.0);
        let report = tree.validate(None);
        assert!(matches!(
            report.violations[0],
            Violation::DimensionMismatch { level: "word", expected: 2, actual: 3 }
        ));
    }

    #[test]
    fn positions_follow_linear_spacing() {
        assert_eq!(relative_position(0, 1), 0.0);
        let three: Vec<f64> = (0..3).map(|i| relative_position(i, 3)).collect();
        assert_eq!(three, vec![0.0, 0.5, 1.0]);
        assert_eq!(frame_positions(4), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);

        let (tree, _) = two_word_tree();
        let pos = tree.positions();
        assert_eq!(pos.words, vec![0.0, 1.0]);
        assert_eq!(pos.syllables, vec![vec![0.0], vec![0.0]]);
        assert_eq!(pos.phones, vec![vec![0.0, 1.0], vec![0.0]]);
        assert_eq!(pos.frames[0], vec![0.0, 1.0]);
    }

    #[test]
    fn flattened_views_carry_parent_indices() {
        let (tree, _) = two_word_tree();
        let syls: Vec<_> = tree.syllables().map(|s| (s.word, s.first_phone)).collect();
        assert_eq!(syls, vec![(0, 0), (1, 2)]);
        let phones: Vec<_> = tree.phones().map(|p| (p.word, p.syllable, p.index_in_syllable)).collect();
        assert_eq!(phones, vec![(0, 0, 0), (0, 0, 1), (1, 1, 0)]);
        assert_eq!(tree.durations(), Some(vec![2, 4, 3]));
        assert_eq!(tree.without_durations().durations(), None);
    }
}
