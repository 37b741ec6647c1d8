use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProsodicTargets, UtteranceTree, WordNode};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Frames {
    log_f0: Vec<f64>,
    c0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    schema_version: u32,
    utterance_id: String,
    sentence_features: Vec<f64>,
    words: Vec<WordNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Frames>,
}

/// An utterance tree together with its prosodic targets, when known.
///
/// On disk (`.utt.json`) durations live on the phones and the frame streams
/// in a `frames` object; targets exist only when both are present.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceDocument {
    pub tree: UtteranceTree,
    pub targets: Option<ProsodicTargets>,
}

impl UtteranceDocument {
    pub fn new(tree: UtteranceTree, targets: Option<ProsodicTargets>) -> Self {
        UtteranceDocument { tree, targets }
    }

    pub fn to_json(&self) -> String {
        let raw = Raw {
            schema_version: SCHEMA_VERSION,
            utterance_id: self.tree.utterance_id.clone(),
            sentence_features: self.tree.sentence_features.clone(),
            words: self.tree.words.clone(),
            frames: self.targets.as_ref().map(|t| Frames {
                log_f0: t.log_f0.clone(),
                c0: t.c0.clone(),
            }),
        };
        serde_json::to_string_pretty(&raw).expect("document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("unsupported schema_version {v}"))),
            None => return Err(Error::Schema("missing schema_version".into())),
        }
        let raw: Raw = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        let tree = UtteranceTree {
            utterance_id: raw.utterance_id,
            sentence_features: raw.sentence_features,
            words: raw.words,
        };
        let durations = tree.durations();
        let targets = match (raw.frames, durations) {
            (Some(frames), Some(durations)) => Some(ProsodicTargets {
                log_f0: frames.log_f0,
                c0: frames.c0,
                durations,
            }),
            (Some(_), None) => {
                return Err(Error::Schema(
                    "frame streams present but phone durations missing".into(),
                ))
            }
            (None, _) => None,
        };
        let report = tree.validate(targets.as_ref());
        if !report.is_ok() {
            return Err(Error::Schema(report.to_string()));
        }
        Ok(UtteranceDocument { tree, targets })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linguistic::tests::two_word_tree;

    #[test]
    fn round_trip_preserves_tree_and_targets() {
        let (tree, targets) = two_word_tree();
        let doc = UtteranceDocument::new(tree, Some(targets));
        let back = UtteranceDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn missing_durations_means_no_targets() {
        let (tree, _) = two_word_tree();
        let doc = UtteranceDocument::new(tree.without_durations(), None);
        let back = UtteranceDocument::from_json(&doc.to_json()).unwrap();
        assert!(back.targets.is_none());
        assert!(!back.tree.has_durations());
    }

    #[test]
    fn truncated_document_is_a_parse_error() {
        let (tree, targets) = two_word_tree();
        let json = UtteranceDocument::new(tree, Some(targets)).to_json();
        let err = UtteranceDocument::from_json(&json[..json.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (tree, _) = two_word_tree();
        let json = UtteranceDocument::new(tree, None)
            .to_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = UtteranceDocument::from_json(&json).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn structural_violation_is_a_schema_error() {
        let (mut tree, _) = two_word_tree();
        tree.words[0].syllables[0].phones.clear();
        let json = UtteranceDocument::new(tree, None).to_json();
        assert!(matches!(
            UtteranceDocument::from_json(&json),
            Err(Error::Schema(_))
        ));
    }
}
