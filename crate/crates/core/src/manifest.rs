//! Utterance manifests.
//!
//! A manifest is a JSON Lines file with one utterance per line:
//!
//! ```text
//! {"clip_ref":"clips/s01_003.wav","label":"native","speaker_id":"s01","text":"Good morning.","split":"train"}
//! ```
//!
//! | field        | type                                   | notes                                   |
//! |--------------|----------------------------------------|-----------------------------------------|
//! | `clip_ref`   | string                                 | path relative to the manifest directory |
//! | `label`      | `"native"` \| `"non-native"`           | no other value is accepted              |
//! | `speaker_id` | string                                 | opaque                                  |
//! | `text`       | string or `null`, optional             | transcript, never used for scoring      |
//! | `split`      | `"train"` \| `"validation"` \| `"test"` |                                         |
//!
//! Blank lines are ignored. `clip_ref` must be unique within a file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two classes. Index 0 is native, which is also the tie-break winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "native")]
    Native,
    #[serde(rename = "non-native")]
    NonNative,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Native, Label::NonNative];

    pub fn index(self) -> usize {
        match self {
            Label::Native => 0,
            Label::NonNative => 1,
        }
    }

    pub fn from_index(index: usize) -> Label {
        if index == 0 {
            Label::Native
        } else {
            Label::NonNative
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Native => "native",
            Label::NonNative => "non-native",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub clip_ref: String,
    pub label: Label,
    pub speaker_id: String,
    #[serde(default)]
    pub text: Option<String>,
    pub split: Split,
}

impl UtteranceRecord {
    /// Resolves `clip_ref` against the directory holding the manifest.
    pub fn resolve(&self, base_dir: &Path) -> PathBuf {
        let p = Path::new(&self.clip_ref);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `origin` is only used in error messages.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Manifest {
            path: origin.to_path_buf(),
            line: line_no,
            reason,
        };
        // Look at the label first so a bad class name is reported as such
        // rather than as a generic deserialization failure.
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| err(format!("malformed record: {e}")))?;
        if let Some(label) = value.get("label").and_then(|l| l.as_str()) {
            if label != "native" && label != "non-native" {
                return Err(err(format!(
                    "unknown label {label:?} (expected \"native\" or \"non-native\")"
                )));
            }
        }
        let record: UtteranceRecord =
            serde_json::from_value(value).map_err(|e| err(format!("malformed record: {e}")))?;
        if !seen.insert(record.clip_ref.clone()) {
            return Err(err(format!("duplicate clip_ref {:?}", record.clip_ref)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_to_string(records)?).map_err(|e| Error::io(path, e))
}

pub fn manifest_to_string(records: &[UtteranceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn filter_split(records: &[UtteranceRecord], split: Split) -> Vec<UtteranceRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

/// Fails if any speaker appears in more than one split.
pub fn check_speaker_disjoint(records: &[UtteranceRecord]) -> Result<()> {
    let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
    for r in records {
        match splits.get(r.speaker_id.as_str()) {
            Some(&s) if s != r.split => {
                return Err(Error::Dataset(format!(
                    "speaker {:?} appears in both {} and {} splits",
                    r.speaker_id,
                    s.as_str(),
                    r.split.as_str()
                )));
            }
            Some(_) => {}
            None => {
                splits.insert(&r.speaker_id, r.split);
            }
        }
    }
    Ok(())
}

/// Counts per label, in `Label::ALL` order.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Label>) -> [usize; 2] {
    let mut counts = [0; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}
