//! Practice sentences and their optional exemplar recordings.
//!
//! Catalog file:
//!
//! ```json
//! {"sentences": [{"sentence_id": "s1", "text": "...", "model_audio": "model_audio/s1.wav"}]}
//! ```
//!
//! Exemplars are for playback only; analysis never compares against them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nativeness::synth::SENTENCES;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceSpec {
    pub sentence_id: String,
    pub text: String,
    /// Relative to the catalog file.
    #[serde(default)]
    pub model_audio: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub sentences: Vec<SentenceSpec>,
}

/// What clients see: no file paths, only a URL when an exemplar exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEntry {
    pub sentence_id: String,
    pub text: String,
    pub model_audio_url: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    sentences: Vec<SentenceSpec>,
    base_dir: PathBuf,
}

impl Catalog {
    /// Sentences `s1`..`s5` without exemplars.
    pub fn builtin() -> Self {
        Self {
            sentences: SENTENCES
                .iter()
                .enumerate()
                .map(|(i, t)| SentenceSpec {
                    sentence_id: format!("s{}", i + 1),
                    text: (*t).to_string(),
                    model_audio: None,
                })
                .collect(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: CatalogFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut seen = std::collections::BTreeSet::new();
        for s in &file.sentences {
            if !valid_id(&s.sentence_id) {
                bail!("invalid sentence_id {:?}", s.sentence_id);
            }
            if !seen.insert(s.sentence_id.as_str()) {
                bail!("duplicate sentence_id {:?}", s.sentence_id);
            }
        }
        Ok(Self {
            sentences: file.sentences,
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&SentenceSpec> {
        self.sentences.iter().find(|s| s.sentence_id == id)
    }

    pub fn entries(&self) -> Vec<SentenceEntry> {
        self.sentences
            .iter()
            .map(|s| SentenceEntry {
                sentence_id: s.sentence_id.clone(),
                text: s.text.clone(),
                model_audio_url: s
                    .model_audio
                    .as_ref()
                    .map(|_| format!("/api/model_audio/{}", s.sentence_id)),
            })
            .collect()
    }

    pub fn model_audio_path(&self, id: &str) -> Option<PathBuf> {
        self.get(id)?.model_audio.as_ref().map(|p| self.base_dir.join(p))
    }
}

/// Ids used in URLs and store keys: 1 to 128 of `[A-Za-z0-9_.-]`.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_hide_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sentences.json");
        std::fs::write(
            &path,
            r#"{"sentences":[{"sentence_id":"a","text":"Hi.","model_audio":"x/a.wav"},{"sentence_id":"b","text":"Yo."}]}"#,
        )
        .unwrap();
        let c = Catalog::load(&path).unwrap();
        let e = c.entries();
        assert_eq!(e[0].model_audio_url.as_deref(), Some("/api/model_audio/a"));
        assert_eq!(e[1].model_audio_url, None);
        assert!(!serde_json::to_string(&e).unwrap().contains("x/a.wav"));
        assert_eq!(c.model_audio_path("a"), Some(dir.path().join("x/a.wav")));
        assert_eq!(c.model_audio_path("b"), None);
        assert_eq!(c.model_audio_path("zz"), None);
    }

    #[test]
    fn rejects_bad_catalogs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"sentences":[{"sentence_id":"a","text":""},{"sentence_id":"a","text":""}]}"#).unwrap();
        assert!(Catalog::load(&path).is_err());
        std::fs::write(&path, r#"{"sentences":[{"sentence_id":"../x","text":""}]}"#).unwrap();
        assert!(Catalog::load(&path).is_err());
    }

    #[test]
    fn ids() {
        assert!(valid_id("session-1_a.b"));
        assert!(!valid_id(""));
        assert!(!valid_id("a/b"));
        assert!(!valid_id(&"x".repeat(129)));
    }
}
