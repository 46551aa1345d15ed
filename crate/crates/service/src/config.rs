//! Service settings, read from a TOML file.
//!
//! ```toml
//! host = "127.0.0.1"
//! port = 8080
//! checkpoint = "model.json"
//! session_db = "sessions.redb"
//! sentences = "corpus/sentences.json"
//!
//! [diff]
//! z_threshold = 1.0
//! merge_gap_chunks = 1
//! proficiency_threshold = 0.8
//! ```
//!
//! Relative paths are resolved against the file's directory. The checkpoint
//! can also come from `NATIVENESS_CHECKPOINT`; a `--checkpoint` flag wins
//! over both.

use std::path::{Path, PathBuf};

use anyhow::Context;
use nativeness::differ::DiffConfig;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_ENV: &str = "NATIVENESS_CHECKPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub checkpoint: Option<PathBuf>,
    pub session_db: PathBuf,
    /// Sentence catalog; the built-in sentences are used when absent.
    pub sentences: Option<PathBuf>,
    /// Directory served at `/`, e.g. a built web front end.
    pub static_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    pub diff: DiffConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            checkpoint: None,
            session_db: PathBuf::from("sessions.redb"),
            sentences: None,
            static_dir: None,
            max_upload_bytes: 16 * 1024 * 1024,
            diff: DiffConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.checkpoint.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.sentences.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.static_dir.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.session_db);
        cfg.diff.validate()?;
        Ok(cfg)
    }

    /// Flag, then environment, then file.
    pub fn resolve_checkpoint(&self, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| std::env::var_os(CHECKPOINT_ENV).map(PathBuf::from))
            .or_else(|| self.checkpoint.clone())
    }
}
