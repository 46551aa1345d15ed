//! Append-only practice history in a single-file redb database.
//!
//! Results are keyed by `(session_id, sequence)`. An append runs inside one
//! write transaction, so appends to a session are serialized and sequence
//! numbers and timestamps within a session strictly increase. A session is
//! bound to the sentence of its first result.

use std::path::Path;

use nativeness::analysis::{Analysis, AnalysisResult};
use redb::{Database, ReadableTable, TableDefinition};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const RESULTS: TableDefinition<(&str, u64), &[u8]> = TableDefinition::new("results");

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session store: {0}")]
    Db(String),
    #[error("stored result is unreadable: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("session {session_id} practices sentence {expected}, not {got}")]
    SentenceMismatch {
        session_id: String,
        expected: String,
        got: String,
    },
}

macro_rules! db_err {
    ($($t:ty),*) => {$(
        impl From<$t> for StoreError {
            fn from(e: $t) -> Self {
                StoreError::Db(e.to_string())
            }
        }
    )*};
}
db_err!(redb::DatabaseError, redb::TransactionError, redb::TableError, redb::StorageError, redb::CommitError);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    /// `None` until the first result.
    pub sentence_id: Option<String>,
    pub results: Vec<AnalysisResult>,
}

pub struct SessionStore {
    db: Database,
}

impl SessionStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let db = Database::create(path)?;
        let tx = db.begin_write()?;
        tx.open_table(RESULTS)?;
        tx.commit()?;
        Ok(Self { db })
    }

    /// Stores `analysis` as the session's next result. The timestamp is
    /// `now_ms`, bumped past the previous result's if the clock has not
    /// advanced.
    pub fn append(
        &self,
        session_id: &str,
        sentence_id: &str,
        analysis: Analysis,
        now_ms: u64,
    ) -> Result<AnalysisResult, StoreError> {
        let tx = self.db.begin_write()?;
        let result = {
            let mut table = tx.open_table(RESULTS)?;
            let last = table
                .range((session_id, 0)..=(session_id, u64::MAX))?
                .next_back()
                .transpose()?
                .map(|(k, v)| -> Result<_, StoreError> {
                    let r: AnalysisResult = serde_json::from_slice(v.value())?;
                    Ok((k.value().1, r))
                })
                .transpose()?;
            let (seq, timestamp) = match &last {
                Some((seq, prev)) => {
                    if prev.sentence_id != sentence_id {
                        return Err(StoreError::SentenceMismatch {
                            session_id: session_id.to_string(),
                            expected: prev.sentence_id.clone(),
                            got: sentence_id.to_string(),
                        });
                    }
                    (seq + 1, now_ms.max(prev.timestamp.unwrap_or(0) + 1))
                }
                None => (0, now_ms),
            };
            let result = AnalysisResult::new(
                analysis,
                uuid::Uuid::new_v4().to_string(),
                sentence_id.to_string(),
                Some(timestamp),
            );
            table.insert((session_id, seq), serde_json::to_vec(&result)?.as_slice())?;
            result
        };
        tx.commit()?;
        Ok(result)
    }

    /// Results in submission order; an unseen session is empty.
    pub fn history(&self, session_id: &str) -> Result<SessionRecord, StoreError> {
        let tx = self.db.begin_read()?;
        let table = tx.open_table(RESULTS)?;
        let mut results = Vec::new();
        for item in table.range((session_id, 0)..=(session_id, u64::MAX))? {
            let (_, v) = item?;
            results.push(serde_json::from_slice::<AnalysisResult>(v.value())?);
        }
        Ok(SessionRecord {
            schema_version: SESSION_SCHEMA_VERSION,
            session_id: session_id.to_string(),
            sentence_id: results.first().map(|r| r.sentence_id.clone()),
            results,
        })
    }
}
