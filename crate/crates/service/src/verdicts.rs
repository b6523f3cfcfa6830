//! Append-only verdict log persisted as JSON lines.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConfirmSpammer,
    Reject,
    Clear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// 1-based position in the log.
    pub seq: u64,
    pub user: String,
    pub verdict: Verdict,
    pub actor: String,
    pub at: DateTime<Utc>,
}

/// Current verdict per account: the fold of the log, where `clear` removes the entry.
pub type VerdictMap = BTreeMap<String, Status>;

pub fn fold(records: &[VerdictRecord]) -> VerdictMap {
    let mut map = VerdictMap::new();
    for r in records {
        apply(&mut map, &r.user, r.verdict);
    }
    map
}

fn apply(map: &mut VerdictMap, user: &str, verdict: Verdict) {
    match verdict {
        Verdict::ConfirmSpammer => {
            map.insert(user.to_string(), Status::Confirmed);
        }
        Verdict::Reject => {
            map.insert(user.to_string(), Status::Rejected);
        }
        Verdict::Clear => {
            map.remove(user);
        }
    }
}

pub struct VerdictLog {
    path: PathBuf,
    records: Vec<VerdictRecord>,
    current: VerdictMap,
}

impl VerdictLog {
    /// Opens `path`, replaying any records already on disk.
    pub fn open(path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: VerdictRecord = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if rec.seq != records.len() as u64 + 1 {
                    return Err(ServiceError::Corrupt(format!(
                        "{}:{}: expected seq {}, found {}",
                        path.display(),
                        i + 1,
                        records.len() + 1,
                        rec.seq
                    )));
                }
                records.push(rec);
            }
        }
        let current = fold(&records);
        Ok(Self {
            path: path.to_path_buf(),
            records,
            current,
        })
    }

    pub fn position(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn records(&self) -> &[VerdictRecord] {
        &self.records
    }

    pub fn current(&self) -> &VerdictMap {
        &self.current
    }

    pub fn status(&self, user: &str) -> Status {
        self.current.get(user).copied().unwrap_or(Status::Pending)
    }

    /// Appends and flushes one record. Returns `None` for a `clear` that
    /// would not change the current map.
    pub fn append(&mut self, user: &str, verdict: Verdict, actor: &str) -> Result<Option<&VerdictRecord>> {
        if verdict == Verdict::Clear && !self.current.contains_key(user) {
            return Ok(None);
        }
        let rec = VerdictRecord {
            seq: self.position() + 1,
            user: user.to_string(),
            verdict,
            actor: actor.to_string(),
            at: Utc::now(),
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        apply(&mut self.current, user, verdict);
        self.records.push(rec);
        Ok(self.records.last())
    }
}
