use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{LabelSource, PrefError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: usize,
    pub pair_id: String,
    pub source: LabelSource,
    /// Present for pairwise trajectory labels; absent for selection charges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub timestamp_ms: u64,
}

/// Counts charged queries against a budget. Every entry is one charged
/// query, so `used() == entries().len()` always holds; repeated pairs are
/// answered from the cache without an entry.
///
/// With a backing file each entry is appended as one JSON line before
/// `charge` returns.
#[derive(Debug)]
pub struct QueryLedger {
    budget: usize,
    entries: Vec<LedgerEntry>,
    cache: HashMap<String, u8>,
    ids: HashSet<String>,
    path: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl QueryLedger {
    pub fn new(budget: usize) -> Self {
        QueryLedger {
            budget,
            entries: Vec::new(),
            cache: HashMap::new(),
            ids: HashSet::new(),
            path: None,
        }
    }

    /// Opens or creates a JSON-lines ledger, replaying existing entries.
    pub fn open(path: &Path, budget: usize) -> Result<Self, PrefError> {
        let mut ledger = QueryLedger::new(budget);
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: LedgerEntry = serde_json::from_str(&line)?;
                if let Some(l) = e.label {
                    ledger.cache.insert(e.pair_id.clone(), l);
                }
                ledger.ids.insert(e.pair_id.clone());
                ledger.entries.push(e);
            }
        }
        ledger.path = Some(path.to_path_buf());
        Ok(ledger)
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn used(&self) -> usize {
        self.entries.len()
    }

    pub fn remaining(&self) -> usize {
        self.budget.saturating_sub(self.used())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn cached(&self, pair_id: &str) -> Option<u8> {
        self.cache.get(pair_id).copied()
    }

    /// True when an entry with this id was ever charged.
    pub fn contains(&self, pair_id: &str) -> bool {
        self.ids.contains(pair_id)
    }

    /// Where entries are appended, if anywhere.
    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Records one charged query. Fails without side effects when the
    /// budget is spent.
    pub fn charge(&mut self, pair_id: &str, source: LabelSource, label: Option<u8>) -> Result<(), PrefError> {
        debug_assert!(source != LabelSource::Pseudo, "pseudo labels are never charged");
        if self.used() >= self.budget {
            return Err(PrefError::BudgetExhausted { budget: self.budget });
        }
        let entry = LedgerEntry {
            seq: self.entries.len(),
            pair_id: pair_id.to_string(),
            source,
            label,
            timestamp_ms: now_ms(),
        };
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            f.sync_data()?;
        }
        if let Some(l) = label {
            self.cache.insert(entry.pair_id.clone(), l);
        }
        self.ids.insert(entry.pair_id.clone());
        self.entries.push(entry);
        Ok(())
    }
}
