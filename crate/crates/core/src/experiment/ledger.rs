use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::fsutil::atomic_write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CellStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl CellStatus {
    /// Within one attempt a cell only moves forward.
    fn allows(self, next: CellStatus) -> bool {
        matches!(
            (self, next),
            (CellStatus::Pending, CellStatus::Running)
                | (CellStatus::Running, CellStatus::Done)
                | (CellStatus::Running, CellStatus::Failed)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub fold: usize,
    pub seed: u64,
    pub status: CellStatus,
    /// Increments each time an unfinished cell is started again.
    pub attempt: usize,
    /// Cell directory relative to the experiment directory.
    pub dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `ledger.json`: the status of every (fold, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub experiment_id: String,
    pub config_hash: String,
    pub cells: BTreeMap<String, Cell>,
}

pub fn cell_key(fold: usize, seed: u64) -> String {
    format!("fold-{fold}/seed-{seed}")
}

impl RunLedger {
    pub fn new(experiment_id: &str, config_hash: &str, folds: &[usize], seeds: &[u64]) -> Self {
        let mut cells = BTreeMap::new();
        for &seed in seeds {
            for &fold in folds {
                let key = cell_key(fold, seed);
                cells.insert(
                    key.clone(),
                    Cell {
                        fold,
                        seed,
                        status: CellStatus::Pending,
                        attempt: 0,
                        dir: key,
                        error: None,
                    },
                );
            }
        }
        Self {
            experiment_id: experiment_id.to_string(),
            config_hash: config_hash.to_string(),
            cells,
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join("ledger.json")
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, ExperimentError> {
        match std::fs::read(Self::path(dir)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        atomic_write(&Self::path(dir), &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Opens the ledger of `dir`, creating it or adding cells that a
    /// previous run did not request. A ledger written for another config is
    /// refused.
    pub fn open(
        dir: &Path,
        experiment_id: &str,
        config_hash: &str,
        folds: &[usize],
        seeds: &[u64],
    ) -> Result<Self, ExperimentError> {
        let fresh = Self::new(experiment_id, config_hash, folds, seeds);
        let ledger = match Self::load(dir)? {
            None => fresh,
            Some(mut existing) => {
                if existing.config_hash != config_hash {
                    return Err(ExperimentError::LedgerMismatch {
                        path: Self::path(dir),
                        found: existing.config_hash,
                        expected: config_hash.to_string(),
                    });
                }
                for (k, c) in fresh.cells {
                    existing.cells.entry(k).or_insert(c);
                }
                existing
            }
        };
        ledger.save(dir)?;
        Ok(ledger)
    }

    pub fn status(&self, fold: usize, seed: u64) -> Option<CellStatus> {
        self.cells.get(&cell_key(fold, seed)).map(|c| c.status)
    }

    /// Applies `next` to a cell. Starting a cell that is RUNNING (a stale
    /// run) or FAILED opens a new attempt.
    pub fn transition(&mut self, fold: usize, seed: u64, next: CellStatus, error: Option<String>) -> Result<(), ExperimentError> {
        let key = cell_key(fold, seed);
        let cell = self
            .cells
            .get_mut(&key)
            .ok_or_else(|| ExperimentError::LedgerTransition(format!("{key} is not part of this experiment")))?;
        let retry = next == CellStatus::Running && matches!(cell.status, CellStatus::Running | CellStatus::Failed);
        if retry {
            cell.attempt += 1;
        } else if !cell.status.allows(next) {
            return Err(ExperimentError::LedgerTransition(format!(
                "{key}: {:?} -> {next:?}",
                cell.status
            )));
        } else if next == CellStatus::Running {
            cell.attempt += 1;
        }
        cell.status = next;
        cell.error = error;
        Ok(())
    }
}

/// Exclusive advisory lock on `<dir>/ledger.lock`, held until dropped.
pub struct LedgerLock {
    file: File,
}

impl LedgerLock {
    pub fn acquire(dir: &Path) -> Result<Self, ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join("ledger.lock"))?;
        file.lock()?;
        Ok(Self { file })
    }
}

impl Drop for LedgerLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

/// Read-modify-write of the ledger under the lock.
pub fn update_ledger<R>(dir: &Path, f: impl FnOnce(&mut RunLedger) -> Result<R, ExperimentError>) -> Result<R, ExperimentError> {
    let _lock = LedgerLock::acquire(dir)?;
    let mut ledger = RunLedger::load(dir)?.ok_or_else(|| ExperimentError::LedgerTransition("ledger missing".into()))?;
    let out = f(&mut ledger)?;
    ledger.save(dir)?;
    Ok(out)
}
