//! Append-only line-delimited store of run records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use hsi_core::DataConfig;
use serde::{Deserialize, Serialize};

use crate::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Test accuracy of one (configuration, model, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: DataConfig,
    pub model: String,
    pub seed: u64,
    /// Fraction of correctly classified test samples.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub wall_time_s: f64,
    /// Configurations the backbone was pretrained on, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pretrained_on: Vec<String>,
    pub manifest_hash: String,
    pub code_version: String,
    /// Effective settings of the run.
    #[serde(default)]
    pub resolved: serde_json::Value,
}

impl RunResult {
    pub fn config_id(&self) -> String {
        self.config.id()
    }
}

/// Records kept after a load plus the number of lines that failed to parse.
#[derive(Clone, Debug, Default)]
pub struct Loaded {
    pub records: Vec<RunResult>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record as a single locked write.
    pub fn append(&self, record: &RunResult) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.lock()?;
        let written = f.write_all(line.as_bytes()).and_then(|_| f.sync_data());
        f.unlock()?;
        Ok(written?)
    }

    /// Reads all records; malformed lines are skipped and reported.
    pub fn load(&self) -> Result<Loaded> {
        let f = File::open(&self.path)?;
        let mut out = Loaded::default();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RunResult>(&line) {
                Ok(r) => out.records.push(r),
                Err(e) => {
                    let msg = format!("{}:{}: skipped malformed record: {e}", self.path.display(), n + 1);
                    log::warn!("{msg}");
                    out.warnings.push(msg);
                }
            }
        }
        Ok(out)
    }
}
