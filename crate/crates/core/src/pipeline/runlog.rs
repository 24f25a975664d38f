use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::LossRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// seconds since the Unix epoch
    pub timestamp: f64,
    pub stage: String,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Append-only JSON-lines log of training metrics.
#[derive(Clone, Debug)]
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends records for one stage; steps must not decrease.
    pub fn append(&self, stage: &str, records: &[(u64, &str, f64)]) -> Result<()> {
        if records.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Data(format!("run log: steps of stage `{stage}` go backwards")));
        }
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut text = String::new();
        for &(step, metric, value) in records {
            let rec = LogRecord { timestamp: now, stage: stage.to_string(), step, metric: metric.to_string(), value };
            text.push_str(&serde_json::to_string(&rec)?);
            text.push('\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn append_curve(&self, stage: &str, curve: &[LossRecord]) -> Result<()> {
        let records: Vec<(u64, &str, f64)> =
            curve.iter().flat_map(|r| [(r.step, "loss", r.loss as f64), (r.step, "lr", r.lr)]).collect();
        self.append(stage, &records)
    }

    pub fn read(&self) -> Result<Vec<LogRecord>> {
        let text = fs::read_to_string(&self.path)?;
        text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}
