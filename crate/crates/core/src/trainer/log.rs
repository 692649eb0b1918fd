use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::metrics::MetricsRecord;

/// Training statistics of one epoch, kept for every epoch regardless of `eval_every`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean diagonal entry of the self-assignment, averaged over the epoch's steps.
    pub diag_mass: f64,
    /// Smallest per-dimension std of the online embeddings over the epoch's batches.
    pub min_embedding_std: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub records: Vec<MetricsRecord>,
    pub epochs: Vec<EpochStats>,
}

impl RunLog {
    pub fn new(config: TrainConfig) -> Self {
        Self { config, records: Vec::new(), epochs: Vec::new() }
    }

    /// One row per record; wall-clock times are left out so identical runs give identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(MetricsRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runlog.csv"), self.to_csv())?;
        std::fs::write(dir.join("runlog.json"), self.to_json()?)?;
        Ok(())
    }

    pub fn first(&self) -> Option<&MetricsRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Smallest embedding std seen at any step of the run.
    pub fn min_embedding_std(&self) -> f64 {
        self.epochs.iter().map(|e| e.min_embedding_std).fold(f64::INFINITY, f64::min)
    }
}
