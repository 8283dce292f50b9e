//! Per-epoch metrics: one self-describing JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

/// Pseudo-label filter statistics for one epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub considered: usize,
    pub accepted: usize,
    pub rejected_low_conf_weak: usize,
    pub rejected_low_conf_strong: usize,
    pub rejected_inconsistent: usize,
    /// Histogram of accepted pseudo-label classes.
    pub pseudo_class_hist: Vec<usize>,
}

impl FilterStats {
    pub fn new(num_classes: usize) -> Self {
        Self {
            pseudo_class_hist: vec![0; num_classes],
            ..Default::default()
        }
    }

    pub fn accept_rate(&self) -> f64 {
        if self.considered == 0 {
            0.0
        } else {
            self.accepted as f64 / self.considered as f64
        }
    }
}

/// Gate telemetry for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateTelemetry {
    /// Gate bit in effect during the epoch's training steps.
    pub g: u8,
    /// Monitor result at the end of the epoch.
    pub val_conf_acc: f64,
    pub val_accepted_count: usize,
    pub below_count: usize,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub stage: String,
    /// Absent when the reconstruction loss is disabled.
    pub loss_recon: Option<f64>,
    pub loss_sup: f64,
    pub loss_pseudo: f64,
    pub loss_total: f64,
    pub lambda_p_eff: f64,
    pub gate: GateTelemetry,
    pub filter: FilterStats,
    /// Test accuracy, when evaluated this epoch.
    pub test_acc: Option<f64>,
    pub wall_time_s: f64,
}

/// Appends one record per call to a JSONL file.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> MetricsRecord {
        MetricsRecord {
            epoch,
            stage: "pretrain".into(),
            loss_recon: Some(0.5),
            loss_sup: 1.2,
            loss_pseudo: 0.0,
            loss_total: 1.7,
            lambda_p_eff: 0.0,
            gate: GateTelemetry {
                g: 0,
                val_conf_acc: 0.0,
                val_accepted_count: 0,
                below_count: 0,
            },
            filter: FilterStats::new(4),
            test_acc: None,
            wall_time_s: 1.0,
        }
    }

    #[test]
    fn round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.write(&record(1)).unwrap();
        w.write(&record(2)).unwrap();
        drop(w);
        let mut w = MetricsWriter::append(&path).unwrap();
        w.write(&record(3)).unwrap();
        drop(w);
        let records = read_metrics(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2].epoch, 3);
    }

    #[test]
    fn accept_rate_handles_empty() {
        assert_eq!(FilterStats::new(2).accept_rate(), 0.0);
    }
}
