use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<f64>,
}

/// A metric table with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub seed: u64,
    /// SHA-256 over the experiment name, config and metric table.
    pub artifact_hash: String,
    pub wallclock_secs: f64,
    /// Seconds since the Unix epoch at creation.
    pub timestamp: u64,
}

impl ExperimentReport {
    pub fn new(
        experiment: &str,
        config: &impl Serialize,
        seed: u64,
        columns: &[&str],
    ) -> Result<Self> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            experiment: experiment.to_string(),
            config: serde_json::to_value(config)?,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            seed,
            artifact_hash: String::new(),
            wallclock_secs: 0.0,
            timestamp,
        })
    }

    pub fn push_row(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::shape(format!(
                "row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("report metric"));
        }
        self.rows.push(ReportRow {
            label: label.into(),
            values,
        });
        Ok(())
    }

    /// Records the wallclock time and seals the table with its hash.
    pub fn finish(&mut self, wallclock_secs: f64) {
        self.wallclock_secs = wallclock_secs;
        self.artifact_hash = self.content_hash();
    }

    /// Hash of everything that must replay bit-exactly.
    pub fn content_hash(&self) -> String {
        let content = serde_json::json!({
            "experiment": self.experiment,
            "config": self.config,
            "columns": self.columns,
            "rows": self.rows,
            "seed": self.seed,
        });
        Sha256::digest(content.to_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows
            .iter()
            .find(|r| r.label == row)
            .map(|r| r.values[c])
    }

    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.rows.iter().map(|r| r.values[c]).collect())
    }

    /// `{experiment}-{seed}-{timestamp}` without extension.
    pub fn stem(&self) -> String {
        format!("{}-{}-{}", self.experiment, self.seed, self.timestamp)
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.stem()));
        serde_json::to_writer_pretty(BufWriter::new(File::create(&json)?), self)?;
        let csv_path = dir.join(format!("{}.csv", self.stem()));
        let mut w =
            csv::Writer::from_path(&csv_path).map_err(|e| Error::data(&csv_path, e.to_string()))?;
        let mut header = vec!["label".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)
            .map_err(|e| Error::data(&csv_path, e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)
                .map_err(|e| Error::data(&csv_path, e.to_string()))?;
        }
        w.flush()?;
        Ok((json, csv_path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}
