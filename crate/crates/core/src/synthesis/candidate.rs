use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::{Mode, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthesis,
    Fuzz,
}

/// An input of A together with its accumulated mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiCandidate {
    pub base: Vec<f64>,
    #[serde(rename = "V")]
    pub perturbation: Vec<f64>,
    pub target: usize,
    #[serde(rename = "r")]
    pub attack_accuracy: f64,
    pub rounds: usize,
    pub strategy: Option<Strategy>,
    pub mode: Option<Mode>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl AdiCandidate {
    /// The mutated input `base + V`.
    pub fn input(&self) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.perturbation)
            .map(|(b, v)| b + v)
            .collect()
    }

    pub fn succeeded(&self, threshold: f64) -> bool {
        self.attack_accuracy >= threshold
    }
}

pub fn write_candidates(path: &Path, candidates: &[AdiCandidate]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in candidates {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_candidates(path: &Path) -> Result<Vec<AdiCandidate>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::data(path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}
