//! Line-delimited JSON metrics stream.
//!
//! One header line, then exactly one complete record per update step. The
//! stream bytes are a pure function of (config, seed): wall-clock timing is
//! reported on stderr, never in the stream.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const METRICS_SCHEMA: &str = "metrics.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub schema: String,
    pub scenario: String,
    pub seed: u64,
}

/// One row per update step. Optional fields hold `null` when the quantity
/// is not defined for the scenario or not evaluated at this step, so every
/// record carries the full schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub scenario: String,
    pub mean_reward: f64,
    pub reward_compress: Option<f64>,
    pub reward_compose: Option<f64>,
    pub reward_edit: Option<f64>,
    pub reward_cycle: Option<f64>,
    pub reward_quality: Option<f64>,
    pub reward_correct: Option<f64>,
    pub reward_format: Option<f64>,
    pub kl: f64,
    pub clip_fraction_lm: f64,
    pub clip_fraction_dm: f64,
    pub grad_norm: f64,
    pub mean_reasoning_length: f64,
    pub judge_accuracy: Option<f64>,
    pub correction_rate: Option<f64>,
    /// Deterministic placeholder; real timing goes to stderr.
    pub wall_ms: f64,
}

pub struct MetricsWriter {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &MetricsHeader) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, header)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.file, record)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_metrics(path: &Path) -> Result<(MetricsHeader, Vec<MetricsRecord>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("empty metrics stream".into()))??;
    let header: MetricsHeader = serde_json::from_str(&header_line)?;
    if header.schema != METRICS_SCHEMA {
        return Err(Error::Format(format!(
            "unsupported metrics schema {}",
            header.schema
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok((header, records))
}
