//! One row of experiment output per trained network.

use std::fs::{File, OpenOptions};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub d: usize,
    pub gamma: f64,
    pub n: usize,
    pub iteration: usize,
    pub seed: u64,
    pub hinge_risk: f64,
    pub zero_one_risk: f64,
    pub epochs_run: usize,
    pub wall_seconds: f64,
    pub config_hash: String,
}

impl RiskRecord {
    /// Identity of the sweep cell the row belongs to.
    pub fn cell_key(&self) -> (usize, u64, usize, usize) {
        (self.d, self.gamma.to_bits(), self.n, self.iteration)
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RiskRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let rows = rd
        .deserialize()
        .collect::<std::result::Result<Vec<RiskRecord>, _>>()?;
    Ok(rows)
}

/// Rewrites `path` with the given rows and a header.
pub fn write_records(path: impl AsRef<Path>, rows: &[RiskRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Appends rows to a CSV file, writing the header only if the file is new
/// or empty. Every row is flushed as soon as it is written.
pub struct RecordAppender {
    writer: csv::Writer<File>,
}

impl RecordAppender {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = std::fs::metadata(path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        Ok(RecordAppender { writer })
    }

    pub fn append(&mut self, row: &RiskRecord) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}
