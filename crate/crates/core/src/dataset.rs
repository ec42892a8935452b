//! Labelled samples in `[0,1]^d`.
//!
//! The CSV layout is `x_0, ..., x_{d-1}, label, dist` with a mandatory header;
//! `dist` is left empty when no boundary distances are known.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub gamma: Option<f64>,
    pub seed: u64,
    pub stage: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub d: usize,
    /// Row-major, `len() * d` values.
    pub points: Vec<f64>,
    pub labels: Vec<u8>,
    pub distances: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(d: usize, with_distances: bool) -> Self {
        LabeledDataset {
            d,
            points: Vec::new(),
            labels: Vec::new(),
            distances: with_distances.then(Vec::new),
            meta: DatasetMeta::default(),
        }
    }

    pub fn push(&mut self, x: &[f64], label: u8, dist: Option<f64>) {
        debug_assert_eq!(x.len(), self.d);
        self.points.extend_from_slice(x);
        self.labels.push(label);
        if let (Some(ds), Some(v)) = (self.distances.as_mut(), dist) {
            ds.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn distance(&self, i: usize) -> Option<f64> {
        self.distances.as_ref().map(|ds| ds[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u8)> {
        self.points
            .chunks(self.d.max(1))
            .zip(self.labels.iter().copied())
    }

    /// `[count of label 0, count of label 1]`
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&y| y == 1).count();
        [self.len() - ones, ones]
    }

    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = LabeledDataset::new(self.d, self.distances.is_some());
        out.meta = self.meta.clone();
        out.points.reserve(indices.len() * self.d);
        for &i in indices {
            out.push(self.point(i), self.labels[i], self.distance(i));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.len() * self.d {
            return Err(Error::Config(format!(
                "{} coordinates for {} points of dimension {}",
                self.points.len(),
                self.len(),
                self.d
            )));
        }
        if let Some(ds) = &self.distances {
            if ds.len() != self.len() || ds.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Config(
                    "distances must be non-negative, one per point".into(),
                ));
            }
        }
        if self.points.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Config("coordinates must lie in [0, 1]".into()));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.d).map(|j| format!("x_{j}")).collect();
        header.push("label".into());
        header.push("dist".into());
        wr.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(self.d + 2);
        for i in 0..self.len() {
            row.clear();
            row.extend(self.point(i).iter().map(f64::to_string));
            row.push(self.labels[i].to_string());
            row.push(self.distance(i).map(|v| v.to_string()).unwrap_or_default());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let n_cols = header.len();
        if n_cols < 3 || &header[n_cols - 2] != "label" || &header[n_cols - 1] != "dist" {
            return Err(Error::Config(
                "dataset CSV must have columns x_0..x_{d-1},label,dist".into(),
            ));
        }
        let d = n_cols - 2;
        let mut ds = LabeledDataset::new(d, true);
        let mut any_missing = false;
        let mut x = vec![0.0; d];
        for rec in rd.records() {
            let rec = rec?;
            for (j, v) in x.iter_mut().enumerate() {
                *v = parse_f64(&rec[j])?;
            }
            let label: u8 = rec[d]
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad label {:?}", &rec[d])))?;
            let dist = rec[d + 1].trim();
            let dist = if dist.is_empty() {
                any_missing = true;
                0.0
            } else {
                parse_f64(dist)?
            };
            ds.push(&x, label, Some(dist));
        }
        if any_missing {
            ds.distances = None;
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad number {s:?}")))
}
