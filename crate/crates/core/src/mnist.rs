//! The 784-dimensional data path: IDX ingestion, SMOTE balancing, a pilot
//! network whose outputs act as a proxy for the distance to the decision
//! boundary, and threshold trimming around the pilot's decision level.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::nn::NetworkParams;
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::train::{fit, TrainConfig};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const PIXELS: usize = 784;
pub const PILOT_ARCH: [usize; 5] = [784, 256, 128, 64, 1];
pub const SMOTE_K: usize = 5;
pub const SMOTE_GROWTH: f64 = 1.95;
pub const TRIM_FRACTION: f64 = 0.001;
pub const MIN_CALIBRATION: usize = 1000;

const KNN_BLOCK: usize = 256;

struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(Reader {
            path,
            bytes: std::fs::read(path)?,
            pos: 0,
        })
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated file: needed {n} more bytes"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, want: u32) -> Result<()> {
        let got = self.u32()?;
        if got != want {
            return Err(self.err(0, format!("bad magic 0x{got:08x}, expected 0x{want:08x}")));
        }
        Ok(())
    }
}

/// Reads an IDX image/label pair and keeps the digits 0 and 1, with pixels
/// scaled to `[0,1]` and the digit as label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let mut img = Reader::open(images.as_ref())?;
    let mut lab = Reader::open(labels.as_ref())?;
    img.magic(IMAGE_MAGIC)?;
    lab.magic(LABEL_MAGIC)?;
    let n_img = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let n_lab = lab.u32()? as usize;
    if n_img != n_lab {
        return Err(lab.err(
            4,
            format!("label count {n_lab} does not match image count {n_img}"),
        ));
    }
    let d = rows * cols;
    let mut ds = LabeledDataset::new(d, false);
    ds.meta.stage = "mnist".into();
    let mut x = vec![0.0; d];
    for _ in 0..n_img {
        let digit = lab.take(1)?[0];
        let px = img.take(d)?;
        if digit <= 1 {
            for (v, &b) in x.iter_mut().zip(px) {
                *v = b as f64 / 255.0;
            }
            ds.push(&x, digit, None);
        }
    }
    Ok(ds)
}

/// Indices of the `k` nearest other points of each row of `pts`
/// (`n x d`, row-major), nearest first, ties broken by index.
pub fn nearest_neighbors(pts: &[f64], d: usize, k: usize) -> Vec<Vec<usize>> {
    let n = pts.len() / d;
    let norms: Vec<f64> = pts
        .chunks(d)
        .map(|x| x.iter().map(|v| v * v).sum())
        .collect();
    (0..n.div_ceil(KNN_BLOCK))
        .into_par_iter()
        .flat_map_iter(|b| {
            let lo = b * KNN_BLOCK;
            let m = KNN_BLOCK.min(n - lo);
            let mut g = vec![0.0; m * n];
            gemm(m, d, n, Mat::n(&pts[lo * d..]), Mat::t(pts), 0.0, &mut g);
            let norms = &norms;
            (0..m)
                .map(|r| {
                    let q = lo + r;
                    let mut cand: Vec<(f64, usize)> = (0..n)
                        .filter(|&j| j != q)
                        .map(|j| (norms[q] + norms[j] - 2.0 * g[r * n + j], j))
                        .collect();
                    let by = |a: &(f64, usize), b: &(f64, usize)| {
                        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                    };
                    let kk = k.min(cand.len());
                    if kk < cand.len() {
                        cand.select_nth_unstable_by(kk, by);
                        cand.truncate(kk);
                    }
                    cand.sort_by(by);
                    cand.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `x + lambda (nn - x)`, clipped to `[0,1]`.
pub fn interpolate(x: &[f64], nn: &[f64], lambda: f64, out: &mut [f64]) {
    for ((o, &a), &b) in out.iter_mut().zip(x).zip(nn) {
        *o = (a + lambda * (b - a)).clamp(0.0, 1.0);
    }
}

/// Grows both classes to `⌈1.95 · max class size⌉` with SMOTE on the `k`
/// nearest same-class neighbours. Original points come first, unchanged.
pub fn smote_balance(ds: &LabeledDataset, k: usize, seed: u64) -> Result<LabeledDataset> {
    if k == 0 {
        return Err(Error::Parameter("SMOTE needs k >= 1".into()));
    }
    let counts = ds.class_counts();
    for (c, &n) in counts.iter().enumerate() {
        if n < k + 1 {
            return Err(Error::Parameter(format!(
                "class {c} has {n} points, SMOTE with k = {k} needs at least {}",
                k + 1
            )));
        }
    }
    let target = (SMOTE_GROWTH * counts[0].max(counts[1]) as f64).ceil() as usize;
    let d = ds.d;
    let mut out = LabeledDataset::new(d, false);
    out.meta = ds.meta.clone();
    out.meta.seed = seed;
    out.meta.stage = format!("{}+smote", ds.meta.stage);
    out.points.extend_from_slice(&ds.points);
    out.labels.extend_from_slice(&ds.labels);
    let mut x = vec![0.0; d];
    for c in 0..2u8 {
        let idx = ds.indices_of(c);
        let pts = ds.select(&idx).points;
        let nbrs = nearest_neighbors(&pts, d, k);
        let mut rng = stream_rng(seed, 4 + c as u64);
        for _ in idx.len()..target {
            let base = rng.random_range(0..idx.len());
            let nn = nbrs[base][rng.random_range(0..k)];
            let lambda: f64 = rng.random();
            interpolate(
                &pts[base * d..(base + 1) * d],
                &pts[nn * d..(nn + 1) * d],
                lambda,
                &mut x,
            );
            out.push(&x, c, None);
        }
    }
    Ok(out)
}

/// Budget of the pilot network.
pub fn pilot_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 200,
        patience: 5,
        seed,
        ..Default::default()
    }
}

/// Trains the `(784, 256, 128, 64, 1)` pilot with hinge loss and a sigmoid
/// output. The input dimension follows the data.
pub fn fit_pilot<T: Scalar>(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<NetworkParams<T>> {
    Ok(fit::<T>(&pilot_arch(ds.d), ds, cfg)?.net)
}

fn pilot_arch(d: usize) -> Vec<usize> {
    let mut arch = PILOT_ARCH.to_vec();
    arch[0] = d;
    arch
}

/// Picks `ℓ <= u` so that `[ℓ, u]` holds `⌈0.001 n⌉` values: the largest
/// class-0 outputs and the smallest class-1 outputs, half from each side.
/// Class-0 outputs must all lie below class-1 outputs.
pub fn calibrate_thresholds(w: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    if w.len() != labels.len() {
        return Err(Error::Shape {
            expected: w.len(),
            got: labels.len(),
        });
    }
    if w.len() < MIN_CALIBRATION {
        return Err(Error::Parameter(format!(
            "calibration needs at least {MIN_CALIBRATION} outputs, got {}",
            w.len()
        )));
    }
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::Calibration("all outputs are equal".into()));
    }
    let mut w0: Vec<f64> = w
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&v, _)| v)
        .collect();
    let mut w1: Vec<f64> = w
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&v, _)| v)
        .collect();
    if w0.is_empty() || w1.is_empty() {
        return Err(Error::Calibration("both classes are needed".into()));
    }
    w0.sort_by(|a, b| b.total_cmp(a));
    w1.sort_by(f64::total_cmp);
    if w0[0] >= w1[0] {
        return Err(Error::Calibration(format!(
            "classes overlap: max class-0 output {} >= min class-1 output {}",
            w0[0], w1[0]
        )));
    }
    let k = (TRIM_FRACTION * w.len() as f64).ceil() as usize;
    let k0 = k.div_ceil(2).min(w0.len());
    let k1 = (k - k0).min(w1.len());
    let ell = if k0 > 0 { w0[k0 - 1] } else { w1[0] };
    let u = if k1 > 0 { w1[k1 - 1] } else { w0[0] };
    Ok((ell, u))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyDistanceModel {
    pub pilot: NetworkParams<f64>,
    pub ell: f64,
    pub u: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl ProxyDistanceModel {
    pub fn new(
        pilot: NetworkParams<f64>,
        ell: f64,
        u: f64,
        w_min: f64,
        w_max: f64,
    ) -> Result<Self> {
        let m = ProxyDistanceModel {
            pilot,
            ell,
            u,
            w_min,
            w_max,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.ell
            && self.ell <= self.u
            && self.u < 1.0
            && self.w_min < self.ell
            && self.u < self.w_max;
        if !ok {
            return Err(Error::Calibration(format!(
                "need 0 < ell <= u < 1 and w_min < ell, u < w_max; got ell = {}, u = {}, w in [{}, {}]",
                self.ell, self.u, self.w_min, self.w_max
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear map sending `w_min, ℓ, u, w_max` to `0, 1/2, 1/2, 1`.
pub fn rescale_map(w: f64, model: &ProxyDistanceModel) -> f64 {
    let w = if w < model.w_min || w > model.w_max {
        log::warn!(
            "pilot output {w} outside [{}, {}], clamping",
            model.w_min,
            model.w_max
        );
        w.clamp(model.w_min, model.w_max)
    } else {
        w
    };
    if w <= model.ell {
        0.5 * (w - model.w_min) / (model.ell - model.w_min)
    } else if w < model.u {
        0.5
    } else {
        0.5 + 0.5 * (w - model.u) / (model.w_max - model.u)
    }
}

pub fn proxy_distance(x: &[f64], model: &ProxyDistanceModel) -> Result<f64> {
    let w = model.pilot.eval(x)?;
    Ok((0.5 - rescale_map(w, model)).abs())
}

/// Pilot outputs for every point of `ds`.
pub fn pilot_outputs(pilot: &NetworkParams<f64>, ds: &LabeledDataset) -> Result<Vec<f64>> {
    pilot.predict(&ds.points)
}

/// Random subset with equally many points of each class; order is kept.
pub fn equalize_classes(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let counts = ds.class_counts();
    let m = counts[0].min(counts[1]);
    let mut rng = stream_rng(seed, 6);
    let mut keep: Vec<usize> = (0..2u8)
        .flat_map(|c| {
            let mut idx = ds.indices_of(c);
            idx.shuffle(&mut rng);
            idx.truncate(m);
            idx
        })
        .collect();
    keep.sort_unstable();
    ds.select(&keep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistConfig {
    pub k: usize,
    pub seed: u64,
    pub pilot: TrainConfig,
}

impl MnistConfig {
    pub fn new(seed: u64) -> Self {
        MnistConfig {
            k: SMOTE_K,
            seed,
            pilot: pilot_config(seed),
        }
    }
}

/// Point counts along one set's path through the pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub raw: [usize; 2],
    pub smote: [usize; 2],
    pub misclassified: usize,
    /// Correctly predicted points fed to the trimming rule.
    pub calibrated: usize,
    pub trimmed: usize,
    pub clamped: usize,
    pub kept: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MnistReport {
    pub pilot_train_accuracy: f64,
    pub epochs_run: usize,
    pub train: StageCounts,
    pub test: StageCounts,
}

pub struct Prepared {
    pub model: ProxyDistanceModel,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub report: MnistReport,
}

struct Filtered {
    ds: LabeledDataset,
    counts: StageCounts,
}

/// Drops misclassified points and points with pilot output in `[ℓ, u]`,
/// attaches proxy distances and equalizes classes.
fn finish(
    smoted: &LabeledDataset,
    w: &[f64],
    model: &ProxyDistanceModel,
    seed: u64,
    counts: &mut StageCounts,
) -> Filtered {
    let mut out = LabeledDataset::new(smoted.d, true);
    out.meta = smoted.meta.clone();
    out.meta.stage = format!("{}+proxy", smoted.meta.stage);
    for (i, (x, y)) in smoted.iter().enumerate() {
        let wi = w[i];
        if (wi >= 0.5) != (y == 1) {
            counts.misclassified += 1;
            continue;
        }
        counts.calibrated += 1;
        if wi >= model.ell && wi <= model.u {
            counts.trimmed += 1;
            continue;
        }
        if wi < model.w_min || wi > model.w_max {
            counts.clamped += 1;
        }
        out.push(x, y, Some((0.5 - rescale_map(wi, model)).abs()));
    }
    let ds = equalize_classes(&out, seed);
    counts.kept = ds.class_counts();
    Filtered {
        ds,
        counts: counts.clone(),
    }
}

/// Runs the full path on raw 0/1 train and test sets. The pilot and the
/// thresholds come from the training set only.
pub fn prepare(
    train_raw: &LabeledDataset,
    test_raw: &LabeledDataset,
    cfg: &MnistConfig,
) -> Result<Prepared> {
    let train = smote_balance(train_raw, cfg.k, cfg.seed)?;
    let test = smote_balance(test_raw, cfg.k, cfg.seed ^ 1)?;
    let outcome = fit::<f32>(&pilot_arch(train.d), &train, &cfg.pilot)?;
    let pilot: NetworkParams<f64> = outcome.net.cast();

    let w_train = pilot_outputs(&pilot, &train)?;
    let correct: Vec<usize> = (0..train.len())
        .filter(|&i| (w_train[i] >= 0.5) == (train.labels[i] == 1))
        .collect();
    let accuracy = correct.len() as f64 / train.len() as f64;
    log::info!(
        "pilot training accuracy {accuracy:.5} after {} epochs",
        outcome.epochs_run
    );
    let wc: Vec<f64> = correct.iter().map(|&i| w_train[i]).collect();
    let lc: Vec<u8> = correct.iter().map(|&i| train.labels[i]).collect();
    let (ell, u) = calibrate_thresholds(&wc, &lc)?;
    let w_min = wc.iter().copied().fold(f64::INFINITY, f64::min);
    let w_max = wc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let model = ProxyDistanceModel::new(pilot, ell, u, w_min, w_max)?;

    let mut tc = StageCounts {
        raw: train_raw.class_counts(),
        smote: train.class_counts(),
        ..Default::default()
    };
    let tr = finish(&train, &w_train, &model, cfg.seed, &mut tc);
    let w_test = pilot_outputs(&model.pilot, &test)?;
    let mut sc = StageCounts {
        raw: test_raw.class_counts(),
        smote: test.class_counts(),
        ..Default::default()
    };
    let te = finish(&test, &w_test, &model, cfg.seed ^ 1, &mut sc);
    Ok(Prepared {
        model,
        train: tr.ds,
        test: te.ds,
        report: MnistReport {
            pilot_train_accuracy: accuracy,
            epochs_run: outcome.epochs_run,
            train: tr.counts,
            test: te.counts,
        },
    })
}

/// Writes a minimal IDX pair; used to build fixtures.
pub fn write_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    digits: &[u8],
) -> Result<()> {
    let n = digits.len();
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [n, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(digits);
    std::fs::write(images, img)?;
    std::fs::write(labels, lab)?;
    Ok(())
}
