//! Distances to decision boundaries and Monte-Carlo estimates of the mass of
//! margins, tubes and classifier disagreement.
//!
//! Estimators split `n_mc` draws into fixed chunks; chunk `c` uses stream `c`
//! of the generator keyed by the seed, and chunk counts are summed as
//! integers. The result depends only on `(seed, n_mc)`, never on the number
//! of threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::CoverPiece;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::stats::log_log_fit;

const CHUNK: usize = 8192;
const DISAGREEMENT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Boundary {
    /// `{‖x‖ = radius}`; the set is the closed ball.
    Sphere { radius: f64, dim: usize },
    /// `{<normal, x> + offset = 0}`; the set is `{<normal, x> + offset <= 0}`.
    Affine { normal: Vec<f64>, offset: f64 },
    /// Graph of a cover piece; the set is its horizon region.
    Graph(Box<CoverPiece<f64>>),
}

impl Boundary {
    pub fn sphere(radius: f64, dim: usize) -> Result<Self> {
        let b = Boundary::Sphere { radius, dim };
        b.validate()?;
        Ok(b)
    }

    pub fn affine(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let b = Boundary::Affine { normal, offset };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Boundary::Sphere { radius, dim } => {
                if !(*radius > 0.0 && *radius < 1.0) || *dim == 0 {
                    return Err(Error::Parameter(format!(
                        "sphere needs radius in (0, 1) and dim >= 1, got {radius}, {dim}"
                    )));
                }
            }
            Boundary::Affine { normal, offset } => {
                if normal.iter().all(|&v| v == 0.0) || !offset.is_finite() {
                    return Err(Error::Parameter("affine normal must be non-zero".into()));
                }
            }
            Boundary::Graph(piece) => piece.validate()?,
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Boundary::Sphere { dim, .. } => *dim,
            Boundary::Affine { normal, .. } => normal.len(),
            Boundary::Graph(piece) => piece.dim(),
        }
    }

    /// Euclidean distance for spheres and hyperplanes, vertical distance for
    /// graphs.
    pub fn dist(&self, x: &[f64]) -> f64 {
        match self {
            Boundary::Sphere { radius, .. } => (radius - norm(x)).abs(),
            Boundary::Affine { normal, offset } => (dot(normal, x) + offset).abs() / norm(normal),
            Boundary::Graph(piece) => piece.vertical_distance(x),
        }
    }

    pub fn indicator(&self, x: &[f64]) -> f64 {
        let inside = match self {
            Boundary::Sphere { radius, .. } => norm(x) <= *radius,
            Boundary::Affine { normal, offset } => dot(normal, x) + offset <= 0.0,
            Boundary::Graph(piece) => piece.horizon(x),
        };
        if inside {
            1.0
        } else {
            0.0
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// A distribution on `[0,1]^d` that can be sampled from a ChaCha stream.
pub trait PointSource: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

#[derive(Clone, Copy, Debug)]
pub struct UniformCube {
    pub d: usize,
}

impl PointSource for UniformCube {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = rng.random());
    }
}

/// Uniform draws thinned by the margin rule: a point at distance
/// `dist <= c_d` from the boundary survives with probability `(dist/c_d)^γ`.
#[derive(Clone, Debug)]
pub struct MarginRejected {
    pub boundary: Boundary,
    pub gamma: f64,
    pub c_d: f64,
}

impl PointSource for MarginRejected {
    fn dim(&self) -> usize {
        self.boundary.dim()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        loop {
            out.iter_mut().for_each(|v| *v = rng.random());
            let dist = self.boundary.dist(out);
            if dist > self.c_d || rng.random::<f64>() < (dist / self.c_d).powf(self.gamma) {
                return;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    fn from_count(count: u64, n: usize) -> Self {
        let p = if n == 0 { 0.0 } else { count as f64 / n as f64 };
        let stderr = if n == 0 {
            0.0
        } else {
            (p * (1.0 - p) / n as f64).sqrt()
        };
        McEstimate {
            estimate: p,
            stderr,
            n,
        }
    }
}

/// Counts draws for which `hit` is true. `hit` sees one chunk of points at a
/// time (row-major) and returns how many of them count.
fn mc_count<S, F>(src: &S, n_mc: usize, seed: u64, hit: F) -> u64
where
    S: PointSource + ?Sized,
    F: Fn(&[f64]) -> u64 + Sync,
{
    let d = src.dim();
    let chunks = n_mc.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n_mc - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            let mut pts = vec![0.0; len * d];
            for x in pts.chunks_mut(d) {
                src.sample(&mut rng, x);
            }
            hit(&pts)
        })
        .sum()
}

/// Fraction of draws within distance `eps` of the boundary.
pub fn estimate_margin_mass<S: PointSource + ?Sized>(
    src: &S,
    boundary: &Boundary,
    eps: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_dims(src.dim(), boundary.dim())?;
    let d = src.dim();
    let count = mc_count(src, n_mc, seed, |pts| {
        pts.chunks(d).filter(|x| boundary.dist(x) <= eps).count() as u64
    });
    Ok(McEstimate::from_count(count, n_mc))
}

/// Fraction of draws with `|x_i - f(x^(i))| <= eps`, where `x^(i)` drops
/// coordinate `i` and keeps the others in order.
pub fn estimate_tube_mass<S, F>(
    src: &S,
    f: F,
    i: usize,
    eps: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate>
where
    S: PointSource + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = src.dim();
    if i >= d {
        return Err(Error::Parameter(format!(
            "coordinate {i} out of range for d = {d}"
        )));
    }
    let count = mc_count(src, n_mc, seed, |pts| {
        let mut rest = vec![0.0; d - 1];
        pts.chunks(d)
            .filter(|x| {
                for (k, r) in rest.iter_mut().enumerate() {
                    *r = x[if k < i { k } else { k + 1 }];
                }
                (x[i] - f(&rest)).abs() <= eps
            })
            .count() as u64
    });
    Ok(McEstimate::from_count(count, n_mc))
}

/// Fraction of draws where the network output differs from `indicator` by
/// more than `1e-9`.
pub fn estimate_disagreement<T, S, F>(
    net: &NetworkParams<T>,
    indicator: F,
    src: &S,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate>
where
    T: Scalar,
    S: PointSource + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_dims(src.dim(), net.input_dim())?;
    let d = src.dim();
    let count = mc_count(src, n_mc, seed, |pts| {
        let xs: Vec<T> = pts.iter().map(|&v| T::of(v)).collect();
        let out = net.forward_batch(&xs).expect("dimensions checked");
        pts.chunks(d)
            .zip(out)
            .filter(|(x, y)| (y.to_f64_lossy() - indicator(x)).abs() > DISAGREEMENT_TOL)
            .count() as u64
    });
    Ok(McEstimate::from_count(count, n_mc))
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}

/// Slope of `ln mass` against `ln eps`. Points with non-positive mass are
/// dropped; at least two must remain.
pub fn fit_margin_exponent(eps: &[f64], masses: &[f64]) -> Result<f64> {
    if eps.len() != masses.len() {
        return Err(Error::Shape {
            expected: eps.len(),
            got: masses.len(),
        });
    }
    let (e, m): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(masses)
        .filter(|(&e, &m)| m > 0.0 && e > 0.0)
        .map(|(&e, &m)| (e, m))
        .unzip();
    if e.len() < 2 {
        return Err(Error::Fit {
            needed: 2,
            got: e.len(),
        });
    }
    Ok(log_log_fit(&e, &m)?.slope)
}

/// Fraction of points of `ds` whose stored distance is at most `eps`.
pub fn empirical_margin_mass(ds: &LabeledDataset, eps: f64) -> Result<f64> {
    let dist = ds
        .distances
        .as_ref()
        .ok_or_else(|| Error::Config("dataset carries no distances".into()))?;
    if dist.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dist.iter().filter(|&&v| v <= eps).count() as f64 / dist.len() as f64)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
            .collect(),
    }
}
