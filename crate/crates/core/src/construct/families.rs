//! Boundary families with shallow approximants whose sup-norm error is known.
//!
//! * affine boundaries `<w, z> + c` are represented exactly by one ReLU unit;
//! * cosine boundaries `1/2 + β cos(<w, z>)` are ridge functions of
//!   `s = <w, z>`, approximated by a continuous piecewise-linear function of
//!   `s` with `N` uniformly spaced knots. The output weights are fitted by
//!   least squares, and the sup error is certified on a dense grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::{FinalActivation, Layer, NetworkParams};
use crate::scalar::Scalar;

use super::delta_from;
use super::spec::{BoundaryFn, ClassifierSpec, CoverPiece, Interval, Orientation};

const FIT_GRID: usize = 4096;
const CERT_GRID: usize = 100_001;

/// Shallow network equal to `<weights, z> + offset` on `[0,1]^k`, using the
/// first of `width` hidden units (the rest are zero).
pub fn affine_approximant<T: Scalar>(
    weights: &[f64],
    offset: f64,
    width: usize,
) -> Result<NetworkParams<T>> {
    let k = weights.len();
    if k == 0 || width == 0 {
        return Err(Error::Parameter(
            "affine approximant needs k >= 1 and width >= 1".into(),
        ));
    }
    // Shift so the ReLU argument is non-negative on the whole cube.
    let lowest = offset + weights.iter().map(|w| w.min(0.0)).sum::<f64>();
    let shift = (-lowest).max(0.0);
    let mut hidden = Layer::<T>::zeros(width, k);
    for (j, &w) in weights.iter().enumerate() {
        hidden.set(0, j, T::of(w));
    }
    hidden.bias[0] = T::of(offset + shift);
    let mut out = Layer::<T>::zeros(1, width);
    out.set(0, 0, T::one());
    out.bias[0] = T::of(-shift);
    NetworkParams::new(vec![hidden, out], FinalActivation::Identity)
}

/// Range of `<freq, z>` over `z ∈ [0,1]^k`.
fn ridge_range(freq: &[f64]) -> (f64, f64) {
    let lo = freq.iter().map(|w| w.min(0.0)).sum();
    let hi = freq.iter().map(|w| w.max(0.0)).sum();
    (lo, hi)
}

/// Least-squares piecewise-linear approximant of `1/2 + β cos(<freq, z>)`
/// with `n` hidden units. Returns the network and its sup error over the cube.
pub fn cosine_approximant<T: Scalar>(
    beta: f64,
    freq: &[f64],
    n: usize,
) -> Result<(NetworkParams<T>, f64)> {
    if n == 0 || freq.is_empty() {
        return Err(Error::Parameter(
            "cosine approximant needs n >= 1 and k >= 1".into(),
        ));
    }
    if !(0.0..=0.5).contains(&beta.abs()) {
        return Err(Error::Parameter(format!(
            "|beta| = {} would leave [0, 1]",
            beta.abs()
        )));
    }
    let g = |s: f64| 0.5 + beta * s.cos();
    let (lo, hi) = ridge_range(freq);
    let k = freq.len();
    let mut hidden = Layer::<T>::zeros(n, k);
    let mut out = Layer::<T>::zeros(1, n);
    if hi - lo <= 0.0 {
        out.bias[0] = T::of(g(0.0));
        let net = NetworkParams::new(vec![hidden, out], FinalActivation::Identity)?;
        return Ok((net, 0.0));
    }
    let h = (hi - lo) / n as f64;
    let knots: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();

    // Design matrix: column 0 is the constant, column 1 + i is ϱ(s - knot_i).
    let grid: Vec<f64> = (0..FIT_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (FIT_GRID - 1) as f64)
        .collect();
    let a = DMatrix::from_fn(FIT_GRID, n + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            (grid[r] - knots[c - 1]).max(0.0)
        }
    });
    let y = DVector::from_iterator(FIT_GRID, grid.iter().map(|&s| g(s)));
    let coef = a
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Parameter(format!("least squares failed: {e}")))?;

    for (i, &knot) in knots.iter().enumerate() {
        for (j, &w) in freq.iter().enumerate() {
            hidden.set(i, j, T::of(w));
        }
        hidden.bias[i] = T::of(-knot);
        out.set(0, i, T::of(coef[i + 1]));
    }
    out.bias[0] = T::of(coef[0]);
    let net = NetworkParams::new(vec![hidden, out], FinalActivation::Identity)?;

    // Both the target and the network depend on z only through s, so the sup
    // over the cube is the sup over [lo, hi]. The grid includes every knot.
    let stored = |v: f64| T::of(v).to_f64_lossy();
    let mut sup: f64 = 0.0;
    for i in 0..CERT_GRID {
        let s = lo + (hi - lo) * i as f64 / (CERT_GRID - 1) as f64;
        let approx = stored(coef[0])
            + knots
                .iter()
                .enumerate()
                .map(|(k, &kn)| stored(coef[k + 1]) * (s - stored(kn)).max(0.0))
                .sum::<f64>();
        sup = sup.max((approx - g(s)).abs());
    }
    Ok((net, sup))
}

/// Cosine approximant whose sup error is certified to be at most
/// `c1 * sqrt((d-1)/n)`.
pub fn certified_cosine_approximant<T: Scalar>(
    beta: f64,
    freq: &[f64],
    n: usize,
    c1: f64,
) -> Result<NetworkParams<T>> {
    let d = freq.len() + 1;
    let allowed = delta_from(c1, d, n);
    let (net, sup) = cosine_approximant(beta, freq, n)?;
    if sup > allowed {
        return Err(Error::Certificate {
            sup_error: sup,
            allowed,
        });
    }
    Ok(net)
}

/// Half-space `{x_{d-1} <= <w, x_{..d-1}> + c}` as a single-piece spec on the
/// unit cube.
pub fn affine_spec<T: Scalar>(
    weights: &[f64],
    offset: f64,
    n: usize,
    c1: f64,
    gamma: f64,
    alpha: f64,
) -> Result<ClassifierSpec<T>> {
    let d = weights.len() + 1;
    let piece = CoverPiece {
        rectangle: vec![Interval::unit(); d],
        permutation: (0..d).collect(),
        distinguished_coord: d - 1,
        orientation: Orientation::Below,
        approximant: affine_approximant(weights, offset, 1)?,
        boundary: Some(BoundaryFn::Affine {
            weights: weights.to_vec(),
            offset,
        }),
    };
    let spec = ClassifierSpec {
        pieces: vec![piece],
        c1,
        gamma,
        alpha,
        n,
        margin: None,
    };
    spec.validate()?;
    Ok(spec)
}

/// `m` equal slabs along coordinate 0, each carrying a cosine boundary in the
/// last coordinate with alternating orientation.
pub fn cosine_slab_spec<T: Scalar>(
    d: usize,
    m: usize,
    n: usize,
    c1: f64,
    gamma: f64,
    alpha: f64,
    beta: f64,
) -> Result<ClassifierSpec<T>> {
    if d < 2 || m == 0 {
        return Err(Error::Parameter(format!(
            "need d >= 2 and m >= 1, got d = {d}, m = {m}"
        )));
    }
    let pieces = (0..m)
        .map(|slab| {
            // <freq, z> sweeps [0, π(1 + slab/m)] over the cube.
            let scale =
                std::f64::consts::PI * (1.0 + slab as f64 / m as f64) * 2.0 / (d * (d - 1)) as f64;
            let freq: Vec<f64> = (0..d - 1).map(|j| scale * (j + 1) as f64).collect();
            let mut rectangle = vec![Interval::unit(); d];
            rectangle[0] = Interval::new(slab as f64 / m as f64, (slab + 1) as f64 / m as f64);
            let mut permutation: Vec<usize> = (0..d).collect();
            permutation[..d - 1].reverse();
            Ok(CoverPiece {
                rectangle,
                permutation,
                distinguished_coord: d - 1,
                orientation: if slab % 2 == 0 {
                    Orientation::Below
                } else {
                    Orientation::Above
                },
                approximant: certified_cosine_approximant(beta, &freq, n, c1)?,
                boundary: Some(BoundaryFn::Cosine { beta, freq }),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = ClassifierSpec {
        pieces,
        c1,
        gamma,
        alpha,
        n,
        margin: None,
    };
    spec.validate()?;
    Ok(spec)
}
