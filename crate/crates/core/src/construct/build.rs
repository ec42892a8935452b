//! Assembly of the three-hidden-layer classifier from cover pieces.
//!
//! Per piece the hidden layers are
//!
//! 1. the `N_m` units of the shallow approximant, `ϱ(±x_j)` for every
//!    coordinate, and `ϱ(±x_i)` once more for the distinguished coordinate;
//! 2. the two arms `ϱ(s(Φ_m(x^(i)) - x_i))`, `ϱ(s(Φ_m(x^(i)) - x_i) - δ)` of the
//!    `H_δ` gate (`s = -1` for the "above" orientation) and the four
//!    trapezoid units per coordinate;
//! 3. the single unit `ϱ(Σ_j t_j(x_j) + Φ̃_m(x) - d)`.
//!
//! `x_j` is recovered as `ϱ(x_j) - ϱ(-x_j)`. The inner `ϱ(Φ̃_m)` is taken as
//! `Φ̃_m` itself, which is already non-negative.
//!
//! Pieces are stacked block-diagonally and summed with unit weights.

use crate::error::{Error, Result};
use crate::nn::{FinalActivation, Layer, NetworkParams};
use crate::scalar::Scalar;

use super::gates::{tube_biases, TUBE_SIGNS};
use super::spec::{ClassifierSpec, CoverPiece, Orientation};

/// Hidden-layer widths of one piece with an approximant of width `width`.
pub(crate) fn piece_widths(d: usize, width: usize) -> [usize; 3] {
    [width + 2 * d + 2, 4 * d + 2, 1]
}

fn is_degenerate<T: Scalar>(piece: &CoverPiece<T>, deltahat: f64) -> bool {
    piece.rectangle.iter().any(|iv| iv.len() < 2.0 * deltahat)
}

/// Network computing `Φ̂_m(x, Φ̃_m(x))` for a single piece.
///
/// Returns the all-zero network of the same shape when some side of the
/// rectangle is shorter than `2δ̂`.
pub fn build_piece_network<T: Scalar>(
    piece: &CoverPiece<T>,
    delta: f64,
    deltahat: f64,
) -> Result<NetworkParams<T>> {
    if !(delta > 0.0 && deltahat > 0.0) {
        return Err(Error::Parameter(format!(
            "delta and deltahat must be positive, got {delta} and {deltahat}"
        )));
    }
    piece.validate()?;
    let d = piece.dim();
    let approx = piece.approximant.layers();
    let (a_hidden, a_out) = (&approx[0], &approx[1]);
    let width = a_hidden.rows();
    let [w1, w2, w3] = piece_widths(d, width);

    let mut l1 = Layer::<T>::zeros(w1, d);
    let mut l2 = Layer::<T>::zeros(w2, w1);
    let mut l3 = Layer::<T>::zeros(w3, w2);
    let out = Layer::new(1, 1, vec![T::one()], vec![T::zero()])?;

    if is_degenerate(piece, deltahat) {
        let out = Layer::<T>::zeros(1, 1);
        return NetworkParams::new(vec![l1, l2, l3, out], FinalActivation::Identity);
    }

    let one = T::one();
    let free = piece.free_coords();
    let xi = piece.distinguished_coord;

    // Layer 1.
    for r in 0..width {
        for (j, &c) in free.iter().enumerate() {
            l1.set(r, c, a_hidden.weight(r, j));
        }
        l1.bias[r] = a_hidden.bias()[r];
    }
    let pos = |j: usize| width + 2 * j;
    let neg = |j: usize| width + 2 * j + 1;
    for j in 0..d {
        l1.set(pos(j), j, one);
        l1.set(neg(j), j, -one);
    }
    let (pass_pos, pass_neg) = (width + 2 * d, width + 2 * d + 1);
    l1.set(pass_pos, xi, one);
    l1.set(pass_neg, xi, -one);

    // Layer 2: H_δ arms.
    let s = match piece.orientation {
        Orientation::Below => one,
        Orientation::Above => -one,
    };
    let c0 = a_out.bias()[0];
    for arm in 0..2 {
        for r in 0..width {
            l2.set(arm, r, s * a_out.weight(0, r));
        }
        l2.set(arm, pass_pos, -s);
        l2.set(arm, pass_neg, s);
        l2.bias[arm] = if arm == 0 {
            s * c0
        } else {
            s * c0 - T::of(delta)
        };
    }
    // Layer 2: trapezoids.
    for (j, iv) in piece.rectangle.iter().enumerate() {
        for (k, &b) in tube_biases(iv.lo, iv.hi, deltahat).iter().enumerate() {
            let row = 2 + 4 * j + k;
            l2.set(row, pos(j), one);
            l2.set(row, neg(j), -one);
            l2.bias[row] = T::of(b);
        }
    }

    // Layer 3.
    let inv_delta = T::of(1.0 / delta);
    let inv_deltahat = 1.0 / deltahat;
    l3.set(0, 0, inv_delta);
    l3.set(0, 1, -inv_delta);
    for j in 0..d {
        for (k, &sign) in TUBE_SIGNS.iter().enumerate() {
            l3.set(0, 2 + 4 * j + k, T::of(sign * inv_deltahat));
        }
    }
    l3.bias[0] = T::of(-(d as f64));

    NetworkParams::new(vec![l1, l2, l3, out], FinalActivation::Identity)
}

/// `Φ(x) = Σ_m Φ̂_m(x, Φ̃_m(x))` for every piece of the spec.
pub fn build_classifier<T: Scalar>(spec: &ClassifierSpec<T>) -> Result<NetworkParams<T>> {
    spec.validate()?;
    let (delta, deltahat) = (spec.delta(), spec.deltahat());
    let parts = spec
        .pieces
        .iter()
        .map(|p| build_piece_network(p, delta, deltahat))
        .collect::<Result<Vec<_>>>()?;
    stack_sum(&parts)
}

/// Runs the given single-output networks side by side on a shared input and
/// sums their outputs. All networks must have the same depth.
pub(crate) fn stack_sum<T: Scalar>(parts: &[NetworkParams<T>]) -> Result<NetworkParams<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Spec("nothing to stack".into()))?;
    let depth = first.layers().len();
    let d = first.input_dim();
    if parts
        .iter()
        .any(|p| p.layers().len() != depth || p.input_dim() != d || p.output_dim() != 1)
    {
        return Err(Error::Spec(
            "stacked networks must share depth and input".into(),
        ));
    }
    let mut layers = Vec::with_capacity(depth);
    // Hidden layers: the first one shares the input, the rest are block-diagonal.
    for l in 0..depth - 1 {
        let rows: usize = parts.iter().map(|p| p.layers()[l].rows()).sum();
        let cols: usize = if l == 0 {
            d
        } else {
            parts.iter().map(|p| p.layers()[l].cols()).sum()
        };
        let mut stacked = Layer::<T>::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            let src = &p.layers()[l];
            for r in 0..src.rows() {
                for c in 0..src.cols() {
                    stacked.set(r0 + r, c0 + c, src.weight(r, c));
                }
                stacked.bias[r0 + r] = src.bias()[r];
            }
            r0 += src.rows();
            if l > 0 {
                c0 += src.cols();
            }
        }
        layers.push(stacked);
    }
    // Output: concatenate each part's output row and add the biases.
    let cols: usize = parts.iter().map(|p| p.layers()[depth - 1].cols()).sum();
    let mut out = Layer::<T>::zeros(1, cols);
    let mut c0 = 0;
    let mut bias = T::zero();
    for p in parts {
        let src = &p.layers()[depth - 1];
        for c in 0..src.cols() {
            out.set(0, c0 + c, src.weight(0, c));
        }
        bias = bias + src.bias()[0];
        c0 += src.cols();
    }
    out.bias[0] = bias;
    layers.push(out);
    NetworkParams::new(layers, FinalActivation::Identity)
}
