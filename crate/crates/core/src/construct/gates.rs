//! The two scalar ReLU gadgets the classifier is assembled from.

use crate::error::{Error, Result};
use crate::nn::{FinalActivation, Layer, NetworkParams};
use crate::scalar::Scalar;

/// `H_δ(x) = (ϱ(x) - ϱ(x - δ)) / δ`: 0 below 0, `x/δ` on `[0, δ]`, 1 above δ.
pub fn h_delta_gate<T: Scalar>(delta: f64) -> Result<NetworkParams<T>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Parameter(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let inv = T::of(1.0 / delta);
    let hidden = Layer::new(
        2,
        1,
        vec![T::one(), T::one()],
        vec![T::zero(), T::of(-delta)],
    )?;
    let out = Layer::new(1, 2, vec![inv, -inv], vec![T::zero()])?;
    NetworkParams::new(vec![hidden, out], FinalActivation::Identity)
}

/// The ReLU units and output weights of the trapezoid
/// `t(u) = (ϱ(u-a) - ϱ(u-a-δ̂) - ϱ(u-b+δ̂) + ϱ(u-b)) / δ̂`.
pub(crate) fn tube_biases(a: f64, b: f64, deltahat: f64) -> [f64; 4] {
    [-a, -a - deltahat, -b + deltahat, -b]
}

pub(crate) const TUBE_SIGNS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

/// Four-unit trapezoid that is 0 outside `[a, b]` and 1 on `[a+δ̂, b-δ̂]`.
pub fn tube_gate<T: Scalar>(a: f64, b: f64, deltahat: f64) -> Result<NetworkParams<T>> {
    if !(deltahat > 0.0 && deltahat.is_finite()) {
        return Err(Error::Parameter(format!(
            "deltahat must be positive, got {deltahat}"
        )));
    }
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return Err(Error::Parameter(format!(
            "[{a}, {b}] is not a sub-interval of [0, 1]"
        )));
    }
    if b - a < 2.0 * deltahat {
        return Err(Error::DegenerateRectangle {
            side: b - a,
            min: 2.0 * deltahat,
        });
    }
    let inv = 1.0 / deltahat;
    let hidden = Layer::new(
        4,
        1,
        vec![T::one(); 4],
        tube_biases(a, b, deltahat)
            .iter()
            .map(|&v| T::of(v))
            .collect(),
    )?;
    let out = Layer::new(
        1,
        4,
        TUBE_SIGNS.iter().map(|&s| T::of(s * inv)).collect(),
        vec![T::zero()],
    )?;
    NetworkParams::new(vec![hidden, out], FinalActivation::Identity)
}
