//! Hinge and 0-1 losses for scores in `[0,1]` and labels in `{0,1}`.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::scalar::Scalar;

/// `max{0, 1 - (2y-1)(2x-1)}`
pub fn hinge_loss<T: Scalar>(x: T, y: u8) -> T {
    let two = T::of(2.0);
    let s = if y == 1 { T::one() } else { -T::one() };
    (T::one() - s * (two * x - T::one())).max(T::zero())
}

/// 1 when thresholding `x` at 1/2 (ties go to class 1) misses `y`.
pub fn zero_one_loss<T: Scalar>(x: T, y: u8) -> u8 {
    let predicted = u8::from(x >= T::of(0.5));
    u8::from(predicted != y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    ZeroOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Risks {
    pub hinge: f64,
    pub zero_one: f64,
}

/// Both empirical risks of `net` on `ds` from one batched pass.
pub fn empirical_risks<T: Scalar>(net: &NetworkParams<T>, ds: &LabeledDataset) -> Result<Risks> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if net.input_dim() != ds.d || net.output_dim() != 1 {
        return Err(Error::Shape {
            expected: net.input_dim(),
            got: ds.d,
        });
    }
    let xs: Vec<T> = ds.points.iter().map(|&v| T::of(v)).collect();
    let out = net.predict(&xs)?;
    let (mut hinge, mut wrong) = (0.0, 0usize);
    for (&p, &y) in out.iter().zip(&ds.labels) {
        hinge += hinge_loss(p, y).to_f64_lossy();
        wrong += zero_one_loss(p, y) as usize;
    }
    let n = ds.len() as f64;
    Ok(Risks {
        hinge: hinge / n,
        zero_one: wrong as f64 / n,
    })
}

pub fn empirical_risk<T: Scalar>(
    net: &NetworkParams<T>,
    ds: &LabeledDataset,
    kind: LossKind,
) -> Result<f64> {
    let r = empirical_risks(net, ds)?;
    Ok(match kind {
        LossKind::Hinge => r.hinge,
        LossKind::ZeroOne => r.zero_one,
    })
}
