//! Explicit three-hidden-layer ReLU classifiers for sets whose boundary is
//! locally the graph of a function with a good shallow approximant.

pub mod bounds;
mod build;
pub mod families;
mod gates;
mod spec;

pub use bounds::{
    appendix_neuron_total, magnitude_cap, theorem_neuron_total, verify_theorem1_bounds, weight_cap,
    BoundReport,
};
pub use build::{build_classifier, build_piece_network};
pub use gates::{h_delta_gate, tube_gate};
pub use spec::{BoundaryFn, ClassifierSpec, CoverPiece, Interval, MarginConstants, Orientation};

/// Sup-norm accuracy `C1 sqrt((d-1)/N)` of the boundary approximants, which
/// is also the width of the `H_δ` ramp.
pub fn delta_from(c1: f64, d: usize, n: usize) -> f64 {
    c1 * ((d as f64 - 1.0) / n as f64).sqrt()
}

/// Ramp width `δ^{γ/α}` of the rectangle trapezoids.
pub fn deltahat_from(delta: f64, gamma: f64, alpha: f64) -> f64 {
    delta.powf(gamma / alpha)
}
