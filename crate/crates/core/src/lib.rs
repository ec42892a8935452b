//! Explicit ReLU classifiers for sets with regular decision boundaries, and
//! the tooling to measure how fast trained networks learn them.

// Negated comparisons below are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod construct;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod loss;
pub mod mnist;
pub mod nn;
pub mod rates;
pub mod record;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod train;

pub use construct::{build_classifier, ClassifierSpec, CoverPiece};
pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use nn::{ArchitectureReport, FinalActivation, NetworkParams};
pub use scalar::Scalar;

pub type Network = NetworkParams<f64>;
pub type Network32 = NetworkParams<f32>;
pub type Spec = ClassifierSpec<f64>;
pub type Piece = CoverPiece<f64>;
