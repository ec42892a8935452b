use serde::{Deserialize, Serialize};

use crate::nn::{ArchitectureReport, NetworkParams};
use crate::scalar::Scalar;

use super::spec::ClassifierSpec;

/// `41 M d² N`
pub fn weight_cap(m: usize, d: usize, n: usize) -> f64 {
    41.0 * m as f64 * (d * d) as f64 * n as f64
}

/// `(1 + √C1)(7 + N/C1 + (N/C1)^{γ/α})`
pub fn magnitude_cap(c1: f64, n: f64, gamma: f64, alpha: f64) -> f64 {
    let r = n / c1;
    (1.0 + c1.sqrt()) * (7.0 + r + r.powf(gamma / alpha))
}

/// Neuron total stated with the architecture `(d, M(2(d+1)+N), M(2d+2), M, 1)`.
pub fn theorem_neuron_total(m: usize, d: usize, n: usize) -> usize {
    m * (4 * (d + 1) + n + 1) + d + 1
}

/// Neuron total of the layer-by-layer construction, whose second hidden
/// layer has `M(4d+2)` units.
pub fn appendix_neuron_total(m: usize, d: usize, n: usize) -> usize {
    m * (6 * d + 5 + n) + d + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub audit: ArchitectureReport,
    pub three_hidden_layers: bool,
    pub weight_cap: f64,
    pub weights_ok: bool,
    pub magnitude_cap: f64,
    pub magnitude_ok: bool,
    pub theorem_neurons: usize,
    pub appendix_neurons: usize,
    pub neurons_ok: bool,
}

impl BoundReport {
    pub fn all_ok(&self) -> bool {
        self.three_hidden_layers && self.weights_ok && self.magnitude_ok && self.neurons_ok
    }
}

/// Checks a built classifier against the architecture, weight-count,
/// magnitude and neuron bounds. Failures are reported, not raised.
pub fn verify_theorem1_bounds<T: Scalar>(
    net: &NetworkParams<T>,
    spec: &ClassifierSpec<T>,
) -> BoundReport {
    let audit = net.audit();
    let (m, d, n) = (spec.num_pieces(), spec.dim(), spec.n);
    let wcap = weight_cap(m, d, n);
    let mcap = magnitude_cap(spec.c1, n as f64, spec.gamma, spec.alpha);
    let theorem_neurons = theorem_neuron_total(m, d, n);
    let appendix_neurons = appendix_neuron_total(m, d, n);
    BoundReport {
        three_hidden_layers: audit.num_hidden_layers == 3,
        weight_cap: wcap,
        weights_ok: audit.num_nonzero_weights as f64 <= wcap,
        magnitude_cap: mcap,
        magnitude_ok: audit.max_abs_param <= mcap,
        theorem_neurons,
        appendix_neurons,
        neurons_ok: audit.num_neurons <= theorem_neurons.max(appendix_neurons),
        audit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(magnitude_cap(1.0, 4.0, 1.0, 1.0), 30.0);
        assert_eq!(weight_cap(1, 3, 16), 5904.0);
        assert_eq!(theorem_neuron_total(1, 2, 4), 20);
        assert_eq!(appendix_neuron_total(1, 2, 4), 24);
    }
}
