//! Dense feedforward ReLU networks.
//!
//! A network is a chain of affine maps `x -> W x + b` with ReLU between them.
//! The last affine map is followed by an optional output activation. Weights
//! are stored densely; structural zeros are counted by [`NetworkParams::audit`]
//! but never skipped during evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    #[default]
    Identity,
    Sigmoid,
}

impl FinalActivation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            FinalActivation::Identity => x,
            FinalActivation::Sigmoid => sigmoid(x),
        }
    }
}

/// One affine map `R^cols -> R^rows`, weights row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr<T>", into = "LayerRepr<T>", bound = "T: Scalar")]
pub struct Layer<T> {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerRepr<T> {
    weights: Vec<Vec<T>>,
    bias: Vec<T>,
}

impl<T: Scalar> TryFrom<LayerRepr<T>> for Layer<T> {
    type Error = Error;

    fn try_from(repr: LayerRepr<T>) -> Result<Self> {
        let rows = repr.weights.len();
        let cols = repr.weights.first().map_or(0, Vec::len);
        if repr.weights.iter().any(|r| r.len() != cols) {
            return Err(Error::Network("ragged weight matrix".into()));
        }
        Layer::new(rows, cols, repr.weights.concat(), repr.bias)
    }
}

impl<T: Scalar> From<Layer<T>> for LayerRepr<T> {
    fn from(layer: Layer<T>) -> Self {
        LayerRepr {
            weights: layer
                .weights
                .chunks(layer.cols.max(1))
                .map(<[T]>::to_vec)
                .collect(),
            bias: layer.bias,
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn new(rows: usize, cols: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Network(format!("empty layer {rows}x{cols}")));
        }
        if weights.len() != rows * cols || bias.len() != rows {
            return Err(Error::Network(format!(
                "layer {rows}x{cols} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Network("non-finite parameter".into()));
        }
        Ok(Layer {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![T::zero(); rows * cols],
            bias: vec![T::zero(); rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.cols + col]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, v: T) {
        self.weights[row * self.cols + col] = v;
    }

    fn affine_into(&self, x: &[T], out: &mut [T]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * self.cols..(j + 1) * self.cols];
            let mut acc = self.bias[j];
            for (w, v) in row.iter().zip(x) {
                acc = acc + *w * *v;
            }
            *o = acc;
        }
    }

    /// Column-major copy of the weights, used by the batched forward pass.
    pub(crate) fn transposed(&self) -> Vec<T> {
        let mut t = vec![T::zero(); self.weights.len()];
        for j in 0..self.rows {
            for k in 0..self.cols {
                t[k * self.rows + j] = self.weights[j * self.cols + k];
            }
        }
        t
    }

    /// `out[b] = W x[b] + bias` for a row-major batch. Accumulates in the same
    /// order as the single-sample path, so results are bitwise identical.
    pub(crate) fn affine_batch(&self, wt: &[T], x: &[T], batch: usize, out: &mut Vec<T>) {
        out.clear();
        out.reserve(batch * self.rows);
        for b in 0..batch {
            let xin = &x[b * self.cols..(b + 1) * self.cols];
            let start = out.len();
            out.extend_from_slice(&self.bias);
            let o = &mut out[start..];
            for (k, &xv) in xin.iter().enumerate() {
                let col = &wt[k * self.rows..(k + 1) * self.rows];
                for (acc, &w) in o.iter_mut().zip(col) {
                    *acc = *acc + w * xv;
                }
            }
        }
    }
}

/// Statistics of a network's parameter tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    /// `(d_0, d_1, ..., d_{L+1})`.
    pub architecture: Vec<usize>,
    pub num_neurons: usize,
    pub num_nonzero_weights: usize,
    pub max_abs_param: f64,
    pub num_hidden_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "NetworkRepr<T>")]
pub struct NetworkParams<T> {
    pub(crate) layers: Vec<Layer<T>>,
    #[serde(default)]
    pub(crate) final_activation: FinalActivation,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct NetworkRepr<T> {
    layers: Vec<Layer<T>>,
    #[serde(default)]
    final_activation: FinalActivation,
}

impl<T: Scalar> TryFrom<NetworkRepr<T>> for NetworkParams<T> {
    type Error = Error;

    fn try_from(repr: NetworkRepr<T>) -> Result<Self> {
        NetworkParams::new(repr.layers, repr.final_activation)
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(layers: Vec<Layer<T>>, final_activation: FinalActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Network("a network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].rows != pair[1].cols {
                return Err(Error::Network(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].rows,
                    l + 1,
                    pair[1].cols
                )));
            }
        }
        Ok(NetworkParams {
            layers,
            final_activation,
        })
    }

    /// All-zero network with the given architecture `(d_0, ..., d_{L+1})`.
    pub fn zeros(architecture: &[usize], final_activation: FinalActivation) -> Result<Self> {
        if architecture.len() < 2 || architecture.contains(&0) {
            return Err(Error::Network(format!("bad architecture {architecture:?}")));
        }
        let layers = architecture
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Self::new(layers, final_activation)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn final_activation(&self) -> FinalActivation {
        self.final_activation
    }

    pub fn with_final_activation(mut self, act: FinalActivation) -> Self {
        self.final_activation = act;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            next.clear();
            next.resize(layer.rows, T::zero());
            layer.affine_into(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            } else {
                next.iter_mut()
                    .for_each(|v| *v = self.final_activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass of a single-output network.
    pub fn eval(&self, x: &[T]) -> Result<T> {
        if self.output_dim() != 1 {
            return Err(Error::Network(format!(
                "eval needs one output, network has {}",
                self.output_dim()
            )));
        }
        Ok(self.forward(x)?[0])
    }

    /// Forward pass over a row-major batch; returns the row-major outputs.
    pub fn forward_batch(&self, xs: &[T]) -> Result<Vec<T>> {
        let d = self.input_dim();
        if !xs.len().is_multiple_of(d) {
            return Err(Error::Shape {
                expected: d,
                got: xs.len() % d,
            });
        }
        let batch = xs.len() / d;
        let last = self.layers.len() - 1;
        let mut cur = xs.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let wt = layer.transposed();
            layer.affine_batch(&wt, &cur, batch, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            } else {
                next.iter_mut()
                    .for_each(|v| *v = self.final_activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Batched forward pass through blocked matrix products. Agrees with
    /// [`forward`](Self::forward) up to rounding and is much faster on wide
    /// layers.
    pub fn predict(&self, xs: &[T]) -> Result<Vec<T>> {
        const ROWS: usize = 2048;
        let d = self.input_dim();
        if d == 0 || !xs.len().is_multiple_of(d) {
            return Err(Error::Shape {
                expected: d,
                got: xs.len() % d.max(1),
            });
        }
        let last = self.layers.len() - 1;
        let mut out = Vec::with_capacity(xs.len() / d * self.output_dim());
        let (mut cur, mut next) = (Vec::new(), Vec::new());
        for chunk in xs.chunks(ROWS * d) {
            let b = chunk.len() / d;
            cur.clear();
            cur.extend_from_slice(chunk);
            for (l, layer) in self.layers.iter().enumerate() {
                next.clear();
                for _ in 0..b {
                    next.extend_from_slice(&layer.bias);
                }
                gemm(
                    b,
                    layer.cols,
                    layer.rows,
                    Mat::n(&cur),
                    Mat::t(&layer.weights),
                    T::one(),
                    &mut next,
                );
                if l < last {
                    next.iter_mut().for_each(|v| *v = relu(*v));
                } else {
                    next.iter_mut()
                        .for_each(|v| *v = self.final_activation.apply(*v));
                }
                std::mem::swap(&mut cur, &mut next);
            }
            out.extend_from_slice(&cur);
        }
        Ok(out)
    }

    pub fn audit(&self) -> ArchitectureReport {
        let architecture = self.architecture();
        let zero = T::zero();
        let mut nonzero = 0;
        let mut max_abs = 0.0f64;
        for layer in &self.layers {
            for &v in layer.weights.iter().chain(&layer.bias) {
                if v != zero {
                    nonzero += 1;
                }
                max_abs = max_abs.max(v.abs().to_f64_lossy());
            }
        }
        ArchitectureReport {
            num_neurons: architecture.iter().sum(),
            num_hidden_layers: self.num_hidden_layers(),
            architecture,
            num_nonzero_weights: nonzero,
            max_abs_param: max_abs,
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    rows: l.rows,
                    cols: l.cols,
                    weights: l.weights.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
                })
                .collect(),
            final_activation: self.final_activation,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
