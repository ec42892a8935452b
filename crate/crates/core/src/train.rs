//! Hinge-loss training of sigmoid-output ReLU networks with Adam and
//! early stopping on the training loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Mat};
use crate::nn::{relu, FinalActivation, NetworkParams};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Largest training set trained full-batch when no batch size is given.
pub const FULL_BATCH_LIMIT: usize = 4096;
pub const DEFAULT_BATCH: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// `None` trains full-batch up to [`FULL_BATCH_LIMIT`] points and with
    /// batches of [`DEFAULT_BATCH`] above.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            max_epochs: 2000,
            patience: 1,
            min_delta: 0.0,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The full protocol: 50000 epochs.
    pub fn full() -> Self {
        TrainConfig {
            max_epochs: 50_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn batch_for(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n).max(1),
            None if n <= FULL_BATCH_LIMIT => n.max(1),
            None => DEFAULT_BATCH,
        }
    }
}

/// `(d, 3N, 2N, N, 1)` with `N = ⌈n^{2/(γ+2)}⌉`.
pub fn experiment_arch(d: usize, n: usize, gamma: f64) -> Vec<usize> {
    let w = experiment_width(n, gamma);
    vec![d, 3 * w, 2 * w, w, 1]
}

pub fn experiment_width(n: usize, gamma: f64) -> usize {
    ((n.max(1) as f64).powf(2.0 / (gamma + 2.0)).ceil() as usize).max(1)
}

/// He-style uniform initialisation: weights in `±sqrt(6 / fan_in)`, zero
/// biases.
pub fn init_network<T: Scalar>(
    architecture: &[usize],
    final_activation: FinalActivation,
    seed: u64,
) -> Result<NetworkParams<T>> {
    let mut net = NetworkParams::<T>::zeros(architecture, final_activation)?;
    let mut rng = stream_rng(seed, 0);
    for layer in net.layers.iter_mut() {
        let limit = (6.0 / layer.cols as f64).sqrt();
        for w in layer.weights.iter_mut() {
            *w = T::of(rng.random_range(-limit..limit));
        }
    }
    Ok(net)
}

/// Gradient with the same shapes as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(net: &NetworkParams<T>) -> Self {
        Gradient {
            weights: net
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        }
    }

    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.flatten()
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Scratch buffers for batched forward and backward passes.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    next_delta: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Workspace {
            acts: Vec::new(),
            delta: Vec::new(),
            next_delta: Vec::new(),
        }
    }

    fn forward(&mut self, net: &NetworkParams<T>, x: &[T], batch: usize) {
        let layers = net.layers();
        self.acts.resize_with(layers.len() + 1, Vec::new);
        self.acts[0].clear();
        self.acts[0].extend_from_slice(x);
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let (input, out) = (&head[l], &mut tail[0]);
            out.clear();
            for _ in 0..batch {
                out.extend_from_slice(layer.bias());
            }
            gemm(
                batch,
                layer.cols(),
                layer.rows(),
                Mat::n(input),
                Mat::t(layer.weights()),
                T::one(),
                out,
            );
            if l < last {
                out.iter_mut().for_each(|v| *v = relu(*v));
            } else {
                let act = net.final_activation();
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
    }

    /// Mean hinge loss over the batch and its gradient, written into `grad`.
    /// Subgradients at the hinge and ReLU kinks are 0.
    pub fn loss_and_grad(
        &mut self,
        net: &NetworkParams<T>,
        x: &[T],
        y: &[u8],
        grad: &mut Gradient<T>,
    ) -> Result<T> {
        let batch = y.len();
        if net.output_dim() != 1 || x.len() != batch * net.input_dim() {
            return Err(Error::Shape {
                expected: batch * net.input_dim(),
                got: x.len(),
            });
        }
        if batch == 0 {
            return Err(Error::EmptyDataset);
        }
        self.forward(net, x, batch);
        let layers = net.layers();
        let out = &self.acts[layers.len()];
        let (one, two) = (T::one(), T::of(2.0));
        let inv_b = T::of(1.0 / batch as f64);
        let mut loss = T::zero();
        self.delta.clear();
        for (&p, &yi) in out.iter().zip(y) {
            let s = if yi == 1 { one } else { -one };
            let margin = one - s * (two * p - one);
            let dp = if margin > T::zero() {
                loss = loss + margin;
                -two * s
            } else {
                T::zero()
            };
            let dz = match net.final_activation() {
                FinalActivation::Sigmoid => dp * p * (one - p),
                FinalActivation::Identity => dp,
            };
            self.delta.push(dz * inv_b);
        }

        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let (rows, cols) = (layer.rows(), layer.cols());
            let input = &self.acts[l];
            gemm(
                rows,
                batch,
                cols,
                Mat::t(&self.delta),
                Mat::n(input),
                T::zero(),
                &mut grad.weights[l],
            );
            let gb = &mut grad.biases[l];
            gb.iter_mut().for_each(|v| *v = T::zero());
            for row in self.delta.chunks(rows) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
            if l > 0 {
                self.next_delta.clear();
                self.next_delta.resize(batch * cols, T::zero());
                gemm(
                    batch,
                    rows,
                    cols,
                    Mat::n(&self.delta),
                    Mat::n(layer.weights()),
                    T::zero(),
                    &mut self.next_delta,
                );
                for (d, &a) in self.next_delta.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
                std::mem::swap(&mut self.delta, &mut self.next_delta);
            }
        }
        Ok(loss * inv_b)
    }
}

/// Mean hinge loss of `net` on `batch` and its gradient.
pub fn backprop_grad<T: Scalar>(
    net: &NetworkParams<T>,
    batch: &LabeledDataset,
) -> Result<(T, Gradient<T>)> {
    let x: Vec<T> = batch.points.iter().map(|&v| T::of(v)).collect();
    let mut grad = Gradient::zeros_like(net);
    let loss = Workspace::new().loss_and_grad(net, &x, &batch.labels, &mut grad)?;
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    step: i32,
    m: Gradient<T>,
    v: Gradient<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &NetworkParams<T>, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            step: 0,
            m: Gradient::zeros_like(net),
            v: Gradient::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut NetworkParams<T>, grad: &Gradient<T>) {
        self.step += 1;
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let lr_t = T::of(
            self.learning_rate * (1.0 - ADAM_BETA2.powi(self.step)).sqrt()
                / (1.0 - ADAM_BETA1.powi(self.step)),
        );
        let eps = T::of(ADAM_EPS);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            let g = grad.weights[l].iter().chain(&grad.biases[l]);
            let m = self.m.weights[l]
                .iter_mut()
                .chain(self.m.biases[l].iter_mut());
            let v = self.v.weights[l]
                .iter_mut()
                .chain(self.v.biases[l].iter_mut());
            for (((p, &g), m), v) in params.zip(g).zip(m).zip(v) {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *p = *p - lr_t * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub net: NetworkParams<T>,
    pub epochs_run: usize,
    /// Mean training loss of the last epoch, `NaN` when no epoch ran.
    pub final_loss: f64,
}

/// Trains `net` on `ds`. After every epoch the epoch-average training loss
/// is compared with the best so far; training stops once it has failed to
/// improve by more than `min_delta` for `patience` consecutive epochs.
pub fn train<T: Scalar>(
    net: NetworkParams<T>,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if net.input_dim() != ds.d {
        return Err(Error::Shape {
            expected: net.input_dim(),
            got: ds.d,
        });
    }
    let mut net = net;
    let n = ds.len();
    let d = ds.d;
    let batch = cfg.batch_for(n);
    let xs: Vec<T> = ds.points.iter().map(|&v| T::of(v)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(cfg.seed, 1);
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut grad = Gradient::zeros_like(&net);
    let mut ws = Workspace::new();
    let (mut bx, mut by) = (Vec::with_capacity(batch * d), Vec::with_capacity(batch));

    let mut best = f64::INFINITY;
    let mut wait = 0;
    let mut final_loss = f64::NAN;
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for idx in order.chunks(batch) {
            bx.clear();
            by.clear();
            for &i in idx {
                bx.extend_from_slice(&xs[i * d..(i + 1) * d]);
                by.push(ds.labels[i]);
            }
            let loss = ws.loss_and_grad(&net, &bx, &by, &mut grad)?.to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            total += loss * idx.len() as f64;
            adam.step(&mut net, &grad);
        }
        epochs_run = epoch + 1;
        final_loss = total / n as f64;
        log::trace!("epoch {epoch}: loss {final_loss}");
        if final_loss < best - cfg.min_delta {
            best = final_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        net,
        epochs_run,
        final_loss,
    })
}

/// Runs `train` on a freshly initialised sigmoid-output network.
pub fn fit<T: Scalar>(
    architecture: &[usize],
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let net = init_network(architecture, FinalActivation::Sigmoid, cfg.seed)?;
    train(net, ds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{empirical_risk, LossKind};
    use crate::nn::Layer;
    use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};

    fn flatten_params(net: &NetworkParams<f64>) -> Vec<f64> {
        net.layers()
            .iter()
            .flat_map(|l| l.weights().iter().chain(l.bias()).copied())
            .collect()
    }

    fn mean_loss(net: &NetworkParams<f64>, ds: &LabeledDataset) -> f64 {
        empirical_risk(net, ds, LossKind::Hinge).unwrap()
    }

    fn random_batch(d: usize, n: usize, seed: u64) -> LabeledDataset {
        let mut rng = stream_rng(seed, 9);
        let mut ds = LabeledDataset::new(d, false);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            ds.push(&x, rng.random_range(0..2), None);
        }
        ds
    }

    /// Random weights and biases, so no unit sits exactly on a ReLU kink.
    fn random_net(arch: &[usize], seed: u64) -> NetworkParams<f64> {
        let mut net = init_network::<f64>(arch, FinalActivation::Sigmoid, seed).unwrap();
        let mut rng = stream_rng(seed, 5);
        for l in net.layers.iter_mut() {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        net
    }

    /// Norm-wise error between the analytic gradient and central differences
    /// with step 1e-6, relative to the larger gradient norm or 1, whichever
    /// is bigger. The floor keeps cancelling gradients from amplifying
    /// rounding noise.
    fn gradient_check(net: &NetworkParams<f64>, ds: &LabeledDataset) -> f64 {
        let (_, g) = backprop_grad(net, ds).unwrap();
        let g = g.flatten();
        let h = 1e-6;
        let mut fd = Vec::with_capacity(g.len());
        let mut probe = net.clone();
        let count = g.len();
        for k in 0..count {
            let orig = flatten_params(&probe)[k];
            set_param(&mut probe, k, orig + h);
            let up = mean_loss(&probe, ds);
            set_param(&mut probe, k, orig - h);
            let down = mean_loss(&probe, ds);
            set_param(&mut probe, k, orig);
            fd.push((up - down) / (2.0 * h));
        }
        let diff = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = g.iter().chain(&fd).map(|v| v.abs()).fold(1.0, f64::max);
        diff / scale
    }

    fn set_param(net: &mut NetworkParams<f64>, k: usize, v: f64) {
        let p = net
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
            .nth(k)
            .unwrap();
        *p = v;
    }

    #[test]
    fn arch_examples() {
        assert_eq!(experiment_arch(3, 1000, 2.0), vec![3, 96, 64, 32, 1]);
        assert_eq!(experiment_arch(7, 1, 1.3), vec![7, 3, 2, 1, 1]);
        assert_eq!(experiment_arch(50, 499, 0.1), vec![50, 1116, 744, 372, 1]);
    }

    #[test]
    fn flat_region_has_zero_gradient() {
        // sigmoid saturates to exactly 1 in f64, so every hinge term is 0
        let net = NetworkParams::new(
            vec![Layer::new(1, 2, vec![0.0, 0.0], vec![800.0]).unwrap()],
            FinalActivation::Sigmoid,
        )
        .unwrap();
        let mut ds = LabeledDataset::new(2, false);
        ds.push(&[0.1, 0.2], 1, None);
        ds.push(&[0.7, 0.3], 1, None);
        let (loss, g) = backprop_grad(&net, &ds).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_neuron_closed_form() {
        let (w, b, x, y) = (0.3, -0.1, 0.8, 1u8);
        let net = NetworkParams::new(
            vec![Layer::new(1, 1, vec![w], vec![b]).unwrap()],
            FinalActivation::Sigmoid,
        )
        .unwrap();
        let mut ds = LabeledDataset::new(1, false);
        ds.push(&[x], y, None);
        let (_, g) = backprop_grad(&net, &ds).unwrap();
        let p = 1.0 / (1.0 + (-(w * x + b)).exp());
        let dz = -2.0 * p * (1.0 - p);
        assert!((g.weights[0][0] - dz * x).abs() < 1e-15);
        assert!((g.biases[0][0] - dz).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = random_net(&[3, 5, 4, 1], 4);
        let ds = random_batch(3, 16, 2);
        let err = gradient_check(&net, &ds);
        assert!(err <= 1e-5, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn gradient_check_random_nets(
            widths in prop::collection::vec(1usize..=8, 1..=3),
            d in 1usize..=8,
            seed in any::<u64>(),
        ) {
            let mut arch = vec![d];
            arch.extend(&widths);
            arch.push(1);
            let net = random_net(&arch, seed);
            let ds = random_batch(d, 8, seed ^ 1);
            let err = gradient_check(&net, &ds);
            prop_assert!(err <= 1e-5, "{}", err);
        }
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut net = init_network::<f64>(&[2, 3, 1], FinalActivation::Sigmoid, 1).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, 0.1);
        let g = Gradient::zeros_like(&net);
        for _ in 0..5 {
            adam.step(&mut net, &g);
        }
        assert_eq!(net, before);
    }

    #[test]
    fn zero_epochs_returns_input() {
        let net = init_network::<f64>(&[2, 3, 1], FinalActivation::Sigmoid, 1).unwrap();
        let ds = random_batch(2, 10, 0);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let out = train(net.clone(), &ds, &cfg).unwrap();
        assert_eq!(out.net, net);
        assert_eq!(out.epochs_run, 0);
    }

    fn separable(n: usize) -> LabeledDataset {
        let mut rng = stream_rng(77, 0);
        let mut ds = LabeledDataset::new(2, false);
        while ds.len() < n {
            let x: [f64; 2] = [rng.random(), rng.random()];
            let s = x[0] + x[1] - 1.0;
            if s.abs() > 0.1 {
                ds.push(&x, u8::from(s < 0.0), None);
            }
        }
        ds
    }

    #[test]
    fn separable_data_is_learned() {
        let ds = separable(200);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 3000,
            patience: 20,
            seed: 3,
            ..Default::default()
        };
        let out = fit::<f64>(&[2, 16, 8, 1], &ds, &cfg).unwrap();
        assert_eq!(
            empirical_risk(&out.net, &ds, LossKind::ZeroOne).unwrap(),
            0.0
        );
        assert!(out.epochs_run > 1);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable(300);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 30,
            batch_size: Some(64),
            seed: 5,
            ..Default::default()
        };
        let a = fit::<f32>(&[2, 8, 4, 1], &ds, &cfg).unwrap();
        let b = fit::<f32>(&[2, 8, 4, 1], &ds, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epochs_run, b.epochs_run);
    }

    #[test]
    fn early_stopping_with_patience_one() {
        // A zero learning rate is rejected; a tiny one leaves the loss flat to
        // within rounding, so training stops almost immediately.
        let ds = separable(50);
        let cfg = TrainConfig {
            learning_rate: 1e-300,
            max_epochs: 100,
            seed: 1,
            ..Default::default()
        };
        let out = fit::<f64>(&[2, 4, 1], &ds, &cfg).unwrap();
        assert_eq!(out.epochs_run, 2);
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
