//! Synthetic sphere-shell data, margin thinning and subsampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, LabeledDataset};
use crate::error::{Error, Result};
use crate::geometry::norm;
use crate::rng::stream_rng;

/// Margin exponents swept by the experiments.
pub const GAMMA_GRID: [f64; 10] = [
    0.1, 0.644, 1.189, 1.733, 2.278, 2.822, 3.367, 3.911, 4.456, 5.0,
];

pub const G1: [usize; 14] = [
    499, 730, 1065, 1556, 2271, 3317, 4843, 7071, 10323, 15073, 22007, 32130, 46911, 68492,
];

pub const G2: [usize; 15] = [
    249, 321, 414, 533, 687, 885, 1140, 1468, 1890, 2435, 3135, 4038, 5200, 6696, 8624,
];

/// Neighbourhood radius used for the sphere data.
pub const C_D_SPHERE: f64 = 0.48;
/// Neighbourhood radius used for the MNIST data, `0.5 - 2.8e-7`.
pub const C_D_MNIST: f64 = 0.49999972;

/// Radius of the class-1 ball after rescaling.
const BALL: f64 = 0.5;

/// Training sizes and test size for d = 3, 50 and 784.
pub fn size_grid(d: usize) -> Result<(Vec<usize>, usize)> {
    let with = |extra: usize| G1.iter().copied().chain(std::iter::once(extra)).collect();
    match d {
        3 => Ok((with(120_001), 399_644)),
        50 => Ok((with(120_088), 399_187)),
        784 => Ok((G2.to_vec(), 4837)),
        _ => Err(Error::Config(format!(
            "no built-in size grid for d = {d}; supply sizes explicitly"
        ))),
    }
}

/// Uniform point in `{x >= 0 : r_lo < 4‖x‖ <= r_hi}` scaled by 1/4.
fn shell_point(rng: &mut ChaCha8Rng, d: usize, r_lo: f64, r_hi: f64, out: &mut [f64]) {
    let rho = (r_lo / r_hi).powi(d as i32);
    loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = g.abs();
            s += g * g;
        }
        if s == 0.0 {
            continue;
        }
        let u = 1.0 - rng.random::<f64>();
        let r = r_hi * (rho + u * (1.0 - rho)).powf(1.0 / d as f64);
        let scale = r / 4.0 / s.sqrt();
        out.iter_mut().for_each(|v| *v = (*v * scale).min(1.0));
        let nrm = norm(out);
        if nrm > r_lo / 4.0 && nrm <= r_hi / 4.0 {
            return;
        }
    }
}

fn shell_dataset(d: usize, n: usize, seed: u64, stream: u64, stage: &str) -> LabeledDataset {
    let mut rng = stream_rng(seed, stream);
    let inner = n.div_ceil(2);
    let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for k in 0..n {
        if k < inner {
            shell_point(&mut rng, d, 0.0, 2.0, &mut x);
            rows.push((x.clone(), 1));
        } else {
            shell_point(&mut rng, d, 2.0, 4.0, &mut x);
            rows.push((x.clone(), 0));
        }
    }
    rows.shuffle(&mut rng);
    let mut ds = LabeledDataset::new(d, true);
    ds.points.reserve(n * d);
    for (x, y) in &rows {
        ds.push(x, *y, Some((BALL - norm(x)).abs()));
    }
    ds.meta = DatasetMeta {
        gamma: None,
        seed,
        stage: stage.into(),
    };
    ds
}

/// Positive-orthant points with norm at most 1, half inside the ball of
/// radius 1/2 (label 1) and half outside.
pub fn sphere_shell_sample(
    d: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if d < 2 {
        return Err(Error::Parameter(format!(
            "sphere data needs d >= 2, got {d}"
        )));
    }
    Ok((
        shell_dataset(d, n_train, seed, 0, "train"),
        shell_dataset(d, n_test, seed, 1, "test"),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub gamma: f64,
    pub c_d: f64,
    pub seed: u64,
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.c_d > 0.0 && self.c_d <= 0.5) {
            return Err(Error::Parameter(format!(
                "c_d must lie in (0, 1/2], got {}",
                self.c_d
            )));
        }
        Ok(())
    }

    /// Probability that a point at distance `dist` survives.
    pub fn keep_probability(&self, dist: f64) -> f64 {
        if dist > self.c_d {
            1.0
        } else {
            (dist / self.c_d).powf(self.gamma)
        }
    }
}

/// Removes each point independently with probability `1 - (dist/c_d)^γ`
/// (never when `dist > c_d`).
pub fn margin_reject(ds: &LabeledDataset, cfg: &MarginConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let dist = ds
        .distances
        .as_ref()
        .ok_or_else(|| Error::Config("margin rejection needs distances".into()))?;
    let mut rng = stream_rng(cfg.seed, 2);
    let keep: Vec<usize> = dist
        .iter()
        .enumerate()
        .filter(|(_, &v)| {
            let u: f64 = rng.random();
            u < cfg.keep_probability(v)
        })
        .map(|(i, _)| i)
        .collect();
    let mut out = ds.select(&keep);
    out.meta.gamma = Some(cfg.gamma);
    out.meta.seed = cfg.seed;
    out.meta.stage = format!("{}+margin", ds.meta.stage);
    Ok(out)
}

/// Uniform subset of size `n`, drawn separately within each class so the
/// class proportions are kept to within one point.
pub fn subsample(ds: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n > ds.len() {
        return Err(Error::Size {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = stream_rng(seed, 3);
    let mut zeros = ds.indices_of(0);
    let mut ones = ds.indices_of(1);
    let want_ones = if ds.is_empty() {
        0
    } else {
        ((n as f64 * ones.len() as f64 / ds.len() as f64).round() as usize).min(ones.len())
    };
    let want_zeros = n - want_ones;
    let (want_ones, want_zeros) = if want_zeros > zeros.len() {
        (n - zeros.len(), zeros.len())
    } else {
        (want_ones, want_zeros)
    };
    zeros.shuffle(&mut rng);
    ones.shuffle(&mut rng);
    let mut idx: Vec<usize> = zeros[..want_zeros]
        .iter()
        .chain(&ones[..want_ones])
        .copied()
        .collect();
    idx.shuffle(&mut rng);
    let mut out = ds.select(&idx);
    out.meta.stage = format!("{}+sub{n}", ds.meta.stage);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{empirical_margin_mass, fit_margin_exponent, log_grid};

    #[test]
    fn shell_points_are_valid() {
        for d in [2, 3, 50] {
            let (tr, te) = sphere_shell_sample(d, 1001, 200, 11).unwrap();
            tr.validate().unwrap();
            te.validate().unwrap();
            assert_eq!(tr.class_counts(), [500, 501]);
            assert_eq!(te.class_counts(), [100, 100]);
            for i in 0..tr.len() {
                let x = tr.point(i);
                let r = norm(x);
                assert!(x.iter().all(|&v| v >= 0.0) && r <= 1.0);
                assert_eq!(tr.labels[i] == 1, r <= 0.5);
                assert_eq!(tr.distance(i).unwrap(), (0.5 - r).abs());
            }
        }
    }

    #[test]
    fn inner_shell_is_uniform_in_radius() {
        // P(r <= 1/4 | r <= 1/2) = 2^-d for a uniform ball
        let (tr, _) = sphere_shell_sample(3, 40_000, 0, 3).unwrap();
        let inner: Vec<f64> = (0..tr.len())
            .filter(|&i| tr.labels[i] == 1)
            .map(|i| norm(tr.point(i)))
            .collect();
        let frac = inner.iter().filter(|&&r| r <= 0.25).count() as f64 / inner.len() as f64;
        assert!((frac - 0.125).abs() < 0.01, "{frac}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sphere_shell_sample(3, 300, 10, 5).unwrap().0;
        let b = sphere_shell_sample(3, 300, 10, 5).unwrap().0;
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        let cfg = MarginConfig {
            gamma: 2.0,
            c_d: C_D_SPHERE,
            seed: 1,
        };
        let ra = margin_reject(&a, &cfg).unwrap();
        let rb = margin_reject(&b, &cfg).unwrap();
        assert_eq!(ra.to_csv_string().unwrap(), rb.to_csv_string().unwrap());
    }

    #[test]
    fn keep_probability_examples() {
        let cfg = MarginConfig {
            gamma: 1.0,
            c_d: 0.4,
            seed: 0,
        };
        assert_eq!(cfg.keep_probability(0.4), 1.0);
        assert_eq!(cfg.keep_probability(0.0), 0.0);
        assert_eq!(cfg.keep_probability(0.2), 0.5);
        assert_eq!(cfg.keep_probability(0.45), 1.0);
        assert!(MarginConfig {
            gamma: 1.0,
            c_d: 0.6,
            seed: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn rejection_extremes() {
        let mut ds = LabeledDataset::new(1, true);
        for k in 0..1000 {
            let dist = 0.48 * k as f64 / 999.0;
            ds.push(&[0.5], (k % 2) as u8, Some(dist));
        }
        ds.push(&[0.5], 0, Some(0.49));
        let cfg = MarginConfig {
            gamma: 100.0,
            c_d: 0.48,
            seed: 8,
        };
        let kept = margin_reject(&ds, &cfg).unwrap();
        assert!(kept.len() <= ds.len());
        let kd = kept.distances.unwrap();
        // everything beyond c_d and at c_d survives; nothing below 0.9 c_d does
        assert!(kd.contains(&0.49) && kd.contains(&0.48));
        assert!(kd.iter().all(|&v| v > 0.9 * 0.48));
        let mut zero = LabeledDataset::new(1, true);
        zero.push(&[0.5], 1, Some(0.0));
        assert!(margin_reject(&zero, &cfg).unwrap().is_empty());
    }

    #[test]
    fn half_distance_kept_half_the_time() {
        let mut ds = LabeledDataset::new(1, true);
        for _ in 0..20_000 {
            ds.push(&[0.5], 1, Some(0.24));
        }
        let cfg = MarginConfig {
            gamma: 1.0,
            c_d: 0.48,
            seed: 2,
        };
        let frac = margin_reject(&ds, &cfg).unwrap().len() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.015, "{frac}");
    }

    #[test]
    fn retained_mass_follows_gamma() {
        let (tr, _) = sphere_shell_sample(3, 30_000, 0, 17).unwrap();
        let cfg = MarginConfig {
            gamma: 1.189,
            c_d: C_D_SPHERE,
            seed: 4,
        };
        let kept = margin_reject(&tr, &cfg).unwrap();
        let eps = log_grid(1e-3, 1e-1, 9);
        let m: Vec<f64> = eps
            .iter()
            .map(|&e| empirical_margin_mass(&kept, e).unwrap())
            .collect();
        let slope = fit_margin_exponent(&eps, &m).unwrap();
        assert!(slope >= 1.189 - 0.3, "{slope}");
    }

    #[test]
    fn subsample_sizes_and_balance() {
        let (tr, _) = sphere_shell_sample(3, 3000, 0, 1).unwrap();
        let s = subsample(&tr, 499, 9).unwrap();
        assert_eq!(s.len(), 499);
        let [z, o] = s.class_counts();
        assert!(z.abs_diff(o) <= 1);
        assert_eq!(subsample(&tr, 0, 9).unwrap().len(), 0);
        let all = subsample(&tr, tr.len(), 9).unwrap();
        let mut a = all.labels.clone();
        let mut b = tr.labels.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(matches!(subsample(&tr, 3001, 9), Err(Error::Size { .. })));
    }

    #[test]
    fn grids() {
        let (g, t) = size_grid(3).unwrap();
        assert_eq!((g[0], *g.last().unwrap(), t), (499, 120_001, 399_644));
        let (g, t) = size_grid(50).unwrap();
        assert_eq!((*g.last().unwrap(), t), (120_088, 399_187));
        let (g, t) = size_grid(784).unwrap();
        assert_eq!((g[0], t), (249, 4837));
        assert!(size_grid(7).is_err());
    }
}
