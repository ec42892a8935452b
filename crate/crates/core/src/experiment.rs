//! End-to-end experiments: learning-curve sweeps over `(γ, n, iteration)`
//! and verification reports for constructed classifiers.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::construct::{build_classifier, verify_theorem1_bounds, BoundReport, ClassifierSpec};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::geometry::{estimate_disagreement, McEstimate, UniformCube};
use crate::loss::empirical_risks;
use crate::nn::NetworkParams;
use crate::rates::theorem1_error_bound;
use crate::record::{read_records, write_records, RecordAppender, RiskRecord};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{
    margin_reject, size_grid, sphere_shell_sample, subsample, MarginConfig, C_D_MNIST, C_D_SPHERE,
    GAMMA_GRID,
};
use crate::scalar::Scalar;
use crate::train::{experiment_width, fit, TrainConfig};

pub const RISKS_FILE: &str = "risks.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub d: usize,
    pub gammas: Vec<f64>,
    /// Training-set sizes; empty means the built-in grid for `d`.
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub master_seed: u64,
    /// Sphere points generated per cell before margin thinning.
    pub train_pool: usize,
    pub test_pool: usize,
    /// Subsample the thinned test pool to this size; `None` keeps all of it.
    pub test_size: Option<usize>,
    /// Margin neighbourhood radius; `None` picks the value for `d`.
    pub c_d: Option<f64>,
    pub trainer: TrainConfig,
    /// Upper bound on `N` in the `(d, 3N, 2N, N, 1)` architecture.
    pub max_width: Option<usize>,
    pub precision: Precision,
    /// Prepared pools (e.g. from `mnist-prep`) used instead of sphere data.
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Risk CSV location; `None` means `risks.csv` in `output_dir`.
    pub risks_csv: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 3,
            gammas: GAMMA_GRID.to_vec(),
            sizes: Vec::new(),
            iterations: 10,
            master_seed: 0,
            train_pool: 30_000,
            test_pool: 100_000,
            test_size: None,
            c_d: None,
            trainer: TrainConfig::default(),
            max_width: None,
            precision: Precision::F64,
            train_data: None,
            test_data: None,
            output_dir: PathBuf::from("out"),
            risks_csv: None,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fills defaults that depend on `d` and checks the result.
    pub fn resolved(mut self) -> Result<Self> {
        if self.sizes.is_empty() {
            self.sizes = size_grid(self.d)?.0;
        }
        if self.c_d.is_none() {
            self.c_d = Some(if self.d == 784 { C_D_MNIST } else { C_D_SPHERE });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!(
                "d must be at least 2, got {}",
                self.d
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sizes must be non-empty and increasing".into(),
            ));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Config("gammas must be positive".into()));
        }
        if self.train_data.is_some() != self.test_data.is_some() {
            return Err(Error::Config("train_data and test_data go together".into()));
        }
        if self.max_width == Some(0) {
            return Err(Error::Config("max_width must be at least 1".into()));
        }
        self.trainer.validate()
    }

    /// Hash of every field that affects results (not the output location or
    /// the worker count).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.risks_csv = None;
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn risks_path(&self) -> PathBuf {
        self.risks_csv
            .clone()
            .unwrap_or_else(|| self.output_dir.join(RISKS_FILE))
    }

    pub fn width_for(&self, n: usize, gamma: f64) -> usize {
        let w = experiment_width(n, gamma);
        self.max_width.map_or(w, |cap| w.min(cap))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub gamma_index: usize,
    pub size_index: usize,
    pub iteration: usize,
}

impl Cell {
    /// Seed shared by every size of one `(γ, iteration)` pair; the pools
    /// are drawn from it.
    pub fn pool_seed(&self, cfg: &ExperimentConfig) -> u64 {
        derive_seed(
            cfg.master_seed,
            &[cfg.d as u64, self.gamma_index as u64, self.iteration as u64],
        )
    }

    pub fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        derive_seed(
            cfg.master_seed,
            &[
                cfg.d as u64,
                self.gamma_index as u64,
                self.size_index as u64,
                self.iteration as u64,
            ],
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
    pub csv: PathBuf,
}

/// Pools shared by all cells when the data comes from files.
pub struct FixedPools {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn cell_pools(
    cfg: &ExperimentConfig,
    cell: &Cell,
    fixed: Option<&FixedPools>,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let seed = cell.pool_seed(cfg);
    let gamma = cfg.gammas[cell.gamma_index];
    let c_d = cfg.c_d.unwrap_or(C_D_SPHERE);
    let (train, test) = match fixed {
        Some(p) => (
            margin_reject(&p.train, &MarginConfig { gamma, c_d, seed })?,
            margin_reject(
                &p.test,
                &MarginConfig {
                    gamma,
                    c_d,
                    seed: seed ^ 1,
                },
            )?,
        ),
        None => {
            let (tr, te) = sphere_shell_sample(cfg.d, cfg.train_pool, cfg.test_pool, seed)?;
            (
                margin_reject(&tr, &MarginConfig { gamma, c_d, seed })?,
                margin_reject(
                    &te,
                    &MarginConfig {
                        gamma,
                        c_d,
                        seed: seed ^ 1,
                    },
                )?,
            )
        }
    };
    Ok((train, test))
}

fn train_and_score<T: Scalar>(
    arch: &[usize],
    train: &LabeledDataset,
    test: &LabeledDataset,
    trainer: &TrainConfig,
) -> Result<(f64, f64, usize)> {
    let out = fit::<T>(arch, train, trainer)?;
    let r = empirical_risks(&out.net, test)?;
    Ok((r.hinge, r.zero_one, out.epochs_run))
}

/// Trains and evaluates one cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    hash: &str,
    fixed: Option<&FixedPools>,
) -> Result<RiskRecord> {
    let start = Instant::now();
    let gamma = cfg.gammas[cell.gamma_index];
    let n = cfg.sizes[cell.size_index];
    let seed = cell.seed(cfg);
    let (train_pool, test_pool) = cell_pools(cfg, cell, fixed)?;
    let train = subsample(&train_pool, n, seed)?;
    let test = match cfg.test_size {
        Some(m) => subsample(&test_pool, m, seed ^ 1)?,
        None => test_pool,
    };
    let w = cfg.width_for(n, gamma);
    let arch = [cfg.d, 3 * w, 2 * w, w, 1];
    let trainer = TrainConfig {
        seed,
        ..cfg.trainer.clone()
    };
    let (hinge_risk, zero_one_risk, epochs_run) = match cfg.precision {
        Precision::F32 => train_and_score::<f32>(&arch, &train, &test, &trainer)?,
        Precision::F64 => train_and_score::<f64>(&arch, &train, &test, &trainer)?,
    };
    Ok(RiskRecord {
        d: cfg.d,
        gamma,
        n,
        iteration: cell.iteration,
        seed,
        hinge_risk,
        zero_one_risk,
        epochs_run,
        wall_seconds: start.elapsed().as_secs_f64(),
        config_hash: hash.to_string(),
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every `(γ, n, iteration)` cell not already present in the output
/// CSV, appending one row per finished cell. Failed cells are logged and
/// counted; the CSV is rewritten sorted at the end.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    let cfg = cfg.clone().resolved()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let csv = cfg.risks_path();
    if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let existing = if csv.exists() && std::fs::metadata(&csv)?.len() > 0 {
        read_records(&csv)?
    } else {
        Vec::new()
    };
    let done: HashSet<_> = existing.iter().map(RiskRecord::cell_key).collect();
    let fixed = match (&cfg.train_data, &cfg.test_data) {
        (Some(tr), Some(te)) => Some(FixedPools {
            train: LabeledDataset::load_csv(tr)?,
            test: LabeledDataset::load_csv(te)?,
        }),
        _ => None,
    };
    if let Some(p) = &fixed {
        if p.train.d != cfg.d || p.test.d != cfg.d {
            return Err(Error::Config(format!(
                "data files have dimension {}/{}, config says {}",
                p.train.d, p.test.d, cfg.d
            )));
        }
    }

    let mut cells = Vec::new();
    let mut skipped = 0;
    for (gi, &gamma) in cfg.gammas.iter().enumerate() {
        for (ni, &n) in cfg.sizes.iter().enumerate() {
            for it in 0..cfg.iterations {
                if done.contains(&(cfg.d, gamma.to_bits(), n, it)) {
                    skipped += 1;
                } else {
                    cells.push(Cell {
                        gamma_index: gi,
                        size_index: ni,
                        iteration: it,
                    });
                }
            }
        }
    }
    // Largest cells first so the slowest jobs do not trail at the end.
    cells.sort_by_key(|c| {
        std::cmp::Reverse(
            cfg.width_for(cfg.sizes[c.size_index], cfg.gammas[c.gamma_index])
                * cfg.sizes[c.size_index],
        )
    });

    let hash = cfg.config_hash();
    let appender = Mutex::new(RecordAppender::open(&csv)?);
    let failed = Mutex::new(0usize);
    let written = Mutex::new(0usize);
    thread_pool(cfg.workers)?.install(|| {
        cells.par_iter().for_each(|cell| {
            match run_cell(&cfg, cell, &hash, fixed.as_ref()) {
                Ok(row) => {
                    log::info!(
                        "gamma {} n {} iteration {}: 0-1 risk {:.3e}, hinge {:.3e}, {} epochs, {:.1}s",
                        row.gamma,
                        row.n,
                        row.iteration,
                        row.zero_one_risk,
                        row.hinge_risk,
                        row.epochs_run,
                        row.wall_seconds
                    );
                    let res = appender.lock().expect("appender lock").append(&row);
                    match res {
                        Ok(()) => *written.lock().expect("counter lock") += 1,
                        Err(e) => {
                            log::error!("could not write row: {e}");
                            *failed.lock().expect("counter lock") += 1;
                        }
                    }
                }
                Err(e) => {
                    log::error!(
                        "cell gamma {} n {} iteration {} failed: {e}",
                        cfg.gammas[cell.gamma_index],
                        cfg.sizes[cell.size_index],
                        cell.iteration
                    );
                    *failed.lock().expect("counter lock") += 1;
                }
            }
        })
    });
    drop(appender);

    let mut rows = read_records(&csv)?;
    rows.sort_by(|a, b| {
        (a.d, a.gamma, a.n, a.iteration)
            .partial_cmp(&(b.d, b.gamma, b.n, b.iteration))
            .expect("finite gammas")
    });
    write_records(&csv, &rows)?;
    Ok(SweepSummary {
        written: written.into_inner().expect("counter lock"),
        skipped,
        failed: failed.into_inner().expect("counter lock"),
        csv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructReport {
    pub d: usize,
    pub pieces: usize,
    pub n: usize,
    pub delta: f64,
    pub deltahat: f64,
    pub bounds: BoundReport,
    pub range_checked: usize,
    pub range_min: f64,
    pub range_max: f64,
    pub range_ok: bool,
    pub interior_checked: usize,
    pub interior_max_error: f64,
    pub interior_ok: bool,
    pub disagreement: McEstimate,
    /// Present when the spec carries margin constants.
    pub error_bound: Option<f64>,
    pub error_bound_ok: Option<bool>,
}

impl ConstructReport {
    pub fn all_ok(&self) -> bool {
        self.bounds.all_ok()
            && self.range_ok
            && self.interior_ok
            && self.error_bound_ok.unwrap_or(true)
    }
}

/// Largest deviation from the target allowed at interior points.
pub const INTERIOR_TOL: f64 = 1e-9;
/// Rounding slack on the output range `[0, 1]`.
pub const RANGE_TOL: f64 = 1e-9;

/// Builds the classifier for `spec` and checks it: architecture and
/// parameter bounds, output range and interior exactness on `n_points`
/// uniform points, and Monte-Carlo disagreement with the target set under
/// the uniform measure.
pub fn verify_classifier(
    spec: &ClassifierSpec<f64>,
    n_points: usize,
    n_mc: usize,
    seed: u64,
) -> Result<(NetworkParams<f64>, ConstructReport)> {
    let net = build_classifier(spec)?;
    let bounds = verify_theorem1_bounds(&net, spec);
    let d = spec.dim();
    let (delta, deltahat) = (spec.delta(), spec.deltahat());

    let mut rng = stream_rng(seed, 0);
    let pts: Vec<f64> = (0..n_points * d).map(|_| rng.random()).collect();
    let out = net.forward_batch(&pts)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut interior, mut worst) = (0usize, 0.0f64);
    for (x, &y) in pts.chunks(d).zip(&out) {
        lo = lo.min(y);
        hi = hi.max(y);
        if let Some(k) = spec.interior_piece(x, deltahat) {
            if spec.pieces[k].vertical_distance(x) > 2.0 * delta {
                interior += 1;
                worst = worst.max((y - spec.indicator(x)).abs());
            }
        }
    }
    let disagreement = estimate_disagreement(
        &net,
        |x| spec.indicator(x),
        &UniformCube { d },
        n_mc,
        derive_seed(seed, &[1]),
    )?;
    let error_bound = spec.margin.map(|mc| {
        theorem1_error_bound(
            d,
            spec.num_pieces(),
            spec.n,
            spec.gamma,
            spec.c1,
            mc.c2,
            mc.c3,
        )
    });
    let error_bound_ok =
        error_bound.map(|b| disagreement.estimate <= b + 3.0 * disagreement.stderr);
    let report = ConstructReport {
        d,
        pieces: spec.num_pieces(),
        n: spec.n,
        delta,
        deltahat,
        bounds,
        range_checked: n_points,
        range_min: lo,
        range_max: hi,
        range_ok: lo >= -RANGE_TOL && hi <= 1.0 + RANGE_TOL,
        interior_checked: interior,
        interior_max_error: worst,
        interior_ok: worst <= INTERIOR_TOL,
        disagreement,
        error_bound,
        error_bound_ok,
    };
    Ok((net, report))
}

pub fn run_construct_verify(
    spec_path: impl AsRef<Path>,
    n_points: usize,
    n_mc: usize,
    seed: u64,
) -> Result<ConstructReport> {
    let spec = ClassifierSpec::<f64>::load(spec_path)?;
    Ok(verify_classifier(&spec, n_points, n_mc, seed)?.1)
}
