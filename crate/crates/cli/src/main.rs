use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use margin_core::experiment::{run_construct_verify, run_sweep, ExperimentConfig, Precision};
use margin_core::geometry::{empirical_margin_mass, fit_margin_exponent, log_grid};
use margin_core::loss::LossKind;
use margin_core::mnist::{load_idx, prepare, MnistConfig};
use margin_core::rates::rate_report;
use margin_core::record::read_records;
use margin_core::sampler::{
    margin_reject, sphere_shell_sample, subsample, MarginConfig, C_D_MNIST, C_D_SPHERE,
};
use margin_core::LabeledDataset;

#[derive(Parser)]
#[command(
    name = "margin",
    version,
    about = "Margin-condition classification experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Experiment config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a margin-thinned sphere sample and write it as CSV.
    Sample(SampleArgs),
    /// Margin mass against eps for a dataset or a fresh sphere sample.
    MarginCheck(MarginCheckArgs),
    /// Build the 784-dimensional 0/1 data from MNIST IDX files.
    MnistPrep(MnistArgs),
    /// Build the classifier of a spec file and check it.
    ConstructVerify(ConstructArgs),
    /// Train and evaluate over a (gamma, n, iteration) grid.
    TrainSweep(SweepArgs),
    /// Fit learning-rate slopes from a risk CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MarginCheckArgs {
    /// Dataset CSV with a dist column; a sphere sample is drawn when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long)]
    gamma: Option<f64>,
    /// Sphere points drawn before thinning.
    #[arg(long, default_value_t = 1_000_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    eps_max: f64,
    #[arg(long, default_value_t = 9)]
    n_eps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long)]
    pilot_epochs: Option<usize>,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Uniform points for the range and interior checks.
    #[arg(long, default_value_t = 100_000)]
    n_points: usize,
    #[arg(long, default_value_t = 1_000_000)]
    n_mc: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Risk CSV (default: risks.csv in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    max_width: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    train_pool: Option<usize>,
    #[arg(long)]
    test_pool: Option<usize>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    ZeroOne,
    Hinge,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    risks: PathBuf,
    #[arg(long, value_enum, default_value_t = Field::ZeroOne)]
    field: Field,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_path(g: &Global, explicit: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let path =
        explicit.unwrap_or_else(|| g.out_dir.clone().unwrap_or_else(|| "out".into()).join(name));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(path)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    println!("{text}");
    Ok(())
}

fn c_d_for(d: usize) -> f64 {
    if d == 784 {
        C_D_MNIST
    } else {
        C_D_SPHERE
    }
}

/// Thinned sphere pool with at least `n` points; the pool doubles until the
/// margin rule leaves enough.
fn thinned_sphere(d: usize, gamma: f64, n: usize, seed: u64) -> Result<LabeledDataset> {
    let margin = MarginConfig {
        gamma,
        c_d: c_d_for(d),
        seed,
    };
    let mut pool = (4 * n).max(1024);
    loop {
        let (train, _) = sphere_shell_sample(d, pool, 0, seed)?;
        let kept = margin_reject(&train, &margin)?;
        if kept.len() >= n {
            return Ok(kept);
        }
        pool = pool.checked_mul(2).context("sample pool overflow")?;
    }
}

fn sample(g: &Global, a: SampleArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let ds = subsample(&thinned_sphere(a.d, a.gamma, a.n, seed)?, a.n, seed)?;
    let path = out_path(g, a.out, "sample.csv")?;
    ds.save_csv(&path)?;
    eprintln!("wrote {} points to {}", ds.len(), path.display());
    Ok(())
}

fn margin_check(g: &Global, a: MarginCheckArgs) -> Result<()> {
    let ds = match &a.data {
        Some(p) => {
            LabeledDataset::load_csv(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => {
            let gamma = a.gamma.context("--gamma is required without --data")?;
            let seed = g.seed.unwrap_or(0);
            let (train, _) = sphere_shell_sample(a.d, a.n_mc, 0, seed)?;
            margin_reject(
                &train,
                &MarginConfig {
                    gamma,
                    c_d: c_d_for(a.d),
                    seed,
                },
            )?
        }
    };
    let eps = log_grid(a.eps_min, a.eps_max, a.n_eps);
    let n = ds.len() as f64;
    let path = out_path(g, a.out, "margin.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["eps", "mass", "stderr"])?;
    let mut masses = Vec::with_capacity(eps.len());
    for &e in &eps {
        let m = empirical_margin_mass(&ds, e)?;
        let se = (m * (1.0 - m) / n).sqrt();
        w.write_record([e.to_string(), m.to_string(), se.to_string()])?;
        masses.push(m);
    }
    w.flush()?;
    match fit_margin_exponent(&eps, &masses) {
        Ok(s) => eprintln!("fitted exponent {s:.4} over {} points", ds.len()),
        Err(e) => eprintln!("no exponent fit: {e}"),
    }
    Ok(())
}

fn mnist_prep(g: &Global, a: MnistArgs) -> Result<()> {
    let train = load_idx(&a.train_images, &a.train_labels)?;
    let test = load_idx(&a.test_images, &a.test_labels)?;
    eprintln!(
        "loaded {} train and {} test images of 0/1",
        train.len(),
        test.len()
    );
    let mut cfg = MnistConfig::new(g.seed.unwrap_or(0));
    if let Some(e) = a.pilot_epochs {
        cfg.pilot.max_epochs = e;
    }
    let out = prepare(&train, &test, &cfg)?;
    out.train.save_csv(out_path(g, None, "mnist_train.csv")?)?;
    out.test.save_csv(out_path(g, None, "mnist_test.csv")?)?;
    fs::write(
        out_path(g, None, "mnist_model.json")?,
        serde_json::to_string(&out.model)?,
    )?;
    write_json(&out_path(g, None, "mnist_report.json")?, &out.report)
}

fn construct_verify(g: &Global, a: ConstructArgs) -> Result<bool> {
    let path = out_path(g, a.out, "construct_report.json")?;
    match run_construct_verify(&a.spec, a.n_points, a.n_mc, g.seed.unwrap_or(0)) {
        Ok(report) => {
            write_json(&path, &report)?;
            Ok(report.all_ok())
        }
        Err(e) => {
            let msg = serde_json::json!({ "spec": a.spec, "error": e.to_string() });
            write_json(&path, &msg)?;
            Ok(false)
        }
    }
}

fn sweep_config(g: &Global, a: SweepArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = g.workers {
        cfg.workers = v;
    }
    if let Some(v) = &g.out_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = a.d {
        cfg.d = v;
        if a.sizes.is_none() && g.config.is_none() {
            cfg.sizes.clear();
        }
    }
    if let Some(v) = a.gammas {
        cfg.gammas = v;
    }
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if a.out.is_some() {
        cfg.risks_csv = a.out;
    }
    if let Some(v) = a.lr {
        cfg.trainer.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.trainer.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.trainer.patience = v;
    }
    if a.batch.is_some() {
        cfg.trainer.batch_size = a.batch;
    }
    if a.max_width.is_some() {
        cfg.max_width = a.max_width;
    }
    if let Some(p) = a.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(v) = a.train_pool {
        cfg.train_pool = v;
    }
    if let Some(v) = a.test_pool {
        cfg.test_pool = v;
    }
    if a.train_data.is_some() {
        cfg.train_data = a.train_data;
    }
    if a.test_data.is_some() {
        cfg.test_data = a.test_data;
    }
    Ok(cfg.resolved()?)
}

fn train_sweep(g: &Global, a: SweepArgs) -> Result<bool> {
    let cfg = sweep_config(g, a)?;
    let s = run_sweep(&cfg)?;
    eprintln!(
        "{} written, {} skipped, {} failed -> {}",
        s.written,
        s.skipped,
        s.failed,
        s.csv.display()
    );
    Ok(s.failed == 0)
}

fn report(g: &Global, a: ReportArgs) -> Result<()> {
    let rows = read_records(&a.risks).with_context(|| format!("reading {}", a.risks.display()))?;
    if rows.is_empty() {
        bail!("{} holds no rows", a.risks.display());
    }
    let field = match a.field {
        Field::ZeroOne => LossKind::ZeroOne,
        Field::Hinge => LossKind::Hinge,
    };
    write_json(
        &out_path(g, a.out, "report.json")?,
        &rate_report(&rows, field),
    )
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    if let Some(w) = g.workers.filter(|&w| w > 0) {
        // Ignored when a pool already exists, which only happens in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global();
    }
    match cli.command {
        Command::Sample(a) => sample(g, a).map(|_| true),
        Command::MarginCheck(a) => margin_check(g, a).map(|_| true),
        Command::MnistPrep(a) => mnist_prep(g, a).map(|_| true),
        Command::ConstructVerify(a) => construct_verify(g, a),
        Command::TrainSweep(a) => train_sweep(g, a),
        Command::Report(a) => report(g, a).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
