//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use margin_core::construct::bounds::verify_theorem1_bounds;
use margin_core::construct::families::{affine_spec, cosine_slab_spec};
use margin_core::construct::MarginConstants;
use margin_core::experiment::{run_sweep, verify_classifier, ExperimentConfig, Precision};
use margin_core::geometry::{empirical_margin_mass, fit_margin_exponent, log_grid};
use margin_core::loss::{empirical_risk, LossKind};
use margin_core::mnist::{load_idx, prepare, MnistConfig};
use margin_core::nn::{FinalActivation, Layer};
use margin_core::rates::{entropy_bound, rate_report, schedule, theorem1_error_bound};
use margin_core::record::read_records;
use margin_core::rng::stream_rng;
use margin_core::sampler::{margin_reject, sphere_shell_sample, MarginConfig, C_D_SPHERE};
use margin_core::stats::log_log_fit;
use margin_core::train::{backprop_grad, TrainConfig};
use margin_core::{build_classifier, ClassifierSpec, LabeledDataset, Network};
use rand::Rng;

// Tolerances.
const RATE_SLOPE_MAX: f64 = -0.4;
const MARGIN_SLACK: f64 = 0.3;
const GRAD_REL_TOL: f64 = 1e-5;
const ORACLE_TOL: f64 = 1e-9;
const LR_SLOPE_MAX: f64 = -0.6;
const LR_GAP: f64 = 0.15;
const PILOT_ACCURACY: f64 = 0.99;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass(ok: bool, detail: String) -> Outcome {
    Outcome {
        pass: Some(ok),
        detail,
    }
}

fn skip(detail: String) -> Outcome {
    Outcome { pass: None, detail }
}

fn fail(detail: String) -> Outcome {
    pass(false, detail)
}

fn bound_reproduction() -> Outcome {
    let (c1, gamma) = (0.5, 1.0);
    let margin = MarginConstants { c2: 2.0, c3: 2.0 };
    let mut ok = true;
    let mut ns = Vec::new();
    let mut errs = Vec::new();
    let mut parts = Vec::new();
    for n in [4usize, 16, 64, 256] {
        let mut spec = match affine_spec::<f64>(&[0.0], 0.5, n, c1, gamma, 1.0) {
            Ok(s) => s,
            Err(e) => return fail(format!("N = {n}: {e}")),
        };
        spec.margin = Some(margin);
        let (_, r) = match verify_classifier(&spec, 1000, 1_000_000, 11) {
            Ok(v) => v,
            Err(e) => return fail(format!("N = {n}: {e}")),
        };
        let bound = theorem1_error_bound(2, 1, n, gamma, c1, margin.c2, margin.c3);
        let est = r.disagreement;
        ok &= est.estimate <= bound + 3.0 * est.stderr;
        parts.push(format!(
            "N={n}: {:.4}±{:.4} <= {bound:.4}",
            est.estimate, est.stderr
        ));
        ns.push(n as f64);
        errs.push(est.estimate);
    }
    let slope = match log_log_fit(&ns, &errs) {
        Ok(f) => f.slope,
        Err(e) => return fail(format!("{e}")),
    };
    ok &= slope <= RATE_SLOPE_MAX;
    pass(
        ok,
        format!("{}; slope {slope:.3} <= {RATE_SLOPE_MAX}", parts.join(", ")),
    )
}

type AuditSpec = (usize, usize, usize, ClassifierSpec<f64>);

const C1_LADDER: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];

/// The cosine specs of the audit grid, each with the smallest `C₁` on the
/// ladder that can be certified and built.
fn audit_specs() -> Result<Vec<AuditSpec>, String> {
    let mut out = Vec::new();
    for d in [2usize, 3, 5] {
        for m in [1usize, 2, 4] {
            for n in [4usize, 16, 64] {
                let spec = C1_LADDER
                    .iter()
                    .find_map(|&c1| {
                        let s = cosine_slab_spec::<f64>(d, m, n, c1, 1.0, 1.0, 0.2).ok()?;
                        build_classifier(&s).ok().map(|_| s)
                    })
                    .ok_or_else(|| format!("no C1 on the ladder works for d={d} M={m} N={n}"))?;
                out.push((d, m, n, spec));
            }
        }
    }
    Ok(out)
}

fn structural_audit(specs: &[AuditSpec]) -> Outcome {
    let mut bad = Vec::new();
    for (d, m, n, spec) in specs {
        let net = match build_classifier(spec) {
            Ok(net) => net,
            Err(e) => return fail(format!("d={d} M={m} N={n}: {e}")),
        };
        let r = verify_theorem1_bounds(&net, spec);
        if !r.all_ok() {
            bad.push(format!("d={d} M={m} N={n} (C1={})", spec.c1));
        }
    }
    if bad.is_empty() {
        pass(true, format!("{} networks within all bounds", specs.len()))
    } else {
        fail(format!("bound violations: {}", bad.join(", ")))
    }
}

fn range_and_interior(specs: &[AuditSpec]) -> Outcome {
    let (mut interior, mut worst) = (0usize, 0.0f64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ok = true;
    for (k, (d, m, n, spec)) in specs.iter().enumerate() {
        match verify_classifier(spec, 100_000, 1000, 100 + k as u64) {
            Ok((_, r)) => {
                ok &= r.range_ok && r.interior_ok;
                interior += r.interior_checked;
                worst = worst.max(r.interior_max_error);
                lo = lo.min(r.range_min);
                hi = hi.max(r.range_max);
            }
            Err(e) => return fail(format!("d={d} M={m} N={n}: {e}")),
        }
    }
    ok &= interior > 0;
    pass(
        ok,
        format!(
            "{} nets x 1e5 points, outputs in [{lo}, {hi}], {interior} interior points, max error {worst:e}",
            specs.len()
        ),
    )
}

fn margin_law() -> Outcome {
    let eps = log_grid(1e-3, 1e-1, 9);
    let mut ok = true;
    let mut parts = Vec::new();
    for gamma in [1.189, 2.822] {
        let mut slopes = Vec::new();
        for seed in 0..5u64 {
            let (pool, _) = match sphere_shell_sample(3, 30_000, 0, seed) {
                Ok(p) => p,
                Err(e) => return fail(e.to_string()),
            };
            let kept = match margin_reject(
                &pool,
                &MarginConfig {
                    gamma,
                    c_d: C_D_SPHERE,
                    seed,
                },
            ) {
                Ok(k) => k,
                Err(e) => return fail(e.to_string()),
            };
            let masses: Vec<f64> = eps
                .iter()
                .map(|&e| empirical_margin_mass(&kept, e).unwrap_or(0.0))
                .collect();
            match fit_margin_exponent(&eps, &masses) {
                Ok(s) => slopes.push(s),
                Err(e) => return fail(format!("gamma {gamma}, seed {seed}: {e}")),
            }
        }
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        ok &= mean >= gamma - MARGIN_SLACK;
        parts.push(format!(
            "gamma {gamma}: slope {mean:.3} >= {:.3}",
            gamma - MARGIN_SLACK
        ));
    }
    pass(ok, parts.join(", "))
}

fn net_from(arch: &[usize], params: &[f64]) -> Network {
    let mut layers = Vec::new();
    let mut at = 0;
    for w in arch.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        let weights = params[at..at + rows * cols].to_vec();
        at += rows * cols;
        let bias = params[at..at + rows].to_vec();
        at += rows;
        layers.push(Layer::new(rows, cols, weights, bias).expect("finite parameters"));
    }
    Network::new(layers, FinalActivation::Sigmoid).expect("consistent shapes")
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0f64;
    let h = 1e-6;
    for case in 0..50u64 {
        let mut rng = stream_rng(2024, case);
        let depth = rng.random_range(1..=4usize);
        let mut arch = vec![rng.random_range(1..=8usize)];
        for _ in 1..depth {
            arch.push(rng.random_range(1..=8usize));
        }
        arch.push(1);
        let mut params = Vec::new();
        for w in arch.windows(2) {
            let a = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-a..a)));
            params.extend((0..w[1]).map(|_| rng.random_range(-0.5..0.5)));
        }
        let mut ds = LabeledDataset::new(arch[0], false);
        for _ in 0..16 {
            let x: Vec<f64> = (0..arch[0]).map(|_| rng.random()).collect();
            ds.push(&x, rng.random_range(0..2), None);
        }
        let net = net_from(&arch, &params);
        let g = match backprop_grad(&net, &ds) {
            Ok((_, g)) => g.flatten(),
            Err(e) => return fail(e.to_string()),
        };
        let loss = |p: &[f64]| empirical_risk(&net_from(&arch, p), &ds, LossKind::Hinge).unwrap();
        let mut probe = params.clone();
        let fd: Vec<f64> = (0..params.len())
            .map(|k| {
                probe[k] = params[k] + h;
                let up = loss(&probe);
                probe[k] = params[k] - h;
                let down = loss(&probe);
                probe[k] = params[k];
                (up - down) / (2.0 * h)
            })
            .collect();
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = g
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / inf(&g).max(inf(&fd)).max(1.0));
    }
    pass(
        worst <= GRAD_REL_TOL,
        format!("50 nets, max relative error {worst:.2e} <= {GRAD_REL_TOL:e}"),
    )
}

fn oracles() -> Outcome {
    let s = match schedule(8, 2, 1, 2.0, 1.0, 1.0, 1.0, 1.0) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let want_entropy = 215.129_254_649_702_3;
    let h = match entropy_bound(1.0, 2, 10, 1.0) {
        Ok(h) => h,
        Err(e) => return fail(e.to_string()),
    };
    let ok = s.n_hat == 40
        && s.n_total == 56
        && s.w_cap == 6560
        && s.b_cap == 3294
        && (h - want_entropy).abs() <= ORACLE_TOL;
    pass(
        ok,
        format!(
            "schedule (N^={}, N={}, W={}, B={}), entropy {h:.12}",
            s.n_hat, s.n_total, s.w_cap, s.b_cap
        ),
    )
}

const LR_GAMMAS: [f64; 3] = [0.644, 2.278, 5.0];

fn rate_sweep_config(dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        d: 3,
        gammas: LR_GAMMAS.to_vec(),
        sizes: vec![499, 1065, 2271, 4843, 10323],
        iterations: 10,
        train_pool: 100_000,
        test_pool: 1_000_000,
        trainer: TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 20,
            patience: 5,
            batch_size: Some(64),
            ..Default::default()
        },
        max_width: Some(32),
        precision: Precision::F32,
        output_dir: dir,
        ..Default::default()
    }
}

fn learning_rate_ordering(csv: &std::path::Path) -> Outcome {
    let rows = match read_records(csv) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string()),
    };
    let summary = rate_report(&rows, LossKind::ZeroOne);
    let slope = |g: f64| summary.iter().find(|s| s.gamma == g).map(|s| s.slope);
    let (Some(a), Some(b), Some(c)) = (
        slope(LR_GAMMAS[0]),
        slope(LR_GAMMAS[1]),
        slope(LR_GAMMAS[2]),
    ) else {
        return fail(format!(
            "a slope could not be fitted; fitted: {:?}",
            summary
                .iter()
                .map(|s| (s.gamma, s.slope))
                .collect::<Vec<_>>()
        ));
    };
    let ok = a > b && b > c && c <= LR_SLOPE_MAX && c <= a - LR_GAP;
    pass(
        ok,
        format!("slopes {a:.3} > {b:.3} > {c:.3}; {c:.3} <= {LR_SLOPE_MAX}; {c:.3} <= {a:.3} - {LR_GAP}"),
    )
}

fn hinge_dominance(csv: &std::path::Path) -> Outcome {
    match read_records(csv) {
        Ok(rows) => {
            let bad = rows
                .iter()
                .filter(|r| r.zero_one_risk > r.hinge_risk)
                .count();
            pass(
                bad == 0 && !rows.is_empty(),
                format!("{} evaluations, {bad} violations", rows.len()),
            )
        }
        Err(e) => fail(e.to_string()),
    }
}

fn mnist_properties() -> Outcome {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let f = |s: &str| dir.join(s);
    let files = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];
    if files.iter().any(|s| !f(s).exists()) {
        return skip(format!(
            "MNIST IDX files not found in {} (set MNIST_DIR)",
            dir.display()
        ));
    }
    let load = |i: usize| load_idx(f(files[i]), f(files[i + 1]));
    let (train, test) = match (load(0), load(2)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
    };
    let out = match prepare(&train, &test, &MnistConfig::new(0)) {
        Ok(o) => o,
        Err(e) => return fail(e.to_string()),
    };
    let r = &out.report;
    let equal = r.train.smote[0] == r.train.smote[1] && r.test.smote[0] == r.test.smote[1];
    let k = (0.001 * r.train.calibrated as f64).ceil() as usize;
    let in_range = [&out.train, &out.test].iter().all(|ds| {
        ds.distances
            .as_ref()
            .is_some_and(|v| v.iter().all(|&x| (0.0..=0.5).contains(&x)))
    });
    let ok = equal && r.train.trimmed == k && in_range && r.pilot_train_accuracy >= PILOT_ACCURACY;
    pass(
        ok,
        format!(
            "smote {:?}/{:?}, trimmed {} of {} (want {k}), distances in [0, 1/2]: {in_range}, pilot accuracy {:.4}",
            r.train.smote, r.test.smote, r.train.trimmed, r.train.calibrated, r.pilot_train_accuracy
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{tag} [{secs:7.1}s] {name}: {}", o.detail);
        results.push((name, o, secs));
    };

    run("theorem bound reproduction", &mut bound_reproduction);
    let specs = audit_specs();
    match &specs {
        Ok(specs) => {
            run("structural audit", &mut || structural_audit(specs));
            run("range and interior exactness", &mut || {
                range_and_interior(specs)
            });
        }
        Err(e) => {
            run("structural audit", &mut || fail(e.clone()));
            run("range and interior exactness", &mut || fail(e.clone()));
        }
    }
    run("margin sampler law", &mut margin_law);
    run("gradient correctness", &mut gradient_correctness);
    run("schedule and entropy oracles", &mut oracles);

    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = rate_sweep_config(dir.path().to_path_buf());
    let t = Instant::now();
    let sweep = run_sweep(&cfg);
    let sweep_secs = t.elapsed().as_secs_f64();
    match &sweep {
        Ok(s) if s.failed == 0 => {
            let csv = s.csv.clone();
            run("learning-rate ordering", &mut || {
                let mut o = learning_rate_ordering(&csv);
                o.detail = format!("{} (sweep {sweep_secs:.0}s)", o.detail);
                o
            });
            run("hinge dominance", &mut || hinge_dominance(&csv));
        }
        Ok(s) => {
            let msg = format!("{} sweep cells failed", s.failed);
            run("learning-rate ordering", &mut || fail(msg.clone()));
            run("hinge dominance", &mut || fail(msg.clone()));
        }
        Err(e) => {
            let msg = e.to_string();
            run("learning-rate ordering", &mut || fail(msg.clone()));
            run("hinge dominance", &mut || fail(msg.clone()));
        }
    }
    run("MNIST pipeline properties", &mut mnist_properties);

    let failed = results.iter().filter(|r| r.1.pass == Some(false)).count();
    let skipped = results.iter().filter(|r| r.1.pass.is_none()).count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} skipped",
        results.len() - failed - skipped
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
