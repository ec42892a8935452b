//! Parameter schedules, covering-entropy and approximation bounds, and
//! empirical learning-rate fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::record::RiskRecord;
use crate::stats::{log_log_fit, LinearFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n: u64,
    pub d: usize,
    pub m: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub n_hat: u64,
    pub n_total: u64,
    pub w_cap: u64,
    pub b_cap: u64,
}

fn ceil_u64(v: f64, what: &str) -> Result<u64> {
    if !v.is_finite() || v >= u64::MAX as f64 {
        return Err(Error::Parameter(format!("{what} overflows 64 bits ({v})")));
    }
    Ok(v.ceil() as u64)
}

fn overflow(what: &str) -> Error {
    Error::Parameter(format!("{what} overflows 64 bits"))
}

/// Width, neuron, weight and magnitude budgets for sample size `n`. The
/// magnitude cap uses `N = N̂`.
#[allow(clippy::too_many_arguments)]
pub fn schedule(
    n: u64,
    d: usize,
    m: usize,
    gamma: f64,
    alpha: f64,
    c1: f64,
    c2: f64,
    c3: f64,
) -> Result<ScheduleParams> {
    if n == 0 || d < 2 || m == 0 || [gamma, alpha, c1, c2, c3].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Parameter(
            "schedule needs n, m >= 1, d >= 2 and positive constants".into(),
        ));
    }
    let (mf, df) = (m as f64, d as f64);
    let n_hat = ceil_u64(
        (7.0 * mf * df).powf(2.0 / gamma)
            * (df - 1.0)
            * c1
            * c1
            * c2.max(c3).powf(2.0 / gamma)
            * (n as f64).powf(2.0 / (2.0 + gamma)),
        "N_hat",
    )?;
    let (m64, d64) = (m as u64, d as u64);
    let n_total = (4 * (d64 + 1) + 1)
        .checked_add(n_hat)
        .and_then(|v| v.checked_mul(m64))
        .and_then(|v| v.checked_add(d64 + 1))
        .ok_or_else(|| overflow("N_total"))?;
    let w_cap = 41u64
        .checked_mul(m64)
        .and_then(|v| v.checked_mul(d64 * d64))
        .and_then(|v| v.checked_mul(n_hat))
        .ok_or_else(|| overflow("W_cap"))?;
    let r = n_hat as f64 / c1;
    let b_cap = ceil_u64(
        (1.0 + c1.sqrt()) * (7.0 + r + r.powf(gamma / alpha)),
        "B_cap",
    )?;
    Ok(ScheduleParams {
        n,
        d,
        m,
        gamma,
        alpha,
        c1,
        c2,
        c3,
        n_hat,
        n_total,
        w_cap,
        b_cap,
    })
}

/// `W (10 + ln(1/δ) + 5 ln⌈B⌉ + 5 ln max{d, W})`
pub fn entropy_bound(delta: f64, d: usize, w: u64, b: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Parameter(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if w == 0 || !(b > 0.0) {
        return Err(Error::Parameter(
            "entropy bound needs W >= 1 and B > 0".into(),
        ));
    }
    let wf = w as f64;
    Ok(wf * (10.0 - delta.ln() + 5.0 * b.ceil().ln() + 5.0 * (d as f64).max(wf).ln()))
}

/// `3.5 M d (d-1)^{γ/2} C1^γ N^{-γ/2} max{C2, C3}`
pub fn theorem1_error_bound(
    d: usize,
    m: usize,
    n: usize,
    gamma: f64,
    c1: f64,
    c2: f64,
    c3: f64,
) -> f64 {
    3.5 * m as f64
        * d as f64
        * ((d as f64 - 1.0) / n as f64).powf(gamma / 2.0)
        * c1.powf(gamma)
        * c2.max(c3)
}

/// Log-log slope `-γ/(2+γ)` of the learning rate, ignoring the log factor.
pub fn theoretical_rate(gamma: f64) -> f64 {
    -gamma / (2.0 + gamma)
}

fn risk_of(r: &RiskRecord, field: LossKind) -> f64 {
    match field {
        LossKind::Hinge => r.hinge_risk,
        LossKind::ZeroOne => r.zero_one_risk,
    }
}

/// Mean risk per sample size, in increasing `n`.
pub fn mean_risk_by_n(records: &[RiskRecord], field: LossKind) -> Vec<(usize, f64, usize)> {
    let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by_n.entry(r.n).or_default();
        e.0 += risk_of(r, field);
        e.1 += 1;
    }
    by_n.into_iter()
        .map(|(n, (s, c))| (n, s / c as f64, c))
        .collect()
}

/// Least-squares fit of `ln(mean risk)` against `ln n`. Sizes whose mean
/// risk is zero are dropped with a warning; at least three must remain.
pub fn fit_rate(records: &[RiskRecord], field: LossKind) -> Result<LinearFit> {
    let mut ns = Vec::new();
    let mut risks = Vec::new();
    for (n, mean, _) in mean_risk_by_n(records, field) {
        if mean > 0.0 {
            ns.push(n as f64);
            risks.push(mean);
        } else {
            log::warn!("dropping n = {n} from the rate fit: mean risk is zero");
        }
    }
    if ns.len() < 3 {
        return Err(Error::Fit {
            needed: 3,
            got: ns.len(),
        });
    }
    log_log_fit(&ns, &risks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub d: usize,
    pub gamma: f64,
    pub slope: f64,
    pub stderr: f64,
    pub theoretical: f64,
    pub n_points: usize,
}

/// One fit per `(d, γ)` group, in increasing `d` then `γ`. Groups that
/// cannot be fitted are skipped with a warning.
pub fn rate_report(records: &[RiskRecord], field: LossKind) -> Vec<RateSummary> {
    let mut groups: BTreeMap<(usize, u64), Vec<RiskRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.d, r.gamma.to_bits()))
            .or_default()
            .push(r.clone());
    }
    let mut out: Vec<RateSummary> = groups
        .into_values()
        .filter_map(|rows| {
            let (d, gamma) = (rows[0].d, rows[0].gamma);
            match fit_rate(&rows, field) {
                Ok(fit) => Some(RateSummary {
                    d,
                    gamma,
                    slope: fit.slope,
                    stderr: fit.stderr,
                    theoretical: theoretical_rate(gamma),
                    n_points: mean_risk_by_n(&rows, field)
                        .iter()
                        .filter(|(_, m, _)| *m > 0.0)
                        .count(),
                }),
                Err(e) => {
                    log::warn!("no rate for d = {d}, gamma = {gamma}: {e}");
                    None
                }
            }
        })
        .collect();
    out.sort_by(|a, b| (a.d, a.gamma).partial_cmp(&(b.d, b.gamma)).unwrap());
    out
}
