//! Automatic density procedures: global squeezing under the Kolmogorov and
//! Kuiper criteria, the modified Kuiper criterion, local squeezing driven by
//! cell occupancy counts, the compromise procedures, manual mode selection
//! and the pathway for discrete data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::factorial::ln_binomial;

use crate::calibrate::{Calibrator, StatisticSpec};
use crate::error::{input, Error, Result};
use crate::exec::Execution;
use crate::metrics::{kuiper_profile, string_sequence, sup_abs};
use crate::model::{
    empirical_cdf, finalize_density, mode_report, EmpiricalCdf, Extreme, ModeReport,
    PiecewiseConstantDensity, Sample, Segment, TautString, TubeSpec,
};
use crate::rng::derive_seed;
use crate::tautstring::{fit, solve, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kolmogorov,
    Kuiper,
    ModifiedKuiper,
    LocalSqueeze,
    Compromise50,
    Compromise90,
    Discrete,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kolmogorov => "kolmogorov",
            Method::Kuiper => "kuiper",
            Method::ModifiedKuiper => "modified-kuiper",
            Method::LocalSqueeze => "local-squeeze",
            Method::Compromise50 => "compromise50",
            Method::Compromise90 => "compromise90",
            Method::Discrete => "discrete",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "kolmogorov" | "ko" => Method::Kolmogorov,
            "kuiper" | "ku" => Method::Kuiper,
            "modified-kuiper" => Method::ModifiedKuiper,
            "local-squeeze" => Method::LocalSqueeze,
            "compromise50" => Method::Compromise50,
            "compromise90" => Method::Compromise90,
            "discrete" => Method::Discrete,
            _ => return input(format!("unknown method '{s}'")),
        };
        Ok(m)
    }
}

/// Which quantile a global squeezing procedure compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Quantile of the statistic between a uniform sample and the uniform law.
    Raw,
    /// Quantile of the statistic between a uniform sample and its closest
    /// unimodal taut string.
    UnimodalUniform,
}

/// Kuiper order used by the adequacy test of [`solve_kuiper`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    /// Always order kappa.
    Fixed,
    /// `min(2k - 1, kappa)` for a fit with `k` modes.
    ModeLinked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureConfig {
    pub method: Method,
    pub kappa: usize,
    pub alpha: f64,
    pub calibration: Calibration,
    pub order_rule: OrderRule,
    /// Multiplicative radius reduction per squeezing step.
    pub squeeze_factor: f64,
    pub max_iterations: usize,
    /// Smallest radius; defaults to `1/(2n)`.
    pub radius_floor: Option<f64>,
    /// Refine the first adequate global radius by bisection against the
    /// last inadequate one.
    pub refine: bool,
    /// Level of the starting global Kuiper fit of local squeezing; the
    /// fit uses `kappa` and `calibration`.
    pub initial_alpha: f64,
    /// Stage-two level of the compromise procedures; calibrated on uniform
    /// samples when absent.
    pub stage_level: Option<f64>,
}

impl ProcedureConfig {
    pub fn new(method: Method) -> Self {
        let (kappa, alpha, calibration) = match method {
            Method::Kolmogorov => (1, 0.9, Calibration::Raw),
            Method::Kuiper => (19, 0.5, Calibration::UnimodalUniform),
            Method::ModifiedKuiper => (19, 0.999, Calibration::Raw),
            Method::LocalSqueeze => (1, 0.5, Calibration::UnimodalUniform),
            Method::Compromise50 => (19, 0.6, Calibration::UnimodalUniform),
            Method::Compromise90 => (19, 0.95, Calibration::UnimodalUniform),
            Method::Discrete => (9, 0.5, Calibration::UnimodalUniform),
        };
        Self {
            method,
            kappa,
            alpha,
            calibration,
            order_rule: OrderRule::Fixed,
            squeeze_factor: 0.9,
            max_iterations: 200,
            radius_floor: None,
            refine: true,
            // leaves about 55% of uniform samples unimodal after squeezing
            initial_alpha: if method == Method::LocalSqueeze { 0.6 } else { 0.9 },
            stage_level: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("squeeze factor", self.squeeze_factor),
            ("initial alpha", self.initial_alpha),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return input(format!("{name} {v} outside (0, 1)"));
            }
        }
        if self.kappa == 0 {
            return input("kappa must be at least 1");
        }
        if let Some(l) = self.stage_level {
            if !(l > 0.0 && l < 1.0) {
                return input(format!("stage level {l} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

impl Default for ProcedureConfig {
    fn default() -> Self {
        Self::new(Method::ModifiedKuiper)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Final global radius, or the largest per-point radius after local
    /// squeezing.
    pub radius: f64,
    pub threshold: Option<f64>,
    /// Number of failed inequalities before each local squeezing step.
    pub violations: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityResult {
    pub method: Method,
    pub ecdf: EmpiricalCdf,
    pub density: PiecewiseConstantDensity,
    pub string: TautString,
    pub modes: ModeReport,
    /// Tube radius at each distinct data point.
    pub final_radii: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl DensityResult {
    pub fn tube(&self) -> Result<TubeSpec> {
        TubeSpec::kolmogorov(&self.ecdf, &self.final_radii)
    }
}

fn build(
    method: Method,
    ecdf: &EmpiricalCdf,
    string: TautString,
    radii: Vec<f64>,
    diagnostics: Diagnostics,
) -> Result<DensityResult> {
    let density = finalize_density(&string, ecdf)?;
    let modes = mode_report(&density);
    Ok(DensityResult {
        method,
        ecdf: ecdf.clone(),
        density,
        string,
        modes,
        final_radii: radii,
        diagnostics,
    })
}

fn not_converged(iterations: usize, reason: impl Into<String>, last: DensityResult) -> Error {
    Error::NotConverged {
        iterations,
        reason: reason.into(),
        last: Box::new(last),
    }
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    median(&dev)
}

/// Spreads each group of `k` tied observations at `x` evenly over
/// `[x - eps/2, x + eps/2]` with `eps = 1e-3 * MAD`. Returns a sorted sample.
pub fn preprocess(sample: &Sample) -> Result<Sample> {
    if sample.len() < 2 {
        return input("at least two observations required");
    }
    let m = mad(sample.values());
    if !(m > 0.0) {
        return Err(Error::Degenerate(
            "median absolute deviation is zero; use the discrete pathway".into(),
        ));
    }
    let eps = 1e-3 * m;
    let mut v = sample.clone().sorted().into_values();
    let mut i = 0;
    while i < v.len() {
        let x = v[i];
        let mut j = i + 1;
        while j < v.len() && v[j] == x {
            j += 1;
        }
        let k = (j - i) as f64;
        if j - i > 1 {
            for (r, slot) in v[i..j].iter_mut().enumerate() {
                *slot = x + eps * (-0.5 + 0.5 / k + r as f64 / k);
            }
        }
        i = j;
    }
    Ok(Sample::new(v)?.sorted())
}

/// Per-point radius floors: `max(floor, c_i / (2n))` so that the tube stays
/// feasible at points of multiplicity `c_i`.
fn floors(ecdf: &EmpiricalCdf, floor: Option<f64>) -> Vec<f64> {
    let n = ecdf.n() as f64;
    let base = floor.unwrap_or(0.5 / n);
    ecdf.counts()
        .iter()
        .map(|&c| base.max(c as f64 / (2.0 * n)))
        .collect()
}

fn constant_radii(floor: &[f64], r: f64) -> Vec<f64> {
    floor.iter().map(|&f| r.max(f)).collect()
}

fn kolmogorov_spec(c: Calibration) -> StatisticSpec {
    match c {
        Calibration::Raw => StatisticSpec::kolmogorov(),
        Calibration::UnimodalUniform => StatisticSpec::unimodal_kolmogorov(),
    }
}

fn kuiper_spec(c: Calibration, kappa: usize) -> StatisticSpec {
    match c {
        Calibration::Raw => StatisticSpec::kuiper(kappa),
        Calibration::UnimodalUniform => StatisticSpec::unimodal_kuiper(kappa),
    }
}

/// Taut string through the constant-radius Kolmogorov tube whose radius is
/// the calibrated quantile.
pub fn solve_kolmogorov(
    sample: &Sample,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DensityResult> {
    config.validate()?;
    let ecdf = empirical_cdf(sample)?;
    let n = ecdf.n();
    let q = calibrator.quantile(kolmogorov_spec(config.calibration), n, config.alpha)?;
    let radii = constant_radii(&floors(&ecdf, config.radius_floor), q);
    let string = fit(&ecdf, &radii)?;
    let diagnostics = Diagnostics {
        iterations: 1,
        radius: q,
        threshold: Some(q),
        violations: Vec::new(),
        converged: true,
    };
    build(Method::Kolmogorov, &ecdf, string, radii, diagnostics)
}

/// Global squeezing: shrink a constant radius by the squeeze factor from
/// 0.5 until `adequate` holds, then optionally bisect back towards the last
/// inadequate radius.
fn global_squeeze(
    ecdf: &EmpiricalCdf,
    config: &ProcedureConfig,
    adequate: impl Fn(&TautString) -> Result<bool>,
) -> std::result::Result<(f64, TautString, usize), (usize, f64, TautString)> {
    let floor = floors(ecdf, config.radius_floor);
    let min_r = floor.iter().copied().fold(0.0, f64::max);
    let tol = 1e-4 / (ecdf.n() as f64).sqrt();
    let run = |r: f64| -> Result<(bool, TautString)> {
        let s = fit(ecdf, &constant_radii(&floor, r))?;
        Ok((adequate(&s)?, s))
    };
    let mut r = 0.5f64.max(min_r);
    let mut bad: Option<f64> = None;
    let mut last = None;
    for it in 1..=config.max_iterations {
        let (ok, s) = match run(r) {
            Ok(v) => v,
            Err(_) => return Err((it, r, last.expect("first fit succeeds"))),
        };
        if ok {
            let (mut good, mut best, mut iters) = (r, s, it);
            if let (true, Some(mut hi)) = (config.refine, bad) {
                while hi - good > tol {
                    let mid = 0.5 * (good + hi);
                    iters += 1;
                    match run(mid) {
                        Ok((true, s)) => {
                            good = mid;
                            best = s;
                        }
                        _ => hi = mid,
                    }
                }
            }
            return Ok((good, best, iters));
        }
        last = Some(s);
        if r <= min_r {
            return Err((it, r, last.unwrap()));
        }
        bad = Some(r);
        r = (r * config.squeeze_factor).max(min_r);
    }
    Err((config.max_iterations, r, last.unwrap()))
}

fn global_result(
    method: Method,
    ecdf: &EmpiricalCdf,
    config: &ProcedureConfig,
    threshold: f64,
    outcome: std::result::Result<(f64, TautString, usize), (usize, f64, TautString)>,
) -> Result<DensityResult> {
    let floor = floors(ecdf, config.radius_floor);
    match outcome {
        Ok((r, s, iterations)) => {
            let diagnostics = Diagnostics {
                iterations,
                radius: r,
                threshold: Some(threshold),
                violations: Vec::new(),
                converged: true,
            };
            build(method, ecdf, s, constant_radii(&floor, r), diagnostics)
        }
        Err((iterations, r, s)) => {
            let diagnostics = Diagnostics {
                iterations,
                radius: r,
                threshold: Some(threshold),
                violations: Vec::new(),
                converged: false,
            };
            let last = build(method, ecdf, s, constant_radii(&floor, r), diagnostics)?;
            Err(not_converged(iterations, "radius floor or iteration cap reached", last))
        }
    }
}

/// Global squeezing until the Kuiper distance between the data and the
/// string is below the calibrated quantile.
pub fn solve_kuiper(
    sample: &Sample,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DensityResult> {
    config.validate()?;
    let ecdf = empirical_cdf(sample)?;
    let kappa = config.kappa;
    let q = calibrator.quantile(kuiper_spec(config.calibration, kappa), ecdf.n(), config.alpha)?;
    let outcome = global_squeeze(&ecdf, config, |s| {
        let order = match config.order_rule {
            OrderRule::Fixed => kappa,
            OrderRule::ModeLinked => {
                let k = mode_report(&finalize_density(s, &ecdf)?).mode_count.max(1);
                (2 * k - 1).min(kappa)
            }
        };
        let d = kuiper_profile(&string_sequence(&ecdf, s), order)[order - 1];
        Ok(d <= q)
    });
    global_result(Method::Kuiper, &ecdf, config, q, outcome)
}

/// Modified Kuiper criterion: every difference `rho_i` of Kuiper distances
/// of consecutive orders must stay below its own quantile. Starting from
/// radius 0.5, the radius becomes `min(0.9 r, q_i / 2)` for the smallest
/// violated index `i`.
pub fn solve_modified_kuiper(
    sample: &Sample,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DensityResult> {
    config.validate()?;
    let ecdf = empirical_cdf(sample)?;
    let kappa = config.kappa;
    let q = calibrator.diff_quantiles(ecdf.n(), kappa, config.alpha)?;
    let floor = floors(&ecdf, config.radius_floor);
    let min_r = floor.iter().copied().fold(0.0, f64::max);
    let tol = 1e-4 / (ecdf.n() as f64).sqrt();
    let check = |r: f64| -> Result<(Option<usize>, TautString)> {
        let s = fit(&ecdf, &constant_radii(&floor, r))?;
        let rho = differences(&ecdf, &s, kappa);
        Ok((rho.iter().zip(&q).position(|(r, q)| r > q), s))
    };
    let mut r = 0.5f64.max(min_r);
    let mut bad: Option<f64> = None;
    for it in 1..=config.max_iterations {
        let (violated, s) = check(r)?;
        let mut diagnostics = Diagnostics {
            iterations: it,
            radius: r,
            threshold: violated.map(|i| q[i]),
            violations: Vec::new(),
            converged: violated.is_none(),
        };
        let Some(i) = violated else {
            let (mut good, mut best) = (r, s);
            if let (true, Some(mut hi)) = (config.refine, bad) {
                while hi - good > tol {
                    let mid = 0.5 * (good + hi);
                    diagnostics.iterations += 1;
                    match check(mid)? {
                        (None, s) => {
                            good = mid;
                            best = s;
                        }
                        _ => hi = mid,
                    }
                }
            }
            diagnostics.radius = good;
            return build(Method::ModifiedKuiper, &ecdf, best, constant_radii(&floor, good), diagnostics);
        };
        if r <= min_r || it == config.max_iterations {
            diagnostics.converged = false;
            let radii = constant_radii(&floor, r);
            let last = build(Method::ModifiedKuiper, &ecdf, s, radii, diagnostics)?;
            return Err(not_converged(it, format!("rho_{} above its quantile at the radius floor", i + 1), last));
        }
        bad = Some(r);
        r = (0.9 * r).min(0.5 * q[i]).max(min_r);
    }
    unreachable!("loop returns on its last iteration")
}

/// `rho_1..rho_kappa` between the empirical distribution and the string.
pub fn differences(ecdf: &EmpiricalCdf, string: &TautString, kappa: usize) -> Vec<f64> {
    let p = kuiper_profile(&string_sequence(ecdf, string), kappa);
    let mut prev = 0.0;
    p.iter()
        .map(|&d| {
            let r = d - prev;
            prev = d;
            r
        })
        .collect()
}

/// Dyadic cell counts `w_jk = #{l : k 2^-j < u_l <= (k+1) 2^-j}` for
/// levels `j = 1..=max_level`; a value exactly 0 is counted in cell 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScheme {
    pub max_level: usize,
    /// `counts[j - 1][k]`.
    pub counts: Vec<Vec<usize>>,
}

/// Smallest `m` with `n <= 2^m`.
pub fn max_level(n: usize) -> usize {
    let mut m = 0;
    while (1usize << m) < n {
        m += 1;
    }
    m.max(1)
}

fn cell_index(u: f64, level: usize) -> usize {
    let cells = (1usize << level) as f64;
    ((u * cells).ceil() as usize).saturating_sub(1).min((1 << level) - 1)
}

pub fn cell_frequencies(u: &[f64], max_level: usize) -> Result<CellScheme> {
    if let Some(v) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return input(format!("transformed value {v} outside [0, 1]"));
    }
    let counts = (1..=max_level)
        .map(|j| {
            let mut w = vec![0; 1 << j];
            for &v in u {
                w[cell_index(v, j)] += 1;
            }
            w
        })
        .collect();
    Ok(CellScheme { max_level, counts })
}

/// `ln P(Z = k)` for `Z ~ b(n, p)`.
fn ln_binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()
}

/// Bounds for the level-`j` cell counts of `n` uniforms:
/// `v = min{v : P(Z >= v) <= (1-alpha)/2n}` and
/// `lambda = max{l >= -1 : P(Z <= l) <= (1-alpha)/2n}` for `Z ~ b(n, 2^-j)`.
/// A count is flagged when `w >= v` or `w <= lambda`.
pub fn binomial_bounds(n: usize, j: usize, alpha: f64) -> (i64, i64) {
    let thr = (1.0 - alpha) / (2.0 * n as f64);
    let p = 0.5f64.powi(j as i32);
    let nn = n as u64;
    let mut tail = 0.0;
    let mut v = n as i64 + 1;
    for k in (0..=nn).rev() {
        tail += ln_binom_pmf(nn, k, p).exp();
        if tail > thr {
            break;
        }
        v = k as i64;
    }
    let mut head = 0.0;
    let mut lambda = -1;
    for k in 0..=nn {
        head += ln_binom_pmf(nn, k, p).exp();
        if head > thr {
            break;
        }
        lambda = k as i64;
    }
    (lambda, v)
}

/// String values at the distinct data points, clamped to `[0, 1]`.
fn transformed(ecdf: &EmpiricalCdf, string: &TautString) -> Vec<f64> {
    string
        .eval_sorted(ecdf.points())
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Index ranges of distinct points to squeeze: one per failed cell
/// inequality, enlarged by one point on each side for lower failures.
fn failing_cells(
    u: &[f64],
    counts: &[usize],
    bounds: &[(i64, i64)],
) -> Vec<(usize, usize)> {
    let m = u.len();
    let mut out = Vec::new();
    for (lvl, &(lambda, v)) in bounds.iter().enumerate() {
        let j = lvl + 1;
        let cells = 1usize << j;
        let idx: Vec<usize> = u.iter().map(|&x| cell_index(x, j)).collect();
        let mut w = vec![0usize; cells];
        for (i, &c) in idx.iter().enumerate() {
            w[c] += counts[i];
        }
        // first[k]: first point with cell >= k
        let mut start = 0;
        for (k, &wk) in w.iter().enumerate() {
            while start < m && idx[start] < k {
                start += 1;
            }
            let mut end = start;
            while end < m && idx[end] == k {
                end += 1;
            }
            if wk as i64 >= v && end > start {
                out.push((start, end - 1));
            } else if wk as i64 <= lambda {
                let lo = start.saturating_sub(1);
                let hi = end.min(m - 1);
                out.push((lo, hi));
            }
        }
    }
    out
}

/// Multiplies the radii on each range by `factor`, respecting the floors.
/// Returns whether anything changed.
fn squeeze(radii: &mut [f64], floor: &[f64], ranges: &[(usize, usize)], factor: f64) -> bool {
    let mut hit = vec![false; radii.len()];
    for &(a, b) in ranges {
        hit[a..=b].iter_mut().for_each(|h| *h = true);
    }
    let mut changed = false;
    for i in 0..radii.len() {
        if hit[i] {
            let r = (radii[i] * factor).max(floor[i]);
            if r < radii[i] {
                radii[i] = r;
                changed = true;
            }
        }
    }
    changed
}

/// Local squeezing loop shared by the cell and window variants.
fn local_loop(
    method: Method,
    ecdf: &EmpiricalCdf,
    config: &ProcedureConfig,
    mut radii: Vec<f64>,
    start_iterations: usize,
    failing: impl Fn(&TautString) -> Vec<(usize, usize)>,
) -> Result<DensityResult> {
    let floor = floors(ecdf, config.radius_floor);
    let mut violations = Vec::new();
    let mut it = start_iterations;
    loop {
        let s = fit(ecdf, &radii)?;
        let bad = failing(&s);
        violations.push(bad.len());
        let mut diagnostics = Diagnostics {
            iterations: it,
            radius: radii.iter().copied().fold(0.0, f64::max),
            threshold: None,
            violations: violations.clone(),
            converged: bad.is_empty(),
        };
        if bad.is_empty() {
            return build(method, ecdf, s, radii, diagnostics);
        }
        let before = radii.clone();
        let changed = squeeze(&mut radii, &floor, &bad, config.squeeze_factor);
        if !changed || it + 1 - start_iterations > config.max_iterations {
            diagnostics.converged = false;
            let last = build(method, ecdf, s, before, diagnostics)?;
            return Err(not_converged(it, "local squeezing exhausted", last));
        }
        it += 1;
    }
}

/// Cell-occupancy local squeezing, starting from the global Kuiper fit of
/// order kappa at level `initial_alpha`.
pub fn local_squeeze(
    sample: &Sample,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DensityResult> {
    config.validate()?;
    let ecdf = empirical_cdf(sample)?;
    let n = ecdf.n();
    let mut initial = config.clone();
    initial.method = Method::Kuiper;
    initial.alpha = config.initial_alpha;
    let first = match solve_kuiper(sample, &initial, calibrator) {
        Ok(r) => r,
        Err(Error::NotConverged { last, .. }) => *last,
        Err(e) => return Err(e),
    };
    let bounds: Vec<(i64, i64)> = (1..=max_level(n))
        .map(|j| binomial_bounds(n, j, config.alpha))
        .collect();
    let start = first.diagnostics.iterations;
    let mut r = local_loop(Method::LocalSqueeze, &ecdf, config, first.final_radii, start, |s| {
        failing_cells(&transformed(&ecdf, s), ecdf.counts(), &bounds)
    })?;
    r.diagnostics.threshold = first.diagnostics.threshold;
    Ok(r)
}

/// Critical window masses for the compromise procedures: a window of `m`
/// consecutive points whose fitted mass is below `p[m]` is flagged, where
/// `P(b(n, p[m]) >= m) = level / (number of windows)`.
fn window_thresholds(n: usize, points: usize, level: f64) -> Result<Vec<f64>> {
    let max_m = ((n as f64).sqrt().ceil() as usize).min(points);
    let windows: usize = (2..=max_m).map(|m| points + 1 - m).sum();
    let beta = level / windows.max(1) as f64;
    let mut p = vec![0.0; max_m + 1];
    for (m, slot) in p.iter_mut().enumerate().skip(2) {
        let dist = Beta::new(m as f64, (n - m + 1) as f64)
            .map_err(|e| Error::Internal(e.to_string()))?;
        *slot = dist.inverse_cdf(beta);
    }
    Ok(p)
}

fn failing_windows(ecdf: &EmpiricalCdf, string: &TautString, p: &[f64]) -> Vec<(usize, usize)> {
    let s = string.eval_sorted(ecdf.points());
    let counts = ecdf.counts();
    let mut out = Vec::new();
    for (m, &pm) in p.iter().enumerate().skip(2) {
        for l in 0..=s.len().saturating_sub(m) {
            let hi = l + m - 1;
            let c: usize = counts[l..=hi].iter().sum();
            if c >= m && s[hi] - s[l] < pm {
                out.push((l, hi));
            }
        }
    }
    out
}

/// Stage two of the compromise procedures from a given global fit.
fn compromise_stage_two(
    ecdf: &EmpiricalCdf,
    config: &ProcedureConfig,
    first: DensityResult,
    level: f64,
) -> Result<DensityResult> {
    let p = window_thresholds(ecdf.n(), ecdf.len(), level)?;
    let start = first.diagnostics.iterations;
    let mut r = local_loop(config.method, ecdf, config, first.final_radii, start, |s| {
        failing_windows(ecdf, s, &p)
    })?;
    r.diagnostics.threshold = first.diagnostics.threshold;
    Ok(r)
}

fn compromise_target(method: Method) -> Result<f64> {
    match method {
        Method::Compromise50 => Ok(0.5),
        Method::Compromise90 => Ok(0.9),
        m => input(format!("{m} is not a compromise method")),
    }
}

/// Kuiper global squeezing calibrated at the stage-one level, followed by
/// local squeezing on windows of at most `ceil(sqrt n)` consecutive points.
pub fn compromise(
    sample: &Sample,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DensityResult> {
    config.validate()?;
    let target = compromise_target(config.method)?;
    let ecdf = empirical_cdf(sample)?;
    let n = ecdf.n();
    let level = match config.stage_level {
        Some(l) => l,
        None => match calibrator.compromise_level(config.kappa, target, n)? {
            Some(l) => l,
            None => {
                let l = calibrate_compromise(n, config, calibrator, 500)?.level;
                calibrator.store_compromise_level(config.kappa, target, n, l)?;
                l
            }
        },
    };
    let mut stage_one = config.clone();
    stage_one.method = Method::Kuiper;
    let first = solve_kuiper(sample, &stage_one, calibrator)?;
    compromise_stage_two(&ecdf, config, first, level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompromiseCalibration {
    pub level: f64,
    /// Fraction of unimodal fits on the calibration samples at `level`.
    pub unimodal: f64,
}

/// Bisects (on a log scale) the stage-two level so that the fraction of
/// unimodal fits on `reps` uniform samples of size `n` is the smallest
/// attainable value at or above the target.
pub fn calibrate_compromise(
    n: usize,
    config: &ProcedureConfig,
    calibrator: &Calibrator,
    reps: usize,
) -> Result<CompromiseCalibration> {
    let target = compromise_target(config.method)?;
    let seed = derive_seed(crate::calibrate::DEFAULT_SEED, n as u64);
    let mut stage_one = config.clone();
    stage_one.method = Method::Kuiper;
    let firsts: Vec<(EmpiricalCdf, Option<DensityResult>)> = calibrator
        .execution()
        .map(reps, |i| {
            let mut rng = crate::rng::rng_for(seed, i as u64);
            let u: Vec<f64> = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let s = Sample::new(u).and_then(|s| preprocess(&s))?;
            let e = empirical_cdf(&s)?;
            let r = match solve_kuiper(&s, &stage_one, calibrator) {
                Ok(r) => Some(r),
                Err(Error::NotConverged { last, .. }) => Some(*last),
                Err(e) => return Err(e),
            };
            Ok((e, r))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let rate = |level: f64| -> Result<f64> {
        let unimodal = calibrator
            .execution()
            .map(reps, |i| {
                let (e, first) = &firsts[i];
                let first = first.clone().expect("stage one result");
                if first.modes.mode_count > 1 {
                    return Ok(false);
                }
                let r = match compromise_stage_two(e, config, first, level) {
                    Ok(r) => r,
                    Err(Error::NotConverged { last, .. }) => *last,
                    Err(e) => return Err(e),
                };
                Ok(r.modes.mode_count <= 1)
            })
            .into_iter()
            .collect::<Result<Vec<bool>>>()?;
        Ok(unimodal.iter().filter(|&&b| b).count() as f64 / reps as f64)
    };
    // rate decreases as the level grows
    let (mut lo, mut hi) = (-12.0f64, 0.0f64);
    let mut best = CompromiseCalibration {
        level: 10f64.powf(lo),
        unimodal: rate(10f64.powf(lo))?,
    };
    if best.unimodal < target {
        return Ok(best);
    }
    for _ in 0..14 {
        let mid = 0.5 * (lo + hi);
        let r = rate(10f64.powf(mid))?;
        if r >= target {
            lo = mid;
            if r <= best.unimodal {
                best = CompromiseCalibration {
                    level: 10f64.powf(mid),
                    unimodal: r,
                };
            }
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Squeezes a constant radius by bisection until the fit has exactly
/// `modes` modes, taking the largest such radius.
pub fn solve_with_modes(sample: &Sample, modes: usize, config: &ProcedureConfig) -> Result<DensityResult> {
    if modes == 0 {
        return input("mode count must be at least 1");
    }
    let ecdf = empirical_cdf(sample)?;
    let floor = floors(&ecdf, config.radius_floor);
    let min_r = floor.iter().copied().fold(0.0, f64::max);
    let count = |r: f64| -> Result<(usize, TautString)> {
        let s = fit(&ecdf, &constant_radii(&floor, r))?;
        let k = mode_report(&finalize_density(&s, &ecdf)?).mode_count;
        Ok((k, s))
    };
    let tol = 1e-6 / (ecdf.n() as f64).sqrt();
    let (mut lo, mut hi) = (min_r, 1.0f64.max(min_r));
    let (k_lo, mut s_lo) = count(lo)?;
    let mut iterations = 1;
    if k_lo >= modes {
        let (k_hi, s_hi) = count(hi)?;
        iterations += 1;
        if k_hi >= modes {
            lo = hi;
            s_lo = s_hi;
        } else {
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                iterations += 1;
                let (k, s) = count(mid)?;
                if k >= modes {
                    lo = mid;
                    s_lo = s;
                } else {
                    hi = mid;
                }
            }
        }
    }
    let got = mode_report(&finalize_density(&s_lo, &ecdf)?).mode_count;
    let diagnostics = Diagnostics {
        iterations,
        radius: lo,
        threshold: None,
        violations: Vec::new(),
        converged: got == modes,
    };
    let r = build(config.method, &ecdf, s_lo, constant_radii(&floor, lo), diagnostics)?;
    if got == modes {
        Ok(r)
    } else {
        Err(not_converged(
            iterations,
            format!("no radius gives exactly {modes} modes (nearest {got})"),
            r,
        ))
    }
}

/// Runs the procedure selected by `config.method` on a preprocessed copy
/// of the sample.
pub fn estimate(sample: &Sample, config: &ProcedureConfig, calibrator: &Calibrator) -> Result<DensityResult> {
    let s = preprocess(sample)?;
    match config.method {
        Method::Kolmogorov => solve_kolmogorov(&s, config, calibrator),
        Method::Kuiper => solve_kuiper(&s, config, calibrator),
        Method::ModifiedKuiper => solve_modified_kuiper(&s, config, calibrator),
        Method::LocalSqueeze => local_squeeze(&s, config, calibrator),
        Method::Compromise50 | Method::Compromise90 => compromise(&s, config, calibrator),
        Method::Discrete => input("the discrete method takes support values and counts"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteResult {
    pub support: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Extremes of the probability sequence, in units of the support.
    pub modes: ModeReport,
    pub string: TautString,
    pub radius: f64,
    pub iterations: usize,
}

fn discrete_tube(e: &[f64], r: f64) -> Result<TubeSpec> {
    let big_n = e.len() - 1;
    let xs: Vec<f64> = (0..=big_n).map(|j| j as f64 / big_n as f64).collect();
    TubeSpec::centered(xs, e, &vec![r; e.len()], 0.0, 1.0)
}

fn discrete_probabilities(string: &TautString, big_n: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..=big_n).map(|j| j as f64 / big_n as f64).collect();
    let s = string.eval_sorted(&xs);
    s.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

fn discrete_modes(support: &[f64], p: &[f64]) -> Result<ModeReport> {
    let segments: Vec<Segment> = p
        .iter()
        .enumerate()
        .map(|(j, &h)| Segment {
            left: j as f64,
            right: (j + 1) as f64,
            height: h,
        })
        .collect();
    let grid = mode_report(&PiecewiseConstantDensity::new(segments)?);
    let at = |x: f64, right: bool| {
        let j = x.round() as usize;
        support[if right { j - 1 } else { j }]
    };
    Ok(ModeReport {
        mode_count: grid.mode_count,
        extremes: grid
            .extremes
            .iter()
            .map(|e| Extreme {
                left: at(e.left, false),
                right: at(e.right, true),
                kind: e.kind,
            })
            .collect(),
    })
}

/// Discrete or rounded data: a taut string on the grid `j/N` through a
/// tube around the cumulative relative frequencies, squeezed until the
/// Kuiper distance of order kappa is below the calibrated quantile.
pub fn solve_discrete(
    support: &[f64],
    counts: &[u64],
    config: &ProcedureConfig,
    calibrator: &Calibrator,
) -> Result<DiscreteResult> {
    if support.len() != counts.len() || support.is_empty() {
        return input("support and counts must be nonempty and of equal length");
    }
    if support.windows(2).any(|w| !(w[0] < w[1])) {
        return input("support values must be strictly increasing");
    }
    if counts.contains(&0) {
        return input("counts must be positive");
    }
    let n: u64 = counts.iter().sum();
    if support.len() == 1 {
        let string = TautString::from_knots(vec![
            crate::model::Knot { x: 0.0, y: 0.0, touch: crate::model::Touch::Pinned },
            crate::model::Knot { x: 1.0, y: 1.0, touch: crate::model::Touch::Pinned },
        ])?;
        return Ok(DiscreteResult {
            support: support.to_vec(),
            probabilities: vec![1.0],
            modes: discrete_modes(support, &[1.0])?,
            string,
            radius: 0.0,
            iterations: 0,
        });
    }
    config.validate()?;
    let big_n = support.len();
    let mut e = Vec::with_capacity(big_n + 1);
    e.push(0.0);
    let mut acc = 0u64;
    for &c in counts {
        acc += c;
        e.push(acc as f64 / n as f64);
    }
    let kappa = config.kappa;
    let q = calibrator.quantile(kuiper_spec(config.calibration, kappa), n as usize, config.alpha)?;
    let xs: Vec<f64> = (0..=big_n).map(|j| j as f64 / big_n as f64).collect();
    let run = |r: f64| -> Result<(bool, TautString)> {
        let s = solve(&discrete_tube(&e, r)?, SolveOptions::default())?;
        let d: Vec<f64> = s.eval_sorted(&xs).iter().zip(&e).map(|(s, e)| e - s).collect();
        let ok = kuiper_profile(&d, kappa)[kappa - 1] <= q;
        Ok((ok, s))
    };
    let tol = 1e-4 / (n as f64).sqrt();
    let mut r = 0.5;
    let mut bad = None;
    let mut iterations = 0;
    let (radius, string) = loop {
        iterations += 1;
        let (ok, s) = run(r)?;
        if ok || r < tol {
            let (mut good, mut best) = (r, s);
            if let (true, Some(mut hi)) = (ok && config.refine, bad) {
                while hi - good > tol {
                    let mid = 0.5 * (good + hi);
                    iterations += 1;
                    match run(mid)? {
                        (true, s) => {
                            good = mid;
                            best = s;
                        }
                        _ => hi = mid,
                    }
                }
            }
            if !ok {
                good = 0.0;
                best = run(0.0)?.1;
            }
            break (good, best);
        }
        bad = Some(r);
        r *= config.squeeze_factor;
    };
    let probabilities = discrete_probabilities(&string, big_n);
    let modes = discrete_modes(support, &probabilities)?;
    Ok(DiscreteResult {
        support: support.to_vec(),
        probabilities,
        modes,
        string,
        radius,
        iterations,
    })
}

/// Taut-string probabilities for a fixed radius on the discrete grid.
pub fn discrete_fit(counts: &[u64], radius: f64) -> Result<Vec<f64>> {
    let n: u64 = counts.iter().sum();
    let mut e = vec![0.0];
    let mut acc = 0;
    for &c in counts {
        acc += c;
        e.push(acc as f64 / n as f64);
    }
    let s = solve(&discrete_tube(&e, radius)?, SolveOptions::default())?;
    Ok(discrete_probabilities(&s, counts.len()))
}

/// Groups integer data into support values and counts.
pub fn tabulate(values: &[u64]) -> (Vec<f64>, Vec<u64>) {
    let mut v = values.to_vec();
    v.sort_unstable();
    let mut support = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for x in v {
        if support.last() == Some(&(x as f64)) {
            *counts.last_mut().unwrap() += 1;
        } else {
            support.push(x as f64);
            counts.push(1);
        }
    }
    (support, counts)
}

/// Distance of the fitted string from the data, for reporting.
pub fn kolmogorov_distance(result: &DensityResult) -> f64 {
    sup_abs(&string_sequence(&result.ecdf, &result.string))
}

/// Runs `estimate` over many independent samples.
pub fn estimate_many(
    samples: &[Sample],
    config: &ProcedureConfig,
    calibrator: &Calibrator,
    execution: Execution,
) -> Vec<Result<DensityResult>> {
    execution.map(samples.len(), |i| estimate(&samples[i], config, calibrator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbeds::{sample, TestBed};

    #[test]
    fn preprocess_spreads_ties() {
        let s = Sample::new(vec![1.0, 5.0, 5.0, 9.0, 3.0]).unwrap();
        let m = mad(s.values());
        let p = preprocess(&s).unwrap();
        let eps = 1e-3 * m;
        assert_eq!(p.values().len(), 5);
        assert!((p.values()[2] - (5.0 - eps / 4.0)).abs() < 1e-15);
        assert!((p.values()[3] - (5.0 + eps / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn spreading_formula_matches_hand_values() {
        // x = 5 twice with eps = 0.4 gives 4.9 and 5.1.
        let (x, eps, k) = (5.0, 0.4, 2.0);
        let v: Vec<f64> = (0..2).map(|r| x + eps * (-0.5 + 0.5 / k + r as f64 / k)).collect();
        assert!((v[0] - 4.9).abs() < 1e-12 && (v[1] - 5.1).abs() < 1e-12);
    }

    #[test]
    fn mad_of_small_sample() {
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }

    #[test]
    fn preprocess_is_identity_without_ties() {
        let s = Sample::new(vec![0.3, 0.1, 0.2]).unwrap();
        assert_eq!(preprocess(&s).unwrap().values(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let s = Sample::new(vec![2.0; 5]).unwrap();
        assert!(matches!(preprocess(&s), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cells_are_left_open() {
        let c = cell_frequencies(&[0.1, 0.6], 1).unwrap();
        assert_eq!(c.counts[0], vec![1, 1]);
        let c = cell_frequencies(&[0.5, 0.5], 1).unwrap();
        assert_eq!(c.counts[0], vec![2, 0]);
        let c = cell_frequencies(&[0.0, 1.0], 2).unwrap();
        assert_eq!(c.counts[1], vec![1, 0, 0, 1]);
        assert!(cell_frequencies(&[1.5], 1).is_err());
    }

    #[test]
    fn level_count_matches_definition() {
        assert_eq!(max_level(1000), 10);
        assert_eq!(max_level(1024), 10);
        assert_eq!(max_level(1025), 11);
    }

    #[test]
    fn binomial_bounds_by_hand() {
        assert_eq!(binomial_bounds(4, 1, 0.9), (-1, 5));
        // A level close to 1 never binds.
        assert_eq!(binomial_bounds(4, 1, 1.0 - 1e-6), (-1, 5));
    }

    #[test]
    fn binomial_bounds_bracket_the_mean() {
        let (l, v) = binomial_bounds(1000, 3, 0.9);
        assert!((0..125).contains(&l) && (126..=1000).contains(&v));
    }

    #[test]
    fn two_points_are_unimodal() {
        let s = Sample::new(vec![0.0, 1.0]).unwrap();
        let c = Calibrator::new();
        let r = estimate(&s, &ProcedureConfig::new(Method::Kolmogorov), &c).unwrap();
        assert_eq!(r.modes.mode_count, 1);
        assert!((r.density.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn modified_kuiper_result_satisfies_every_inequality() {
        let c = Calibrator::new().with_reps(2000);
        let s = sample(TestBed::N2, 200, 4).unwrap();
        let cfg = ProcedureConfig::default();
        let r = estimate(&s, &cfg, &c).unwrap();
        let q = c.diff_quantiles(200, 19, 0.999).unwrap();
        let rho = differences(&r.ecdf, &r.string, 19);
        assert!(rho.iter().zip(&q).all(|(r, q)| r <= q));
        assert!((r.density.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn local_squeeze_never_widens() {
        let c = Calibrator::new();
        let s = sample(TestBed::N4, 300, 8).unwrap();
        let r = estimate(&s, &ProcedureConfig::new(Method::LocalSqueeze), &c).unwrap();
        let q = 1.245 / 300f64.sqrt();
        assert!(r.final_radii.iter().all(|&x| x <= q + 1e-15));
        let tube = r.tube().unwrap();
        for (i, &x) in tube.abscissae.iter().enumerate().skip(1).take(tube.len() - 2) {
            let y = r.string.eval(x);
            assert!(y >= tube.lower[i] - 1e-10 && y <= tube.upper[i] + 1e-10);
        }
    }

    #[test]
    fn manual_mode_hits_requested_count() {
        let s = sample(TestBed::N5Claw, 300, 2).unwrap();
        let p = preprocess(&s).unwrap();
        let r = solve_with_modes(&p, 3, &ProcedureConfig::default()).unwrap();
        assert_eq!(r.modes.mode_count, 3);
    }

    #[test]
    fn discrete_two_points_split_evenly() {
        let c = Calibrator::new().with_reps(200);
        let r = solve_discrete(&[0.0, 1.0], &[1, 1], &ProcedureConfig::new(Method::Discrete), &c).unwrap();
        assert!((r.probabilities[0] - 0.5).abs() < 1e-12);
        assert!((r.probabilities[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn discrete_zero_radius_reproduces_frequencies() {
        let p = discrete_fit(&[3, 1, 4, 2], 0.0).unwrap();
        for (a, b) in p.iter().zip([0.3, 0.1, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_single_support_point() {
        let c = Calibrator::new();
        let r = solve_discrete(&[7.0], &[10], &ProcedureConfig::new(Method::Discrete), &c).unwrap();
        assert_eq!(r.probabilities, vec![1.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Kolmogorov,
            Method::Kuiper,
            Method::ModifiedKuiper,
            Method::LocalSqueeze,
            Method::Compromise50,
            Method::Compromise90,
            Method::Discrete,
        ] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
