//! Monte Carlo quantiles of distribution-free distance statistics, their
//! closed-form approximations, and a persistent table store.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::exec::Execution;
use crate::metrics::{kuiper_profile, string_sequence, sup_abs, uniform_sequence};
use crate::model::{empirical_cdf, EmpiricalCdf, Sample, TautString};
use crate::rng::rng_for;
use crate::tautstring::{fit_constant, string_modes};

pub const TABLE_VERSION: u32 = 1;
pub const TABLE_DIR_ENV: &str = "TSDENSITY_TABLE_DIR";
pub const DEFAULT_SEED: u64 = 0x7a07_5eed;
pub const DEFAULT_REPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatisticKind {
    #[serde(rename = "kolmogorov")]
    Kolmogorov,
    #[serde(rename = "kuiper_k")]
    Kuiper,
    #[serde(rename = "kuiper_diff_i")]
    KuiperDiff,
    #[serde(rename = "unimodal_kolmogorov")]
    UnimodalKolmogorov,
    #[serde(rename = "unimodal_kuiper_k")]
    UnimodalKuiper,
    /// Stage-two level of a compromise procedure; `order` carries kappa and
    /// the table's `alpha` the uniform-unimodality target.
    #[serde(rename = "compromise_level")]
    CompromiseLevel,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::Kolmogorov => "kolmogorov",
            StatisticKind::Kuiper => "kuiper_k",
            StatisticKind::KuiperDiff => "kuiper_diff_i",
            StatisticKind::UnimodalKolmogorov => "unimodal_kolmogorov",
            StatisticKind::UnimodalKuiper => "unimodal_kuiper_k",
            StatisticKind::CompromiseLevel => "compromise_level",
        }
    }

    fn is_unimodal(self) -> bool {
        matches!(self, StatisticKind::UnimodalKolmogorov | StatisticKind::UnimodalKuiper)
    }
}

/// A distance statistic between an empirical distribution of uniforms and
/// either the uniform distribution or its closest unimodal taut string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    /// Kuiper order, or difference index; 1 for the Kolmogorov kinds.
    pub order: usize,
}

impl StatisticSpec {
    pub fn kolmogorov() -> Self {
        Self { kind: StatisticKind::Kolmogorov, order: 1 }
    }

    pub fn kuiper(order: usize) -> Self {
        Self { kind: StatisticKind::Kuiper, order }
    }

    pub fn kuiper_diff(index: usize) -> Self {
        Self { kind: StatisticKind::KuiperDiff, order: index }
    }

    pub fn unimodal_kolmogorov() -> Self {
        Self { kind: StatisticKind::UnimodalKolmogorov, order: 1 }
    }

    pub fn unimodal_kuiper(order: usize) -> Self {
        Self { kind: StatisticKind::UnimodalKuiper, order }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return input("statistic order must be at least 1");
        }
        if self.kind == StatisticKind::CompromiseLevel {
            return input("compromise levels are calibrated, not simulated as a statistic");
        }
        Ok(())
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind.name(), self.order)
    }
}

/// Closed-form quantiles for the published cases, `None` otherwise.
pub fn approx_quantile(spec: StatisticSpec, n: usize, alpha: f64) -> Option<f64> {
    let nf = n as f64;
    let close = |a: f64| (alpha - a).abs() < 1e-12;
    match (spec.kind, spec.order) {
        (StatisticKind::Kolmogorov, _) if close(0.9) => Some(1.245 / nf.sqrt()),
        (StatisticKind::UnimodalKolmogorov, _) if close(0.5) => Some(0.43 / nf.sqrt() - 0.64 / nf),
        (StatisticKind::UnimodalKuiper, 19) if close(0.5) => {
            Some(8.12 / nf.sqrt() - 30.32 / nf.powf(1.04))
        }
        _ => None,
    }
}

/// Empirical `alpha`-quantile: the order statistic at index `ceil(alpha * reps)`.
pub fn empirical_quantile(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = (alpha * values.len() as f64).ceil() as usize;
    values[k.clamp(1, values.len()) - 1]
}

fn check_level(n: usize, alpha: f64, reps: usize) -> Result<()> {
    if n < 2 {
        return input("sample size must be at least 2");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return input(format!("level {alpha} outside (0, 1)"));
    }
    if reps < 100 {
        return input(format!("{reps} replications; at least 100 required"));
    }
    Ok(())
}

fn uniform_sample(n: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, index as u64);
    let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    u
}

/// Smallest constant radius (to within `tol`) whose taut string has a
/// unimodal derivative, with that string.
pub fn minimal_unimodal_radius(ecdf: &EmpiricalCdf, tol: f64) -> Result<(f64, TautString)> {
    let unimodal = |r: f64| -> Result<(bool, TautString)> {
        let s = fit_constant(ecdf, r)?;
        Ok((string_modes(&s)?.mode_count <= 1, s))
    };
    let mut lo = 0.5 / ecdf.n() as f64;
    let (ok, s) = unimodal(lo)?;
    if ok {
        return Ok((lo, s));
    }
    let mut hi = 1.0;
    let mut best = unimodal(hi)?.1;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (ok, s) = unimodal(mid)?;
        if ok {
            hi = mid;
            best = s;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

fn statistic(spec: StatisticSpec, u: &[f64]) -> Result<f64> {
    let k = spec.order;
    if spec.kind.is_unimodal() {
        let ecdf = empirical_cdf(&Sample::new(u.to_vec())?)?;
        let tol = 1e-4 / (u.len() as f64).sqrt();
        let (_, string) = minimal_unimodal_radius(&ecdf, tol)?;
        let d = string_sequence(&ecdf, &string);
        return Ok(match spec.kind {
            StatisticKind::UnimodalKolmogorov => sup_abs(&d),
            _ => kuiper_profile(&d, k)[k - 1],
        });
    }
    let d = uniform_sequence(u);
    Ok(match spec.kind {
        StatisticKind::Kolmogorov => sup_abs(&d),
        StatisticKind::Kuiper => kuiper_profile(&d, k)[k - 1],
        StatisticKind::KuiperDiff => {
            let p = kuiper_profile(&d, k);
            p[k - 1] - if k > 1 { p[k - 2] } else { 0.0 }
        }
        _ => unreachable!("validated"),
    })
}

/// One value of the statistic per replication, replication `i` drawing its
/// uniforms from `(seed, i)`.
pub fn simulate_statistics(
    spec: StatisticSpec,
    n: usize,
    reps: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<f64>> {
    spec.validate()?;
    execution
        .map(reps, |i| statistic(spec, &uniform_sample(n, seed, i)))
        .into_iter()
        .collect()
}

pub fn simulate_quantile(
    spec: StatisticSpec,
    n: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
    execution: Execution,
) -> Result<f64> {
    check_level(n, alpha, reps)?;
    let mut v = simulate_statistics(spec, n, reps, seed, execution)?;
    Ok(empirical_quantile(&mut v, alpha))
}

/// Quantiles of all Kuiper differences `rho_1..rho_order` from one set of
/// replications. Entry `i - 1` equals
/// `simulate_quantile(kuiper_diff(i), ..)` for the same seed.
pub fn simulate_diff_quantiles(
    n: usize,
    order: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<f64>> {
    check_level(n, alpha, reps)?;
    if order == 0 {
        return input("Kuiper order must be at least 1");
    }
    let rows = execution.map(reps, |i| {
        let d = uniform_sequence(&uniform_sample(n, seed, i));
        let p = kuiper_profile(&d, order);
        let mut prev = 0.0;
        p.iter()
            .map(|&v| {
                let r = v - prev;
                prev = v;
                r
            })
            .collect::<Vec<f64>>()
    });
    Ok((0..order)
        .map(|i| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            empirical_quantile(&mut col, alpha)
        })
        .collect())
}

/// Simulated quantiles of one statistic at one level for several sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub spec: StatisticSpec,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub entries: BTreeMap<usize, f64>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    n: usize,
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    version: u32,
    kind: StatisticKind,
    order: usize,
    alpha: f64,
    reps: usize,
    seed: u64,
    entries: Vec<TableEntry>,
}

impl QuantileTable {
    pub fn new(spec: StatisticSpec, alpha: f64, reps: usize, seed: u64) -> Self {
        Self {
            spec,
            alpha,
            reps,
            seed,
            entries: BTreeMap::new(),
        }
    }

    /// Exact entry, or linear interpolation in `1/sqrt(n)` between the
    /// nearest tabulated sizes. `None` outside the tabulated range.
    pub fn get(&self, n: usize) -> Option<f64> {
        if let Some(&q) = self.entries.get(&n) {
            return Some(q);
        }
        let (&n0, &q0) = self.entries.range(..n).next_back()?;
        let (&n1, &q1) = self.entries.range(n..).next()?;
        let t = |m: usize| 1.0 / (m as f64).sqrt();
        let w = (t(n) - t(n0)) / (t(n1) - t(n0));
        Some(q0 + w * (q1 - q0))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TableFile {
            version: TABLE_VERSION,
            kind: self.spec.kind,
            order: self.spec.order,
            alpha: self.alpha,
            reps: self.reps,
            seed: self.seed,
            entries: self.entries.iter().map(|(&n, &q)| TableEntry { n, q }).collect(),
        };
        crate::json::to_string(&file)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == TABLE_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("unsupported table version {v}"))),
            None => return Err(Error::Schema("missing version field".into())),
        }
        let file: TableFile =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        Ok(Self {
            spec: StatisticSpec {
                kind: file.kind,
                order: file.order,
            },
            alpha: file.alpha,
            reps: file.reps,
            seed: file.seed,
            entries: file.entries.into_iter().map(|e| (e.n, e.q)).collect(),
        })
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// File name used by [`Calibrator`] for this statistic and level.
    pub fn file_name(spec: StatisticSpec, alpha: f64) -> String {
        format!("{}_{}_{}.json", spec.kind.name(), spec.order, alpha)
    }
}

pub fn default_table_dir() -> Option<PathBuf> {
    if let Some(d) = std::env::var_os(TABLE_DIR_ENV) {
        return Some(PathBuf::from(d));
    }
    let base = std::env::var_os("XDG_CACHE_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache")))?;
    Some(base.join("tsdensity"))
}

type CacheKey = (StatisticSpec, usize, u64);

/// Which closed-form quantile approximations the calibrator may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximations {
    None,
    /// Only `1.245/sqrt(n)` for the raw Kolmogorov statistic at 0.9.
    #[default]
    Kolmogorov,
    /// Also the unimodal Kolmogorov and Kuiper-19 formulas at 0.5. These
    /// sit well below the simulated finite-n quantiles.
    All,
}

impl Approximations {
    fn allows(self, spec: StatisticSpec) -> bool {
        match self {
            Approximations::None => false,
            Approximations::Kolmogorov => spec.kind == StatisticKind::Kolmogorov,
            Approximations::All => true,
        }
    }
}

/// Resolves quantiles from, in order: the closed-form approximations, an
/// in-memory cache, the on-disk table store, and finally simulation (whose
/// result is cached and stored).
#[derive(Debug)]
pub struct Calibrator {
    dir: Option<PathBuf>,
    reps: usize,
    seed: u64,
    execution: Execution,
    approximations: Approximations,
    cache: Mutex<HashMap<CacheKey, f64>>,
}

impl Default for Calibrator {
    fn default() -> Self {
        Self {
            dir: None,
            reps: DEFAULT_REPS,
            seed: DEFAULT_SEED,
            execution: Execution::default(),
            approximations: Approximations::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Calibrator {
    /// In-memory only.
    pub fn new() -> Self {
        Self::default()
    }

    /// Backed by `TSDENSITY_TABLE_DIR`, or the user cache directory.
    pub fn from_env() -> Self {
        Self {
            dir: default_table_dir(),
            ..Self::default()
        }
    }

    pub fn with_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dir = Some(dir.into());
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Always simulate or look up, never use the closed forms.
    pub fn without_approximations(mut self) -> Self {
        self.approximations = Approximations::None;
        self
    }

    pub fn with_approximations(mut self, approximations: Approximations) -> Self {
        self.approximations = approximations;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    /// Inserts a value into the in-memory cache.
    pub fn set(&self, spec: StatisticSpec, n: usize, alpha: f64, q: f64) {
        self.cache.lock().unwrap().insert((spec, n, alpha.to_bits()), q);
    }

    fn cached(&self, spec: StatisticSpec, n: usize, alpha: f64) -> Option<f64> {
        self.cache.lock().unwrap().get(&(spec, n, alpha.to_bits())).copied()
    }

    fn table_path(&self, spec: StatisticSpec, alpha: f64) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(QuantileTable::file_name(spec, alpha)))
    }

    fn load_table(&self, spec: StatisticSpec, alpha: f64) -> Result<Option<QuantileTable>> {
        match self.table_path(spec, alpha) {
            Some(p) if p.exists() => Ok(Some(QuantileTable::load(&p)?)),
            _ => Ok(None),
        }
    }

    fn lookup(&self, spec: StatisticSpec, n: usize, alpha: f64) -> Result<Option<f64>> {
        if let Some(q) = self.cached(spec, n, alpha) {
            return Ok(Some(q));
        }
        if let Some(q) = self.load_table(spec, alpha)?.and_then(|t| t.get(n)) {
            self.set(spec, n, alpha, q);
            return Ok(Some(q));
        }
        Ok(None)
    }

    /// Records `values[i]` for `specs[i]` in the cache and the table store.
    /// New entries are simulated with the table's own reps and seed.
    fn record(&self, specs: &[StatisticSpec], n: usize, alpha: f64, values: &[f64]) -> Result<()> {
        for (&spec, &q) in specs.iter().zip(values) {
            self.set(spec, n, alpha, q);
            if let Some(path) = self.table_path(spec, alpha) {
                let mut table = self
                    .load_table(spec, alpha)?
                    .unwrap_or_else(|| QuantileTable::new(spec, alpha, self.reps, self.seed));
                table.entries.insert(n, q);
                table.store(&path)?;
            }
        }
        Ok(())
    }

    /// Reps and seed for a new entry of an existing or new table.
    fn settings(&self, spec: StatisticSpec, alpha: f64) -> Result<(usize, u64)> {
        Ok(match self.load_table(spec, alpha)? {
            Some(t) => (t.reps, t.seed),
            None => (self.reps, self.seed),
        })
    }

    pub fn quantile(&self, spec: StatisticSpec, n: usize, alpha: f64) -> Result<f64> {
        spec.validate()?;
        if self.approximations.allows(spec) {
            if let Some(q) = approx_quantile(spec, n, alpha) {
                return Ok(q);
            }
        }
        if let Some(q) = self.lookup(spec, n, alpha)? {
            return Ok(q);
        }
        let (reps, seed) = self.settings(spec, alpha)?;
        let q = simulate_quantile(spec, n, alpha, reps, seed, self.execution)?;
        self.record(&[spec], n, alpha, &[q])?;
        Ok(q)
    }

    /// Quantiles of `rho_1..rho_order`, simulated together when any is missing.
    pub fn diff_quantiles(&self, n: usize, order: usize, alpha: f64) -> Result<Vec<f64>> {
        let specs: Vec<StatisticSpec> = (1..=order).map(StatisticSpec::kuiper_diff).collect();
        let mut out = Vec::with_capacity(order);
        for &s in &specs {
            match self.lookup(s, n, alpha)? {
                Some(q) => out.push(q),
                None => break,
            }
        }
        if out.len() == order {
            return Ok(out);
        }
        let (reps, seed) = self.settings(specs[0], alpha)?;
        let q = simulate_diff_quantiles(n, order, alpha, reps, seed, self.execution)?;
        self.record(&specs, n, alpha, &q)?;
        Ok(q)
    }

    /// Simulates an exact entry (no closed form, no interpolation) and
    /// records it. Returns the quantile with the reps and seed used.
    pub fn simulate_entry(&self, spec: StatisticSpec, n: usize, alpha: f64) -> Result<(f64, usize, u64)> {
        spec.validate()?;
        let (reps, seed) = self.settings(spec, alpha)?;
        let q = simulate_quantile(spec, n, alpha, reps, seed, self.execution)?;
        self.record(&[spec], n, alpha, &[q])?;
        Ok((q, reps, seed))
    }

    /// [`Calibrator::simulate_entry`] for `rho_1..rho_order` together.
    pub fn simulate_diff_entries(
        &self,
        n: usize,
        order: usize,
        alpha: f64,
    ) -> Result<(Vec<f64>, usize, u64)> {
        let specs: Vec<StatisticSpec> = (1..=order).map(StatisticSpec::kuiper_diff).collect();
        let (reps, seed) = self.settings(specs[0], alpha)?;
        let q = simulate_diff_quantiles(n, order, alpha, reps, seed, self.execution)?;
        self.record(&specs, n, alpha, &q)?;
        Ok((q, reps, seed))
    }

    /// Stored stage-two level of a compromise procedure, if calibrated.
    pub fn compromise_level(&self, kappa: usize, target: f64, n: usize) -> Result<Option<f64>> {
        let spec = StatisticSpec {
            kind: StatisticKind::CompromiseLevel,
            order: kappa,
        };
        self.lookup(spec, n, target)
    }

    pub fn store_compromise_level(&self, kappa: usize, target: f64, n: usize, level: f64) -> Result<()> {
        let spec = StatisticSpec {
            kind: StatisticKind::CompromiseLevel,
            order: kappa,
        };
        self.record(&[spec], n, target, &[level])
    }
}
