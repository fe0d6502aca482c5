//! Spectral densities of few peaks: periodogram, spectral distribution
//! function and multiresolution local squeezing of a circular taut string.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::density::Diagnostics;
use crate::error::{input, Error, Result};
use crate::model::{
    mode_report, Extreme, ExtremeKind, ModeReport, PiecewiseConstantDensity, Segment, TautString,
    TubeSpec,
};
use crate::tautstring::{solve, string_to_density, SolveOptions};

/// A series, possibly normalized to mean 0 and variance 1 (divisor `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Series {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn normalize(values: &[f64]) -> Result<Series> {
    if values.len() < 4 {
        return input("a series needs at least 4 values");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return input("series contains a non-finite value");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate("constant series".into()));
    }
    let sd = var.sqrt();
    Ok(Series {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        normalized: true,
    })
}

/// Ordinates `|sum x_t exp(i w t)|^2 / (2 pi n)` at the Fourier
/// frequencies of the zero-padded length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Original series length `n`.
    pub n: usize,
    pub ordinates: Vec<f64>,
}

impl Periodogram {
    /// Padded length `n'`, a power of two.
    pub fn len(&self) -> usize {
        self.ordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordinates.is_empty()
    }

    /// Grid spacing `2 pi / n'`.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.len() as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.len()).map(|j| j as f64 * h).collect()
    }

    /// Multiresolution depth `m` with `n' = 2^m`.
    pub fn depth(&self) -> usize {
        self.len().trailing_zeros() as usize
    }
}

/// The divisor is the original length, so the left Riemann integral of the
/// ordinates over `[0, 2 pi)` equals the divisor-`n` variance.
pub fn periodogram(series: &Series) -> Result<Periodogram> {
    let n = series.len();
    if n < 2 {
        return input("a periodogram needs at least 2 values");
    }
    let padded = n.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .values
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    FftPlanner::new()
        .plan_fft_forward(padded)
        .process(&mut buf);
    let scale = 1.0 / (2.0 * PI * n as f64);
    Ok(Periodogram {
        n,
        ordinates: buf.iter().map(|z| z.norm_sqr() * scale).collect(),
    })
}

/// `E(w_j)` for `j = 0..=n'` by left Riemann sums; `E(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCdf {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
}

impl SpectralCdf {
    pub fn total(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

pub fn spectral_cdf(pg: &Periodogram) -> SpectralCdf {
    let h = pg.spacing();
    let mut values = Vec::with_capacity(pg.len() + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for e in &pg.ordinates {
        acc += e * h;
        values.push(acc);
    }
    SpectralCdf {
        frequencies: (0..=pg.len()).map(|j| j as f64 * h).collect(),
        values,
    }
}

/// Adds `fraction` times the mean ordinate to every ordinate and rescales
/// so the total power is unchanged.
pub fn lift_baseline(pg: &Periodogram, fraction: f64) -> Result<Periodogram> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return input(format!("baseline fraction {fraction} must be nonnegative"));
    }
    let mean = pg.ordinates.iter().sum::<f64>() / pg.len() as f64;
    let lift = fraction * mean;
    let scale = mean / (mean + lift);
    Ok(Periodogram {
        n: pg.n,
        ordinates: pg.ordinates.iter().map(|e| (e + lift) * scale).collect(),
    })
}

/// `w_jk = sum of e(w_l)/f(w_l)` over `l = (j-1) 2^k + 1 ..= j 2^k`, for
/// `k = 0..m` and `j = 1..=2^(m-k-1)`; `out[k][j-1]` holds `w_jk`.
/// `f` gives the candidate density at the Fourier frequencies.
pub fn multires_coeffs(pg: &Periodogram, f: &[f64]) -> Result<Vec<Vec<f64>>> {
    if f.len() != pg.len() {
        return input("one density value per Fourier frequency required");
    }
    if let Some(v) = f.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return input(format!("density value {v} must be positive"));
    }
    let g: Vec<f64> = pg.ordinates.iter().zip(f).map(|(e, f)| e / f).collect();
    Ok(block_sums(&g, pg.depth()))
}

fn block_sums(g: &[f64], m: usize) -> Vec<Vec<f64>> {
    let half = 1usize << m.saturating_sub(1);
    let mut levels = Vec::with_capacity(m);
    let mut cur: Vec<f64> = g[1..=half].to_vec();
    for _ in 0..m {
        let next: Vec<f64> = cur.chunks(2).map(|c| c.iter().sum()).collect();
        levels.push(cur);
        cur = next;
    }
    levels
}

/// Gamma quantiles with shape `2^k` and unit scale at `(1-alpha)/2n` and
/// its complement.
pub fn gamma_bounds(k: usize, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return input(format!("alpha {alpha} outside (0, 1)"));
    }
    if n == 0 || k >= 52 {
        return input("invalid level or length");
    }
    let a1 = (1.0 - alpha) / (2.0 * n as f64);
    let shape = (1u64 << k) as f64;
    if k == 0 {
        return Ok((-(-a1).ln_1p(), -a1.ln()));
    }
    let g = Gamma::new(shape, 1.0).map_err(|e| Error::Internal(e.to_string()))?;
    Ok((g.inverse_cdf(a1), g.inverse_cdf(1.0 - a1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub alpha: f64,
    pub squeeze_factor: f64,
    pub initial_radius: f64,
    /// Baseline lift as a fraction of the mean ordinate; off when `None`.
    pub baseline: Option<f64>,
    pub max_iterations: usize,
    pub radius_floor: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            squeeze_factor: 0.9,
            initial_radius: 0.5,
            baseline: None,
            max_iterations: 5000,
            radius_floor: 1e-12,
        }
    }
}

impl SpectralConfig {
    pub const DEFAULT_BASELINE: f64 = 1e-3;

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("squeeze factor", self.squeeze_factor)] {
            if !(v > 0.0 && v < 1.0) {
                return input(format!("{name} {v} outside (0, 1)"));
            }
        }
        if !(self.initial_radius > 0.0) || !(self.radius_floor >= 0.0) {
            return input("radii must be positive");
        }
        if let Some(b) = self.baseline {
            if !(b >= 0.0) {
                return input(format!("baseline fraction {b} must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub periodogram: Periodogram,
    pub cdf: SpectralCdf,
    pub string: TautString,
    /// Density on `[0, 2 pi]`.
    pub density: PiecewiseConstantDensity,
    /// Extremes of the density restricted to `[0, pi]`.
    pub modes: ModeReport,
    /// Radii at the grid points `w_0..=w_n'`.
    pub radii: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl SpectralResult {
    pub fn tube(&self) -> Result<TubeSpec> {
        build_tube(&self.cdf, &self.radii)
    }

    /// Peak locations in `[0, pi]`.
    pub fn peaks(&self) -> Vec<f64> {
        self.modes.maxima().map(Extreme::midpoint).collect()
    }

    pub fn peak_count(&self) -> usize {
        self.modes.mode_count
    }

    /// Maxima touching neither `0` nor `pi`.
    pub fn interior_peak_count(&self) -> usize {
        self.modes
            .maxima()
            .filter(|e| e.left > 0.0 && e.right < PI * (1.0 - 1e-12))
            .count()
    }
}

/// Peaks of a density on `[0, 2 pi]` restricted to `[0, pi]`. Ends count
/// when above their neighbour; a constant density has no peaks.
pub fn spectral_modes(density: &PiecewiseConstantDensity) -> Result<ModeReport> {
    let half: Vec<Segment> = density
        .segments()
        .iter()
        .filter(|s| s.left < PI)
        .map(|s| Segment {
            right: s.right.min(PI),
            ..*s
        })
        .filter(|s| s.right > s.left)
        .collect();
    let report = mode_report(&PiecewiseConstantDensity::new(half)?);
    let flat = report.extremes.len() == 1 && report.extremes[0].kind == ExtremeKind::Max && {
        let e = report.extremes[0];
        e.left <= 0.0 && e.right >= PI * (1.0 - 1e-12)
    };
    if flat {
        return Ok(ModeReport::default());
    }
    Ok(report)
}

fn build_tube(cdf: &SpectralCdf, radii: &[f64]) -> Result<TubeSpec> {
    TubeSpec::centered(
        cdf.frequencies.clone(),
        &cdf.values,
        radii,
        cdf.values[0] - radii[0],
        cdf.total(),
    )
}

/// Density at each Fourier frequency: the slope of the string on
/// `[w_j, w_{j+1}]`.
fn grid_density(string: &TautString, cdf: &SpectralCdf) -> Vec<f64> {
    let y = string.eval_sorted(&cdf.frequencies);
    let h = cdf.frequencies[1] - cdf.frequencies[0];
    y.windows(2).map(|w| (w[1] - w[0]) / h).collect()
}

fn ratios(pg: &Periodogram, f: &[f64]) -> Vec<f64> {
    pg.ordinates
        .iter()
        .zip(f)
        .map(|(&e, &f)| {
            if f > 0.0 {
                e / f
            } else if e > 0.0 {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .collect()
}

/// Runs of Fourier indices `l` (`1..=n'/2`) whose size-`2^k` block
/// violates its bounds.
fn failing_blocks(g: &[f64], m: usize, k: usize, (lo, hi): (f64, f64)) -> Vec<(usize, usize)> {
    let levels = block_sums(g, m);
    let size = 1usize << k;
    levels[k]
        .iter()
        .enumerate()
        .filter(|(_, w)| !(**w >= lo && **w <= hi))
        .map(|(j, _)| (j * size + 1, (j + 1) * size))
        .collect()
}

/// Squeezes the grid radii touching the ordinates `a..=b` and their mirror
/// images; the radius at `w_0` follows `w_1`.
fn squeeze_blocks(
    radii: &mut [f64],
    blocks: &[(usize, usize)],
    factor: f64,
    floor: f64,
) -> bool {
    let last = radii.len() - 1;
    let mut hit = vec![false; radii.len()];
    for &(a, b) in blocks {
        for i in a..=(b + 1).min(last) {
            hit[i] = true;
            hit[last - i] = true;
        }
    }
    hit[last] = false;
    let mut changed = false;
    for (r, h) in radii.iter_mut().zip(&hit) {
        if *h {
            let next = (*r * factor).max(floor);
            if next < *r {
                *r = next;
                changed = true;
            }
        }
    }
    radii[0] = radii[1];
    changed
}

fn finish(
    pg: Periodogram,
    cdf: SpectralCdf,
    string: TautString,
    radii: Vec<f64>,
    diagnostics: Diagnostics,
) -> Result<SpectralResult> {
    let density = string_to_density(&string)?;
    let modes = spectral_modes(&density)?;
    Ok(SpectralResult {
        periodogram: pg,
        cdf,
        string,
        density,
        modes,
        radii,
        diagnostics,
    })
}

/// Multiresolution local squeezing: blocks are treated in order of size,
/// moving to the next size only once every block of the current size lies
/// within its gamma bounds.
pub fn solve_spectral(series: &Series, config: &SpectralConfig) -> Result<SpectralResult> {
    config.validate()?;
    let series = if series.normalized {
        series.clone()
    } else {
        normalize(&series.values)?
    };
    let mut pg = periodogram(&series)?;
    if let Some(b) = config.baseline {
        pg = lift_baseline(&pg, b)?;
    }
    let cdf = spectral_cdf(&pg);
    let m = pg.depth();
    let mut radii = vec![config.initial_radius; pg.len() + 1];
    let mut violations = Vec::new();
    let mut it = 0;
    let opts = SolveOptions::default();
    let mut string = solve(&build_tube(&cdf, &radii)?, opts)?;
    for k in 0..m {
        let bounds = gamma_bounds(k, pg.len(), config.alpha)?;
        loop {
            let f = grid_density(&string, &cdf);
            let bad = failing_blocks(&ratios(&pg, &f), m, k, bounds);
            violations.push(bad.len());
            if bad.is_empty() {
                break;
            }
            let before = radii.clone();
            if !squeeze_blocks(&mut radii, &bad, config.squeeze_factor, config.radius_floor)
                || it >= config.max_iterations
            {
                let diagnostics = Diagnostics {
                    iterations: it,
                    radius: before.iter().copied().fold(0.0, f64::max),
                    threshold: None,
                    violations,
                    converged: false,
                };
                let last = finish(pg, cdf, string, before, diagnostics)?;
                return Err(Error::SpectralNotConverged {
                    iterations: it,
                    last: Box::new(last),
                });
            }
            it += 1;
            string = solve(&build_tube(&cdf, &radii)?, opts)?;
        }
    }
    let diagnostics = Diagnostics {
        iterations: it,
        radius: radii.iter().copied().fold(0.0, f64::max),
        threshold: None,
        violations,
        converged: true,
    };
    finish(pg, cdf, string, radii, diagnostics)
}

/// Fit through a tube of constant radius, for exploring peaks by hand.
pub fn fit_spectral_constant(series: &Series, radius: f64) -> Result<SpectralResult> {
    if !(radius > 0.0) {
        return input("radius must be positive");
    }
    let series = if series.normalized {
        series.clone()
    } else {
        normalize(&series.values)?
    };
    let pg = periodogram(&series)?;
    let cdf = spectral_cdf(&pg);
    let radii = vec![radius; pg.len() + 1];
    let string = solve(&build_tube(&cdf, &radii)?, SolveOptions::default())?;
    let diagnostics = Diagnostics {
        radius,
        converged: true,
        ..Diagnostics::default()
    };
    finish(pg, cdf, string, radii, diagnostics)
}

/// Largest constant radius whose fit has exactly `peaks` peaks on
/// `[0, pi]`, by bisection.
pub fn solve_spectral_with_peaks(series: &Series, peaks: usize) -> Result<SpectralResult> {
    let (mut lo, mut hi) = (1e-9, 1.0);
    let mut best = fit_spectral_constant(series, lo)?;
    let mut iterations = 1;
    if best.peak_count() >= peaks {
        while hi / lo > 1.0 + 1e-6 {
            let mid = (lo * hi).sqrt();
            iterations += 1;
            let r = fit_spectral_constant(series, mid)?;
            if r.peak_count() >= peaks {
                lo = mid;
                best = r;
            } else {
                hi = mid;
            }
        }
    }
    let got = best.peak_count();
    best.diagnostics.iterations = iterations;
    best.diagnostics.converged = got == peaks;
    if got == peaks {
        Ok(best)
    } else {
        Err(Error::SpectralNotConverged {
            iterations,
            last: Box::new(best),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn alternating_series_is_already_normal() {
        let s = normalize(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(s.values, vec![1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(normalize(&[2.0; 4]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn hand_dft() {
        let s = normalize(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        let pg = periodogram(&s).unwrap();
        assert!((pg.ordinates[2] - 2.0 / PI).abs() < 1e-12);
        assert!(pg.ordinates[0].abs() < 1e-12);
        let total: f64 = pg.ordinates.iter().sum::<f64>() * pg.spacing();
        assert!((total - 1.0).abs() < 1e-12);
        let cdf = spectral_cdf(&pg);
        assert!(cdf.values[2].abs() < 1e-12);
        assert!((cdf.values[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn padded_total_power_is_one() {
        for n in [5, 100, 1000, 1025] {
            let s = normalize(&noise(n, n as u64)).unwrap();
            let pg = periodogram(&s).unwrap();
            assert!(pg.len().is_power_of_two() && pg.len() >= n);
            assert!((spectral_cdf(&pg).total() - 1.0).abs() < 1e-10);
            for j in 1..pg.len() {
                let (a, b) = (pg.ordinates[j], pg.ordinates[pg.len() - j]);
                assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }
    }

    #[test]
    fn coefficients_at_truth_count_block_size() {
        let s = normalize(&noise(64, 1)).unwrap();
        let pg = periodogram(&s).unwrap();
        let w = multires_coeffs(&pg, &pg.ordinates.iter().map(|e| e.max(1e-300)).collect::<Vec<_>>());
        // the zero ordinate is outside every block
        let w = w.unwrap();
        for (k, level) in w.iter().enumerate() {
            assert_eq!(level.len(), 32 >> k);
            for v in level {
                assert!((v - (1u64 << k) as f64).abs() < 1e-9);
            }
        }
        let f2: Vec<f64> = pg.ordinates.iter().map(|e| 2.0 * e.max(1e-300)).collect();
        let half = multires_coeffs(&pg, &f2).unwrap();
        assert!((half[3][1] - 4.0).abs() < 1e-9);
        assert!(multires_coeffs(&pg, &vec![0.0; 64]).is_err());
    }

    #[test]
    fn exponential_bounds() {
        let (l, u) = gamma_bounds(0, 1024, 0.9).unwrap();
        let a1: f64 = 0.1 / 2048.0;
        assert!((u + a1.ln()).abs() < 1e-12);
        assert!((l - a1).abs() < 1e-8);
        for k in 1..10 {
            let (l, u) = gamma_bounds(k, 1024, 0.9).unwrap();
            assert!(0.0 < l && l < (1u64 << k) as f64 && (1u64 << k) as f64 <= u);
        }
    }

    #[test]
    fn gamma_bounds_match_cdf() {
        let (l, u) = gamma_bounds(4, 512, 0.9).unwrap();
        let g = Gamma::new(16.0, 1.0).unwrap();
        let a1 = 0.1 / 1024.0;
        assert!((g.cdf(l) - a1).abs() < 1e-9);
        assert!((g.cdf(u) - (1.0 - a1)).abs() < 1e-9);
    }

    #[test]
    fn baseline_keeps_total_power() {
        let s = normalize(&noise(100, 3)).unwrap();
        let pg = lift_baseline(&periodogram(&s).unwrap(), 0.01).unwrap();
        assert!((spectral_cdf(&pg).total() - 1.0).abs() < 1e-12);
        assert!(pg.ordinates[0] > 0.0);
    }

    #[test]
    fn flat_density_has_no_peaks() {
        let d = PiecewiseConstantDensity::new(vec![Segment {
            left: 0.0,
            right: 2.0 * PI,
            height: 1.0 / (2.0 * PI),
        }])
        .unwrap();
        assert_eq!(spectral_modes(&d).unwrap().mode_count, 0);
    }

    #[test]
    fn radii_never_grow() {
        let s = normalize(&noise(256, 9)).unwrap();
        let r = solve_spectral(&s, &SpectralConfig::default()).unwrap();
        assert!(r.radii.iter().all(|&x| x <= 0.5));
        assert!(r.diagnostics.converged);
        assert!((r.density.total_mass() - 1.0 - r.radii[0]).abs() < 1e-9);
    }
}
