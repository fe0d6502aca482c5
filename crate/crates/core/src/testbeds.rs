//! Seeded generators for the benchmark distributions and time-series
//! schemes, with exact densities and mode locations for scoring.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::model::{ExtremeKind, ModeReport, Sample};
use crate::rng::{rng, Rng};

/// Peak-matching tolerance used when scoring mode locations.
pub const PEAK_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestBed {
    U,
    N1,
    S,
    N2,
    N4,
    N5Claw,
    N10_5,
    N10_10,
    PoissonMix,
    Gardner,
    Neumann,
}

impl TestBed {
    pub const DENSITIES: [TestBed; 8] = [
        TestBed::U,
        TestBed::N1,
        TestBed::S,
        TestBed::N2,
        TestBed::N4,
        TestBed::N5Claw,
        TestBed::N10_5,
        TestBed::N10_10,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TestBed::U => "U",
            TestBed::N1 => "N1",
            TestBed::S => "S",
            TestBed::N2 => "N2",
            TestBed::N4 => "N4",
            TestBed::N5Claw => "N5_claw",
            TestBed::N10_5 => "N10_5",
            TestBed::N10_10 => "N10_10",
            TestBed::PoissonMix => "poisson_mix",
            TestBed::Gardner => "gardner",
            TestBed::Neumann => "neumann",
        }
    }

    pub fn is_series(self) -> bool {
        matches!(self, TestBed::Gardner | TestBed::Neumann)
    }

    /// Gaussian mixture behind the test bed, if it is one.
    pub fn mixture(self) -> Option<Mixture> {
        let m = match self {
            TestBed::N1 => Mixture::new(vec![(1.0, 0.0, 1.0)]),
            TestBed::N2 => Mixture::new(vec![(0.5, 0.0, 1.0), (0.5, 3.0, 1.0)]),
            TestBed::N4 => Mixture::new(vec![
                (0.8, 0.0, 3f64.sqrt()),
                (0.015, 8.0, 0.02f64.sqrt()),
                (0.015, 9.0, 0.02f64.sqrt()),
                (0.17, 15.0, 0.2f64.sqrt()),
            ]),
            TestBed::N5Claw => Mixture::claw(0.1),
            TestBed::N10_5 => Mixture::new((1..=10).map(|i| (0.1, 5.0 * i as f64 - 5.0, 1.0)).collect()),
            TestBed::N10_10 => {
                Mixture::new((1..=10).map(|i| (0.1, 10.0 * i as f64 - 5.0, 1.0)).collect())
            }
            _ => return None,
        };
        Some(m)
    }

    /// Number of modes of the generating density (spectral peaks in
    /// `(0, pi)` for the series schemes).
    pub fn true_mode_count(self) -> usize {
        match self {
            TestBed::U | TestBed::N1 | TestBed::S => 1,
            TestBed::N2 => 2,
            TestBed::N4 => 4,
            TestBed::N5Claw => 5,
            TestBed::N10_5 | TestBed::N10_10 => 10,
            TestBed::PoissonMix => 3,
            TestBed::Gardner => 3,
            TestBed::Neumann => 2,
        }
    }

    pub fn truth(self) -> TruthRecord {
        let modes = match self {
            TestBed::U => vec![0.5],
            TestBed::S => vec![0.0],
            TestBed::PoissonMix => vec![2.0, 8.0, 21.0],
            TestBed::Gardner => vec![0.1, 0.205, 0.35],
            TestBed::Neumann => neumann_peaks(),
            _ => self.mixture().expect("mixture").modes(),
        };
        TruthRecord {
            testbed: self,
            mode_count: self.true_mode_count(),
            modes,
            tolerance: PEAK_TOLERANCE,
        }
    }
}

impl fmt::Display for TestBed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TestBed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = match s.to_ascii_lowercase().as_str() {
            "u" | "uniform" => TestBed::U,
            "n1" | "normal" => TestBed::N1,
            "s" | "slash" => TestBed::S,
            "n2" => TestBed::N2,
            "n4" => TestBed::N4,
            "n5" | "n5_claw" | "claw" => TestBed::N5Claw,
            "n10_5" => TestBed::N10_5,
            "n10_10" => TestBed::N10_10,
            "poisson_mix" | "poisson" => TestBed::PoissonMix,
            "gardner" => TestBed::Gardner,
            "neumann" => TestBed::Neumann,
            _ => return input(format!("unknown test bed '{s}'")),
        };
        Ok(t)
    }
}

/// Known modes of a generating distribution and the matching tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub testbed: TestBed,
    pub mode_count: usize,
    pub modes: Vec<f64>,
    pub tolerance: f64,
}

impl TruthRecord {
    pub fn density(&self, x: f64) -> Option<f64> {
        match self.testbed {
            TestBed::U => Some(if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 }),
            TestBed::S => Some(slash_pdf(x)),
            t => t.mixture().map(|m| m.pdf(x)),
        }
    }
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn slash_pdf(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        phi(0.0) / 2.0
    } else {
        (phi(0.0) - phi(x)) / (x * x)
    }
}

/// Finite Gaussian mixture given by `(weight, mean, standard deviation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub components: Vec<(f64, f64, f64)>,
}

impl Mixture {
    pub fn new(components: Vec<(f64, f64, f64)>) -> Self {
        Self { components }
    }

    /// `0.5 N(0, 1) + 0.1 sum_{i=0}^{4} N(i/2 - 1, sd^2)`.
    pub fn claw(sd: f64) -> Self {
        let mut c = vec![(0.5, 0.0, 1.0)];
        c.extend((0..5).map(|i| (0.1, i as f64 / 2.0 - 1.0, sd)));
        Self::new(c)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|&(w, m, s)| w * phi((x - m) / s) / s)
            .sum()
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components[self.components.len() - 1];
        for &c in &self.components {
            acc += c.0;
            if u < acc {
                pick = c;
                break;
            }
        }
        let z: f64 = StandardNormal.sample(rng);
        pick.1 + pick.2 * z
    }

    /// Local maxima of the density, located on a dense grid and refined by
    /// golden-section search.
    pub fn modes(&self) -> Vec<f64> {
        let lo = self
            .components
            .iter()
            .map(|c| c.1 - 6.0 * c.2)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|c| c.1 + 6.0 * c.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let m = 200_000;
        let h = (hi - lo) / m as f64;
        let f: Vec<f64> = (0..=m).map(|i| self.pdf(lo + i as f64 * h)).collect();
        let mut out = Vec::new();
        for i in 1..m {
            if f[i] > f[i - 1] && f[i] >= f[i + 1] {
                out.push(golden_max(|x| self.pdf(x), lo + (i - 1) as f64 * h, lo + (i + 1) as f64 * h));
            }
        }
        out
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

pub fn draw(spec: TestBed, rng: &mut Rng) -> Result<f64> {
    Ok(match spec {
        TestBed::U => rng.random::<f64>(),
        TestBed::S => {
            let z: f64 = StandardNormal.sample(rng);
            // Open interval (0, 1] so the ratio stays finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            z / u
        }
        TestBed::PoissonMix | TestBed::Gardner | TestBed::Neumann => {
            return input(format!("{spec} is not a continuous density test bed"))
        }
        t => t.mixture().expect("mixture").draw(rng),
    })
}

/// `n` i.i.d. draws from a continuous test bed; deterministic in `seed`.
pub fn sample(spec: TestBed, n: usize, seed: u64) -> Result<Sample> {
    let mut r = rng(seed);
    sample_with(spec, n, &mut r)
}

pub fn sample_with(spec: TestBed, n: usize, rng: &mut Rng) -> Result<Sample> {
    if n == 0 {
        return input("n must be at least 1");
    }
    let v = (0..n).map(|_| draw(spec, rng)).collect::<Result<Vec<_>>>()?;
    Sample::new(v)
}

pub const POISSON_MIX: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 8.0), (0.25, 21.0)];

/// Draws from `0.25 P(2) + 0.5 P(8) + 0.25 P(21)`.
pub fn sample_poisson_mix(n: usize, seed: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return input("n must be at least 1");
    }
    let mut r = rng(seed);
    let dists: Vec<(f64, Poisson<f64>)> = POISSON_MIX
        .iter()
        .map(|&(w, l)| (w, Poisson::new(l).expect("valid rate")))
        .collect();
    Ok((0..n)
        .map(|_| {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut d = &dists[dists.len() - 1].1;
            for (w, p) in &dists {
                acc += w;
                if u < acc {
                    d = p;
                    break;
                }
            }
            d.sample(&mut r) as u64
        })
        .collect())
}

/// `(1/3) exp(-300 (nu - 0.35)^2)` with `nu = omega / 2 pi` folded into
/// `[0, 1/2]`, so the density is symmetric about `pi`.
pub fn gardner_density(omega: f64) -> f64 {
    let mut nu = (omega / (2.0 * PI)).rem_euclid(1.0);
    if nu > 0.5 {
        nu = 1.0 - nu;
    }
    (-300.0 * (nu - 0.35).powi(2)).exp() / 3.0
}

/// Sinusoids `(amplitude, frequency in cycles, phase in degrees)`.
pub const GARDNER_SINES: [(f64, f64, f64); 3] = [
    (std::f64::consts::SQRT_2, 0.2, 106.0),
    (std::f64::consts::SQRT_2, 0.21, 45.1),
    (std::f64::consts::SQRT_2 / 10.0, 0.1, 32.6),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GardnerConfig {
    pub length: usize,
    pub segment_start: usize,
    pub segment_length: usize,
    pub noise_scale: f64,
    pub sine_scale: f64,
}

impl Default for GardnerConfig {
    fn default() -> Self {
        Self {
            length: 2048,
            segment_start: 1023,
            segment_length: 256,
            noise_scale: 1.0,
            sine_scale: 1.0,
        }
    }
}

/// Coloured noise with spectral density [`gardner_density`] obtained by
/// filtering white noise in the frequency domain, plus three sinusoids.
pub fn gardner_series(config: GardnerConfig, seed: u64) -> Result<Vec<f64>> {
    let GardnerConfig {
        length,
        segment_start,
        segment_length,
        noise_scale,
        sine_scale,
    } = config;
    if length < 2 || segment_length == 0 || segment_start + segment_length > length {
        return input("segment must lie inside the generated realisation");
    }
    let mut r = rng(seed);
    let mut buf: Vec<Complex<f64>> = (0..length)
        .map(|_| Complex::new(StandardNormal.sample(&mut r), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(length).process(&mut buf);
    for (j, z) in buf.iter_mut().enumerate() {
        let omega = 2.0 * PI * j as f64 / length as f64;
        *z *= (2.0 * PI * gardner_density(omega)).sqrt();
    }
    planner.plan_fft_inverse(length).process(&mut buf);
    let series = (segment_start..segment_start + segment_length)
        .map(|t| {
            let noise = noise_scale * buf[t].re / length as f64;
            let sines: f64 = GARDNER_SINES
                .iter()
                .map(|&(a, f, ph)| a * (2.0 * PI * (f * t as f64 - ph / 360.0)).sin())
                .sum();
            noise + sine_scale * sines
        })
        .collect();
    Ok(series)
}

pub const NEUMANN_AR: (f64, f64) = (0.2, 0.9);
pub const NEUMANN_MA: (f64, f64, f64) = (1.0, 0.0, 1.0);
pub const NEUMANN_BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannConfig {
    pub length: usize,
    pub c0: f64,
    pub innovation_sd: f64,
}

impl Default for NeumannConfig {
    fn default() -> Self {
        Self {
            length: 1024,
            c0: 0.5,
            innovation_sd: 1.0,
        }
    }
}

/// `X_t = Y_t + c0 Z_t` with
/// `Y_t + 0.2 Y_{t-1} + 0.9 Y_{t-2} = e_t + e_{t-2}`.
pub fn neumann_series(config: NeumannConfig, seed: u64) -> Result<Vec<f64>> {
    if config.length == 0 {
        return input("length must be positive");
    }
    let mut r = rng(seed);
    let innov = Normal::new(0.0, config.innovation_sd.max(0.0)).map_err(|e| Error::Input(e.to_string()))?;
    let (a1, a2) = NEUMANN_AR;
    let (b0, b1, b2) = NEUMANN_MA;
    let total = config.length + NEUMANN_BURN_IN;
    let (mut y1, mut y2, mut e1, mut e2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(config.length);
    for t in 0..total {
        let e: f64 = innov.sample(&mut r);
        let z: f64 = StandardNormal.sample(&mut r);
        let y = -a1 * y1 - a2 * y2 + b0 * e + b1 * e1 + b2 * e2;
        (y2, y1, e2, e1) = (y1, y, e1, e);
        if t >= NEUMANN_BURN_IN {
            out.push(y + config.c0 * z);
        }
    }
    Ok(out)
}

/// Spectral density of the Neumann scheme (variance = integral over `[0, 2 pi]`).
pub fn neumann_density(omega: f64) -> f64 {
    let (a1, a2) = NEUMANN_AR;
    let (b0, b1, b2) = NEUMANN_MA;
    let z1 = Complex::from_polar(1.0, omega);
    let z2 = Complex::from_polar(1.0, 2.0 * omega);
    let num = (b0 + b1 * z1 + b2 * z2).norm_sqr();
    let den = (1.0 + a1 * z1 + a2 * z2).norm_sqr();
    (num / den + 0.25) / (2.0 * PI)
}

/// Local maxima of [`neumann_density`] on the circle, folded into
/// `[0, pi]`. The density is even and `2 pi`-periodic, so an end of
/// `[0, pi]` is a peak when the density decreases away from it.
pub fn neumann_peaks() -> Vec<f64> {
    let m = 100_000;
    let h = PI / m as f64;
    let f: Vec<f64> = (0..=m).map(|i| neumann_density(i as f64 * h)).collect();
    let mut peaks = Vec::new();
    if f[0] > f[1] {
        peaks.push(0.0);
    }
    peaks.extend(
        (1..m)
            .filter(|&i| f[i] > f[i - 1] && f[i] >= f[i + 1])
            .map(|i| golden_max(neumann_density, (i - 1) as f64 * h, (i + 1) as f64 * h)),
    );
    if f[m] > f[m - 1] {
        peaks.push(PI);
    }
    peaks
}

/// Greedy nearest matching of fitted maxima (interval midpoints) to true
/// modes; a fitted peak counts when it lies within `truth.tolerance` of a
/// still unmatched true mode. Returns the number correct and a flag per
/// fitted maximum.
pub fn score_peaks(report: &ModeReport, truth: &TruthRecord) -> (usize, Vec<bool>) {
    let mids: Vec<f64> = report
        .extremes
        .iter()
        .filter(|e| e.kind == ExtremeKind::Max)
        .map(|e| e.midpoint())
        .collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, m) in mids.iter().enumerate() {
        for (j, t) in truth.modes.iter().enumerate() {
            let d = (m - t).abs();
            if d < truth.tolerance {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut fitted = vec![false; mids.len()];
    let mut used = vec![false; truth.modes.len()];
    for (_, i, j) in pairs {
        if !fitted[i] && !used[j] {
            fitted[i] = true;
            used[j] = true;
        }
    }
    (fitted.iter().filter(|&&f| f).count(), fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Extreme;

    #[test]
    fn uniform_support() {
        let s = sample(TestBed::U, 1000, 3).unwrap();
        assert!(s.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn claw_density_at_zero() {
        let f0 = TestBed::N5Claw.mixture().unwrap().pdf(0.0);
        let expected = 0.5 * phi(0.0) + 0.1 * phi(0.0) / 0.1;
        assert!((f0 - expected).abs() < 1e-5);
        assert!((f0 - 0.5984).abs() < 1e-4);
    }

    #[test]
    fn claw_truth_has_five_modes_near_component_centres() {
        let t = TestBed::N5Claw.truth();
        assert_eq!(t.modes.len(), 5);
        for (m, c) in t.modes.iter().zip([-1.0, -0.5, 0.0, 0.5, 1.0]) {
            assert!((m - c).abs() < 0.01, "{m} vs {c}");
        }
    }

    #[test]
    fn mixture_mode_counts_match_declared_counts() {
        for t in TestBed::DENSITIES {
            if let Some(m) = t.mixture() {
                assert_eq!(m.modes().len(), t.true_mode_count(), "{t}");
            }
        }
    }

    #[test]
    fn n2_weights_and_means() {
        let m = TestBed::N2.mixture().unwrap();
        let w: f64 = m.components.iter().map(|c| c.0).sum();
        assert!((w - 1.0).abs() < 1e-15);
        assert_eq!(m.components[0].1, 0.0);
        assert_eq!(m.components[1].1, 3.0);
    }

    #[test]
    fn all_mixture_weights_sum_to_one() {
        for t in TestBed::DENSITIES {
            if let Some(m) = t.mixture() {
                let w: f64 = m.components.iter().map(|c| c.0).sum();
                assert!((w - 1.0).abs() < 1e-12, "{t}");
            }
        }
        let w: f64 = POISSON_MIX.iter().map(|p| p.0).sum();
        assert_eq!(w, 1.0);
    }

    #[test]
    fn samplers_are_reproducible() {
        for t in TestBed::DENSITIES {
            assert_eq!(sample(t, 50, 11).unwrap(), sample(t, 50, 11).unwrap());
        }
        assert_eq!(sample_poisson_mix(20, 1).unwrap(), sample_poisson_mix(20, 1).unwrap());
    }

    #[test]
    fn poisson_mix_mean() {
        let x = sample_poisson_mix(1200, 5).unwrap();
        let mean = x.iter().sum::<u64>() as f64 / 1200.0;
        let mix_mean = 9.75;
        // Var = E[var] + Var[mean] = 9.75 + (0.25*4 + 0.5*64 + 0.25*441 - 9.75^2)
        let var = 9.75 + (0.25 * 4.0 + 0.5 * 64.0 + 0.25 * 441.0 - mix_mean * mix_mean);
        assert!((mean - mix_mean).abs() < 3.0 * (var / 1200.0).sqrt());
    }

    #[test]
    fn gardner_density_peak() {
        assert!((gardner_density(2.0 * PI * 0.35) - 1.0 / 3.0).abs() < 1e-15);
        assert!(gardner_density(2.0 * PI * 0.3) < 1.0 / 3.0);
    }

    #[test]
    fn silent_gardner_is_zero() {
        let c = GardnerConfig {
            noise_scale: 0.0,
            sine_scale: 0.0,
            ..Default::default()
        };
        assert!(gardner_series(c, 1).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(gardner_series(GardnerConfig::default(), 1).unwrap().len(), 256);
    }

    #[test]
    fn silent_neumann_is_zero() {
        let c = NeumannConfig {
            length: 64,
            c0: 0.0,
            innovation_sd: 0.0,
        };
        assert!(neumann_series(c, 1).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn neumann_ar_part_is_stationary() {
        // Roots of 1 + 0.2 z + 0.9 z^2 have modulus sqrt(1 / 0.9) > 1.
        let (a1, a2) = NEUMANN_AR;
        let disc = a1 * a1 - 4.0 * a2;
        assert!(disc < 0.0);
        let modulus = (1.0 / a2).sqrt();
        assert!(modulus > 1.0);
        let re = -a1 / (2.0 * a2);
        let im = (-disc).sqrt() / (2.0 * a2);
        assert!((re.hypot(im) - modulus).abs() < 1e-12);
    }

    #[test]
    fn neumann_density_has_two_peaks() {
        // One at frequency zero, one at the AR resonance next to the MA zero
        // at pi / 2.
        let p = neumann_peaks();
        assert_eq!(p.len(), 2, "{p:?}");
        assert_eq!(p[0], 0.0);
        assert!(p[1] > PI / 2.0 && p[1] < 1.8);
        assert!(neumann_density(PI / 2.0) * 2.0 * PI - 0.25 < 1e-12);
    }

    #[test]
    fn scoring() {
        let truth = TestBed::N5Claw.truth();
        let exact = ModeReport {
            mode_count: 5,
            extremes: truth
                .modes
                .iter()
                .map(|&m| Extreme {
                    left: m - 0.01,
                    right: m + 0.01,
                    kind: ExtremeKind::Max,
                })
                .collect(),
        };
        assert_eq!(score_peaks(&exact, &truth).0, 5);
        assert_eq!(score_peaks(&ModeReport::default(), &truth).0, 0);
    }

    #[test]
    fn parse_ids() {
        for t in TestBed::DENSITIES {
            assert_eq!(t.id().parse::<TestBed>().unwrap(), t);
        }
        assert!("bogus".parse::<TestBed>().is_err());
    }
}
