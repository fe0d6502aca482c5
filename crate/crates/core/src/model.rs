//! Shared data model: samples, empirical distribution functions, tubes,
//! taut strings, piecewise-constant densities and their mode structure.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Relative tolerance used when merging adjacent density segments.
pub const PLATEAU_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
    is_sorted: bool,
}

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return input("empty sample");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return input(format!("non-finite value at position {i}"));
        }
        let is_sorted = values.windows(2).all(|w| w[0] <= w[1]);
        Ok(Self { values, is_sorted })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.is_sorted
    }

    pub fn sorted(mut self) -> Self {
        if !self.is_sorted {
            self.values.sort_by(f64::total_cmp);
            self.is_sorted = true;
        }
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Right-continuous step function `E(x) = #{x_i <= x} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    points: Vec<f64>,
    steps: Vec<f64>,
    counts: Vec<usize>,
    n: usize,
}

impl EmpiricalCdf {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Cumulative probability reached at each point.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Multiplicity of each distinct point.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Step value just before the `i`-th distinct point.
    pub fn left_step(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.steps[i - 1]
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&p| p <= x);
        if k == 0 {
            0.0
        } else {
            self.steps[k - 1]
        }
    }

    pub fn eval_left(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&p| p < x);
        if k == 0 {
            0.0
        } else {
            self.steps[k - 1]
        }
    }

    /// Number of observations in the half-open interval `(a, b]`.
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        if b <= a {
            return 0;
        }
        let cum = |x: f64| -> usize {
            let k = self.points.partition_point(|&p| p <= x);
            self.counts[..k].iter().sum()
        };
        cum(b) - cum(a)
    }
}

pub fn empirical_cdf(sample: &Sample) -> Result<EmpiricalCdf> {
    if sample.is_empty() {
        return input("empty sample");
    }
    let mut v = sample.values().to_vec();
    if !sample.is_sorted() {
        v.sort_by(f64::total_cmp);
    }
    let n = v.len();
    let mut points = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for x in v {
        match points.last() {
            Some(&last) if last == x => *counts.last_mut().unwrap() += 1,
            _ => {
                points.push(x);
                counts.push(1);
            }
        }
    }
    let mut acc = 0usize;
    let steps = counts
        .iter()
        .map(|&c| {
            acc += c;
            if acc == n {
                1.0
            } else {
                acc as f64 / n as f64
            }
        })
        .collect();
    Ok(EmpiricalCdf {
        points,
        steps,
        counts,
        n,
    })
}

/// Lower and upper bounds at a strictly increasing set of abscissae; the
/// first and last rows are replaced by the pinned start and end values.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeSpec {
    pub abscissae: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start_value: f64,
    pub end_value: f64,
}

impl TubeSpec {
    pub fn new(
        abscissae: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        start_value: f64,
        end_value: f64,
    ) -> Result<Self> {
        let tube = Self {
            abscissae,
            lower,
            upper,
            start_value,
            end_value,
        };
        tube.validate(1e-12)?;
        Ok(tube)
    }

    /// Tube of constant or variable radius around `center`, pinned at both ends.
    pub fn centered(
        abscissae: Vec<f64>,
        center: &[f64],
        radii: &[f64],
        start_value: f64,
        end_value: f64,
    ) -> Result<Self> {
        if center.len() != abscissae.len() || radii.len() != abscissae.len() {
            return input("tube vectors must have equal length");
        }
        let lower = center.iter().zip(radii).map(|(c, r)| c - r).collect();
        let upper = center.iter().zip(radii).map(|(c, r)| c + r).collect();
        Self::new(abscissae, lower, upper, start_value, end_value)
    }

    /// The sup-norm tube `{G : sup |G - E| <= r}` around an empirical
    /// distribution function, restricted to its jump points: at the `i`-th
    /// point `E(x_i) - r_i <= G(x_i) <= E(x_i-) + r_i`. Pinned 0 -> 1.
    pub fn kolmogorov(ecdf: &EmpiricalCdf, radii: &[f64]) -> Result<Self> {
        let m = ecdf.len();
        if m < 2 {
            return Err(Error::Degenerate(
                "a tube needs at least two distinct points".into(),
            ));
        }
        if radii.len() != m {
            return input("one radius per distinct point required");
        }
        let lower = (0..m).map(|i| ecdf.steps()[i] - radii[i]).collect();
        let upper = (0..m).map(|i| ecdf.left_step(i) + radii[i]).collect();
        Self::new(ecdf.points().to_vec(), lower, upper, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// Effective bounds at row `i`, with the pins substituted at both ends.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            (self.start_value, self.start_value)
        } else if i + 1 == self.len() {
            (self.end_value, self.end_value)
        } else {
            (self.lower[i], self.upper[i])
        }
    }

    pub(crate) fn validate(&self, tol: f64) -> Result<()> {
        let n = self.abscissae.len();
        if n < 2 {
            return input("a tube needs at least two abscissae");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return input("tube vectors must have equal length");
        }
        if !self.start_value.is_finite() || !self.end_value.is_finite() {
            return input("pinned values must be finite");
        }
        for w in self.abscissae.windows(2) {
            if !(w[0] < w[1]) {
                return input("abscissae must be strictly increasing");
            }
        }
        for i in 1..n - 1 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !lo.is_finite() || !hi.is_finite() || lo > hi + tol {
                return Err(Error::Infeasible {
                    index: i,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Touch {
    Upper,
    Lower,
    Pinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub x: f64,
    pub y: f64,
    pub touch: Touch,
}

/// Piecewise-linear function through its knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TautString {
    knots: Vec<Knot>,
}

impl TautString {
    pub fn from_knots(knots: Vec<Knot>) -> Result<Self> {
        if knots.len() < 2 {
            return input("a string needs at least two knots");
        }
        if knots.windows(2).any(|w| !(w[0].x < w[1].x)) {
            return input("knot abscissae must be strictly increasing");
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn start(&self) -> f64 {
        self.knots[0].x
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].x
    }

    /// Slope on each inter-knot span.
    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .map(|w| (w[1].y - w[0].y) / (w[1].x - w[0].x))
            .collect()
    }

    /// Linear interpolation between knots; constant beyond the ends.
    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].x {
            return k[0].y;
        }
        if x >= k[k.len() - 1].x {
            return k[k.len() - 1].y;
        }
        let j = k.partition_point(|kn| kn.x <= x);
        let (a, b) = (k[j - 1], k[j]);
        a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)
    }

    /// Evaluates at a sorted batch of abscissae in one pass.
    pub fn eval_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let k = &self.knots;
        let mut j = 1;
        xs.iter()
            .map(|&x| {
                if x <= k[0].x {
                    return k[0].y;
                }
                if x >= k[k.len() - 1].x {
                    return k[k.len() - 1].y;
                }
                while k[j].x < x {
                    j += 1;
                }
                let (a, b) = (k[j - 1], k[j]);
                a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub left: f64,
    pub right: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantDensity {
    segments: Vec<Segment>,
}

impl PiecewiseConstantDensity {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return input("a density needs at least one segment");
        }
        for s in &segments {
            if !(s.left < s.right) || !s.height.is_finite() {
                return input("segments need left < right and finite height");
            }
        }
        for w in segments.windows(2) {
            if w[0].right != w[1].left {
                return input("segments must be contiguous");
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_mass(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.height * (s.right - s.left))
            .sum()
    }

    pub fn support(&self) -> (f64, f64) {
        (
            self.segments[0].left,
            self.segments[self.segments.len() - 1].right,
        )
    }

    /// Left-hand value convention: segment `(left, right]`, except that the
    /// first segment also owns its left end.
    pub fn eval(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x > b {
            return 0.0;
        }
        let j = self.segments.partition_point(|s| s.right < x);
        self.segments[j.min(self.segments.len() - 1)].height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremeKind {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extreme {
    pub left: f64,
    pub right: f64,
    pub kind: ExtremeKind,
}

impl Extreme {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode_count: usize,
    pub extremes: Vec<Extreme>,
}

impl ModeReport {
    pub fn maxima(&self) -> impl Iterator<Item = &Extreme> {
        self.extremes.iter().filter(|e| e.kind == ExtremeKind::Max)
    }
}

fn same_height(a: f64, b: f64) -> bool {
    (a - b).abs() <= PLATEAU_RTOL * a.abs().max(b.abs())
}

/// Local extremes of a piecewise-constant density. Adjacent segments of
/// equal height are merged first. A boundary run is a maximum when it is
/// above its only neighbour and is never reported as a minimum.
pub fn mode_report(density: &PiecewiseConstantDensity) -> ModeReport {
    let mut runs: Vec<Segment> = Vec::new();
    for s in density.segments() {
        match runs.last_mut() {
            Some(r) if same_height(r.height, s.height) => r.right = s.right,
            _ => runs.push(*s),
        }
    }
    if runs.len() == 1 {
        let r = runs[0];
        return ModeReport {
            mode_count: 1,
            extremes: vec![Extreme {
                left: r.left,
                right: r.right,
                kind: ExtremeKind::Max,
            }],
        };
    }
    let mut extremes = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let left = (i > 0).then(|| runs[i - 1].height);
        let right = runs.get(i + 1).map(|s| s.height);
        let above = |h: Option<f64>| h.is_none_or(|h| r.height > h);
        let below = |h: Option<f64>| h.is_some_and(|h| r.height < h);
        let kind = if above(left) && above(right) {
            ExtremeKind::Max
        } else if below(left) && below(right) {
            ExtremeKind::Min
        } else {
            continue;
        };
        extremes.push(Extreme {
            left: r.left,
            right: r.right,
            kind,
        });
    }
    let mode_count = extremes
        .iter()
        .filter(|e| e.kind == ExtremeKind::Max)
        .count();
    ModeReport {
        mode_count,
        extremes,
    }
}

/// Density of the modified string that passes through the empirical
/// distribution at every interior knot and through the pins at the two ends,
/// so each height is `#{xi_j < x_i <= xi_{j+1}} / (n (xi_{j+1} - xi_j))`.
///
/// When the radius is below `1/n` the first or last height can overtake its
/// neighbour and add a boundary mode the string does not have; the string's
/// own slopes are returned in that case. Interior heights are kept even when
/// variable radii make them differ in modality from the string.
pub fn finalize_density(
    string: &TautString,
    ecdf: &EmpiricalCdf,
) -> Result<PiecewiseConstantDensity> {
    let knots = string.knots();
    let (lo, hi) = (ecdf.points()[0], ecdf.points()[ecdf.len() - 1]);
    let last = knots.len() - 1;
    let mut values = Vec::with_capacity(knots.len());
    for (j, k) in knots.iter().enumerate() {
        if k.x < lo || k.x > hi {
            return Err(Error::Internal(format!(
                "knot at {} outside sample range [{lo}, {hi}]",
                k.x
            )));
        }
        let v = if (j == 0 || j == last) && k.touch == Touch::Pinned {
            k.y
        } else {
            ecdf.eval(k.x)
        };
        values.push(v);
    }
    let segments = knots
        .windows(2)
        .zip(values.windows(2))
        .map(|(k, v)| Segment {
            left: k[0].x,
            right: k[1].x,
            height: ((v[1] - v[0]) / (k[1].x - k[0].x)).max(0.0),
        })
        .collect();
    let modified = PiecewiseConstantDensity::new(segments)?;
    let raw = PiecewiseConstantDensity::new(
        knots
            .windows(2)
            .map(|k| Segment {
                left: k[0].x,
                right: k[1].x,
                height: (k[1].y - k[0].y) / (k[1].x - k[0].x),
            })
            .collect(),
    )?;
    let (m, r) = (mode_report(&modified), mode_report(&raw));
    let (lo, hi) = (knots[0].x, knots[last].x);
    let at_end = |rep: &ModeReport, end: f64| {
        rep.maxima().any(|e| e.left == end || e.right == end)
    };
    let new_end_mode = (at_end(&m, lo) && !at_end(&r, lo)) || (at_end(&m, hi) && !at_end(&r, hi));
    if m.mode_count > r.mode_count && new_end_mode {
        Ok(raw)
    } else {
        Ok(modified)
    }
}
