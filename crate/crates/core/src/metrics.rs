//! Kolmogorov and Kuiper distances between distribution-function-like curves.
//!
//! All distances are computed from the difference `D = F - G` sampled at the
//! merged breakpoints of both curves and at their left limits. Between
//! consecutive sites `D` is monotone for the curve types used here (step
//! functions against continuous or piecewise-linear curves, and pairs of
//! piecewise-linear curves), so extrema of increments of `D` occur at sites
//! and the maximisations below are exact.

use serde::{Deserialize, Serialize};

use crate::model::{EmpiricalCdf, TautString};

/// A right-continuous nondecreasing curve with known breakpoints.
pub trait Curve {
    /// Abscissae where the curve may jump or change slope.
    fn breakpoints(&self) -> Vec<f64>;
    fn eval(&self, x: f64) -> f64;
    fn eval_left(&self, x: f64) -> f64 {
        self.eval(x)
    }
    /// Limit at minus infinity.
    fn lower_limit(&self) -> f64 {
        0.0
    }
    /// Limit at plus infinity.
    fn upper_limit(&self) -> f64 {
        1.0
    }
}

impl Curve for EmpiricalCdf {
    fn breakpoints(&self) -> Vec<f64> {
        self.points().to_vec()
    }
    fn eval(&self, x: f64) -> f64 {
        EmpiricalCdf::eval(self, x)
    }
    fn eval_left(&self, x: f64) -> f64 {
        EmpiricalCdf::eval_left(self, x)
    }
}

impl Curve for TautString {
    fn breakpoints(&self) -> Vec<f64> {
        self.knots().iter().map(|k| k.x).collect()
    }
    fn eval(&self, x: f64) -> f64 {
        TautString::eval(self, x)
    }
    fn lower_limit(&self) -> f64 {
        self.knots()[0].y
    }
    fn upper_limit(&self) -> f64 {
        self.knots()[self.knots().len() - 1].y
    }
}

/// Distribution function of the uniform law on `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformCdf;

impl Curve for UniformCdf {
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
    fn eval(&self, x: f64) -> f64 {
        x.clamp(0.0, 1.0)
    }
}

/// A continuous distribution function given by a closure.
pub struct ContinuousCdf<F: Fn(f64) -> f64>(pub F);

impl<F: Fn(f64) -> f64> Curve for ContinuousCdf<F> {
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn eval(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

/// One evaluation site of `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: f64,
    /// `true` for the left limit `D(x-)`.
    pub left: bool,
    pub d: f64,
}

/// `D = F - G` at merged breakpoints and left limits.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePair {
    pub breakpoints: Vec<f64>,
    pub d_right: Vec<f64>,
    pub d_left: Vec<f64>,
    pub d_minus_inf: f64,
    pub d_plus_inf: f64,
}

impl CurvePair {
    pub fn new(f: &impl Curve, g: &impl Curve) -> Self {
        let mut bp = f.breakpoints();
        bp.extend(g.breakpoints());
        bp.sort_by(f64::total_cmp);
        bp.dedup();
        let d_right = bp.iter().map(|&x| f.eval(x) - g.eval(x)).collect();
        let d_left = bp.iter().map(|&x| f.eval_left(x) - g.eval_left(x)).collect();
        Self {
            breakpoints: bp,
            d_right,
            d_left,
            d_minus_inf: f.lower_limit() - g.lower_limit(),
            d_plus_inf: f.upper_limit() - g.upper_limit(),
        }
    }

    /// Ordered evaluation sites, bracketed by the limits at both infinities.
    pub fn sites(&self) -> Vec<Site> {
        let mut s = Vec::with_capacity(2 * self.breakpoints.len() + 2);
        s.push(Site {
            x: f64::NEG_INFINITY,
            left: false,
            d: self.d_minus_inf,
        });
        for (i, &x) in self.breakpoints.iter().enumerate() {
            s.push(Site {
                x,
                left: true,
                d: self.d_left[i],
            });
            s.push(Site {
                x,
                left: false,
                d: self.d_right[i],
            });
        }
        s.push(Site {
            x: f64::INFINITY,
            left: false,
            d: self.d_plus_inf,
        });
        s
    }

    pub fn values(&self) -> Vec<f64> {
        self.sites().into_iter().map(|s| s.d).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuiperValue {
    pub order: usize,
    pub value: f64,
    /// `(a_j, b_j)` as abscissae; a left-limit site is reported at its `x`.
    pub witness_intervals: Vec<(f64, f64)>,
    /// Indices into [`CurvePair::sites`] realising the value.
    #[serde(skip)]
    pub witness_sites: Vec<(usize, usize)>,
}

pub fn kolmogorov(f: &impl Curve, g: &impl Curve) -> f64 {
    sup_abs(&CurvePair::new(f, g).values())
}

pub fn sup_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Best sums of absolute increments of `values` over at most `j` ordered
/// intervals, for `j = 1..=order`. Entry `j - 1` is the Kuiper distance of
/// order `j`. O(order * len) time, O(order) memory.
pub fn kuiper_profile(values: &[f64], order: usize) -> Vec<f64> {
    let mut closed = vec![f64::NEG_INFINITY; order + 1];
    closed[0] = 0.0;
    let mut open_up = vec![f64::NEG_INFINITY; order];
    let mut open_down = vec![f64::NEG_INFINITY; order];
    for &v in values {
        for j in 0..order {
            let c = (open_up[j] + v).max(open_down[j] - v);
            if c > closed[j + 1] {
                closed[j + 1] = c;
            }
        }
        for j in 0..order {
            let c = closed[j];
            if c - v > open_up[j] {
                open_up[j] = c - v;
            }
            if c + v > open_down[j] {
                open_down[j] = c + v;
            }
        }
    }
    let mut best = 0.0f64;
    closed[1..]
        .iter()
        .map(|&c| {
            best = best.max(c);
            best
        })
        .collect()
}

/// Kuiper distance of the given order between `f` and `g` with a witness
/// interval system.
pub fn kuiper(f: &impl Curve, g: &impl Curve, order: usize) -> KuiperValue {
    let pair = CurvePair::new(f, g);
    let sites = pair.sites();
    let values: Vec<f64> = sites.iter().map(|s| s.d).collect();
    let (value, witness_sites) = kuiper_with_witness(&values, order);
    let witness_intervals = witness_sites
        .iter()
        .map(|&(a, b)| (sites[a].x, sites[b].x))
        .collect();
    KuiperValue {
        order,
        value,
        witness_intervals,
        witness_sites,
    }
}

/// Same recursion as [`kuiper_profile`] for a single order, keeping back
/// pointers so the optimal intervals can be recovered.
pub fn kuiper_with_witness(values: &[f64], order: usize) -> (f64, Vec<(usize, usize)>) {
    assert!(order >= 1, "Kuiper order must be at least 1");
    // Arena of closed intervals: (a, b, previous node).
    let mut arena: Vec<(usize, usize, Option<usize>)> = Vec::new();
    let mut closed = vec![(f64::NEG_INFINITY, None::<usize>); order + 1];
    closed[0] = (0.0, None);
    // (score, start site, chain before this interval)
    let mut open_up = vec![(f64::NEG_INFINITY, 0usize, None::<usize>); order];
    let mut open_down = open_up.clone();
    for (p, &v) in values.iter().enumerate() {
        for j in 0..order {
            let (up, down) = (open_up[j].0 + v, open_down[j].0 - v);
            let (c, src) = if up >= down {
                (up, open_up[j])
            } else {
                (down, open_down[j])
            };
            if c > closed[j + 1].0 {
                arena.push((src.1, p, src.2));
                closed[j + 1] = (c, Some(arena.len() - 1));
            }
        }
        for j in 0..order {
            let (c, node) = closed[j];
            if c - v > open_up[j].0 {
                open_up[j] = (c - v, p, node);
            }
            if c + v > open_down[j].0 {
                open_down[j] = (c + v, p, node);
            }
        }
    }
    let (mut best, mut node) = (0.0, None);
    for &(c, nd) in &closed[1..] {
        if c > best {
            best = c;
            node = nd;
        }
    }
    let mut witness = Vec::new();
    while let Some(i) = node {
        let (a, b, prev) = arena[i];
        witness.push((a, b));
        node = prev;
    }
    witness.reverse();
    (best, witness)
}

/// `rho_i = d^i - d^{i-1}` for `i = 1..=order`, with `d^0 = 0`.
pub fn differences_from_profile(profile: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    profile
        .iter()
        .map(|&d| {
            let r = (d - prev).max(0.0);
            prev = d;
            r
        })
        .collect()
}

pub fn kuiper_differences(f: &impl Curve, g: &impl Curve, order: usize) -> Vec<f64> {
    differences_from_profile(&kuiper_profile(&CurvePair::new(f, g).values(), order))
}

/// `D` sequence of a sorted sample's empirical distribution against the
/// uniform distribution function on `[0, 1]`.
pub fn uniform_sequence(sorted_u: &[f64]) -> Vec<f64> {
    let n = sorted_u.len() as f64;
    let mut v = Vec::with_capacity(2 * sorted_u.len() + 2);
    v.push(0.0);
    let mut i = 0;
    while i < sorted_u.len() {
        let x = sorted_u[i];
        let mut j = i + 1;
        while j < sorted_u.len() && sorted_u[j] == x {
            j += 1;
        }
        let g = x.clamp(0.0, 1.0);
        v.push(i as f64 / n - g);
        v.push(j as f64 / n - g);
        i = j;
    }
    v.push(0.0);
    v
}

/// `D = E - S` sequence of an empirical distribution against a taut string
/// fitted through a tube around it. The string's knots lie at data points
/// and the string is continuous and nondecreasing, so data points and their
/// left limits are the only sites needed.
pub fn string_sequence(ecdf: &EmpiricalCdf, string: &TautString) -> Vec<f64> {
    let s = string.eval_sorted(ecdf.points());
    let mut v = Vec::with_capacity(2 * s.len() + 2);
    v.push(ecdf.lower_limit() - string.lower_limit());
    for (i, si) in s.iter().enumerate() {
        v.push(ecdf.left_step(i) - si);
        v.push(ecdf.steps()[i] - si);
    }
    v.push(ecdf.upper_limit() - string.upper_limit());
    v
}
