//! Linear-time taut string through a tube with pinned endpoints.
//!
//! The solver is the funnel construction for a shortest path through a
//! sequence of vertical gates `[lower_i, upper_i]` at strictly increasing
//! abscissae. The funnel keeps two chains that share the current apex:
//!
//! * the upper chain, convex (slopes increasing): upper bounds that will
//!   bend the string downward once it runs along the ceiling;
//! * the lower chain, concave (slopes decreasing): lower bounds seen the
//!   same way from below.
//!
//! A new upper point that falls under the lower chain pulls the apex
//! forward along the lower chain, emitting those vertices as knots, and
//! symmetrically for a new lower point. Every point is pushed and popped
//! at most once, so the sweep is O(N).

use std::collections::VecDeque;

use crate::error::{input, Result};
use crate::model::{
    mode_report, EmpiricalCdf, Knot, ModeReport, PiecewiseConstantDensity, Segment, TautString,
    Touch, TubeSpec,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Absolute slack allowed when checking `lower <= upper`.
    pub tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12 }
    }
}

#[inline]
fn slope(a: &Knot, b: &Knot) -> f64 {
    (b.y - a.y) / (b.x - a.x)
}

struct Funnel {
    upper: VecDeque<Knot>,
    lower: VecDeque<Knot>,
    knots: Vec<Knot>,
}

impl Funnel {
    fn new(start: Knot) -> Self {
        let mut upper = VecDeque::new();
        let mut lower = VecDeque::new();
        upper.push_back(start);
        lower.push_back(start);
        Self {
            upper,
            lower,
            knots: vec![start],
        }
    }

    fn apex(&self) -> Knot {
        self.upper[0]
    }

    fn add_upper(&mut self, p: Knot) {
        let crosses = self.lower.len() >= 2 && slope(&self.lower[0], &p) <= slope(&self.lower[0], &self.lower[1]);
        if crosses {
            while self.lower.len() >= 2
                && slope(&self.lower[0], &p) <= slope(&self.lower[0], &self.lower[1])
            {
                self.lower.pop_front();
                self.knots.push(self.lower[0]);
            }
            let apex = self.lower[0];
            self.upper.clear();
            self.upper.push_back(apex);
            if apex.x < p.x {
                self.upper.push_back(p);
            }
        } else {
            if self.apex().x == p.x {
                return;
            }
            while self.upper.len() >= 2 {
                let k = self.upper.len();
                if slope(&self.upper[k - 2], &p) <= slope(&self.upper[k - 2], &self.upper[k - 1]) {
                    self.upper.pop_back();
                } else {
                    break;
                }
            }
            self.upper.push_back(p);
        }
    }

    fn add_lower(&mut self, q: Knot) {
        let crosses = self.upper.len() >= 2 && slope(&self.upper[0], &q) >= slope(&self.upper[0], &self.upper[1]);
        if crosses {
            while self.upper.len() >= 2
                && slope(&self.upper[0], &q) >= slope(&self.upper[0], &self.upper[1])
            {
                self.upper.pop_front();
                self.knots.push(self.upper[0]);
            }
            let apex = self.upper[0];
            self.lower.clear();
            self.lower.push_back(apex);
            if apex.x < q.x {
                self.lower.push_back(q);
            }
        } else {
            if self.apex().x == q.x {
                return;
            }
            while self.lower.len() >= 2 {
                let k = self.lower.len();
                if slope(&self.lower[k - 2], &q) >= slope(&self.lower[k - 2], &self.lower[k - 1]) {
                    self.lower.pop_back();
                } else {
                    break;
                }
            }
            self.lower.push_back(q);
        }
    }

    fn finish(mut self, end: Knot) -> Vec<Knot> {
        self.add_upper(end);
        let rest: Vec<Knot> = self.upper.iter().skip(1).copied().collect();
        self.knots.extend(rest);
        if let Some(last) = self.knots.last_mut() {
            last.touch = Touch::Pinned;
        }
        self.knots
    }
}

/// Shortest path through the tube: among all functions pinned at both ends
/// and inside the bounds at every abscissa it has minimal graph length,
/// minimal total variation of its slope and the fewest local extremes.
pub fn solve(tube: &TubeSpec, options: SolveOptions) -> Result<TautString> {
    if !(options.tolerance > 0.0) {
        return input("solver tolerance must be positive");
    }
    tube.validate(options.tolerance)?;
    let n = tube.len();
    let xs = &tube.abscissae;
    let mut funnel = Funnel::new(Knot {
        x: xs[0],
        y: tube.start_value,
        touch: Touch::Pinned,
    });
    let inner = xs.iter().zip(&tube.lower).zip(&tube.upper).take(n - 1).skip(1);
    for ((&x, &lo), &up) in inner {
        let hi = up.max(lo);
        funnel.add_upper(Knot {
            x,
            y: hi,
            touch: Touch::Upper,
        });
        funnel.add_lower(Knot {
            x,
            y: lo,
            touch: Touch::Lower,
        });
    }
    let knots = funnel.finish(Knot {
        x: xs[n - 1],
        y: tube.end_value,
        touch: Touch::Pinned,
    });
    TautString::from_knots(knots)
}

/// Derivative of the string: one segment per inter-knot span, height equal
/// to the slope (left-hand derivative, right-hand at the first knot).
pub fn string_to_density(string: &TautString) -> Result<PiecewiseConstantDensity> {
    let k = string.knots();
    let segments = k
        .windows(2)
        .map(|w| Segment {
            left: w[0].x,
            right: w[1].x,
            height: slope(&w[0], &w[1]),
        })
        .collect();
    PiecewiseConstantDensity::new(segments)
}

/// Taut string through the Kolmogorov tube with per-point radii around an
/// empirical distribution function.
pub fn fit(ecdf: &EmpiricalCdf, radii: &[f64]) -> Result<TautString> {
    solve(&TubeSpec::kolmogorov(ecdf, radii)?, SolveOptions::default())
}

/// [`fit`] with the same radius at every point.
pub fn fit_constant(ecdf: &EmpiricalCdf, radius: f64) -> Result<TautString> {
    fit(ecdf, &vec![radius; ecdf.len()])
}

/// Mode structure of the string's derivative.
pub fn string_modes(string: &TautString) -> Result<ModeReport> {
    Ok(mode_report(&string_to_density(string)?))
}

/// Graph length of a polyline through `(xs[i], ys[i])`.
pub fn graph_length(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]).hypot(y[1] - y[0]))
        .sum()
}
