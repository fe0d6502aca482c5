use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use tsdensity::metrics::{
    kuiper, kuiper_profile, string_sequence, uniform_sequence, ContinuousCdf, CurvePair,
    UniformCdf,
};
use tsdensity::model::{empirical_cdf, finalize_density, mode_report, Sample, Touch, TubeSpec};
use tsdensity::rng::rng;
use tsdensity::spectral::{gamma_bounds, multires_coeffs, normalize, periodogram, spectral_cdf};
use tsdensity::tautstring::{fit_constant, graph_length, solve, string_modes, string_to_density};
use tsdensity::testbeds::{sample, TestBed};

const TOL: f64 = 1e-10;

/// Rows `(dx, step, radius)` turned into a tube with pins offset from the
/// centre line.
fn tube_from(rows: &[(f64, f64, f64)], pins: (f64, f64)) -> TubeSpec {
    let mut x = 0.0;
    let mut c = 0.0;
    let (mut xs, mut center, mut radii) = (vec![], vec![], vec![]);
    for &(dx, step, r) in rows {
        x += dx;
        c += step;
        xs.push(x);
        center.push(c);
        radii.push(r);
    }
    let start = center[0] + pins.0;
    let end = center[center.len() - 1] + pins.1;
    TubeSpec::centered(xs, &center, &radii, start, end).unwrap()
}

fn rows(len: std::ops::Range<usize>, step: std::ops::Range<f64>) -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.01f64..1.0, step, 0.001f64..0.3), len)
}

/// Smallest feasible Kolmogorov radius is half the largest jump.
fn half_jump(ecdf: &tsdensity::model::EmpiricalCdf) -> f64 {
    let m = *ecdf.counts().iter().max().unwrap();
    0.5 * m as f64 / ecdf.n() as f64
}

fn string_at_abscissae(tube: &TubeSpec) -> (tsdensity::model::TautString, Vec<f64>) {
    let s = solve(tube, Default::default()).unwrap();
    let v = s.eval_sorted(&tube.abscissae);
    (s, v)
}

/// Shortest feasible polyline over a grid of candidate heights at each
/// abscissa, by dynamic programming over consecutive columns.
fn grid_shortest(tube: &TubeSpec, per_column: usize) -> f64 {
    let cols: Vec<Vec<f64>> = (0..tube.len())
        .map(|i| {
            let (lo, hi) = tube.bounds(i);
            if lo == hi {
                return vec![lo];
            }
            (0..per_column)
                .map(|k| lo + (hi - lo) * k as f64 / (per_column - 1) as f64)
                .collect()
        })
        .collect();
    let xs = &tube.abscissae;
    let mut best = vec![0.0; cols[0].len()];
    for i in 1..cols.len() {
        let dx = xs[i] - xs[i - 1];
        best = cols[i]
            .iter()
            .map(|&y| {
                cols[i - 1]
                    .iter()
                    .zip(&best)
                    .map(|(&p, &b)| b + dx.hypot(y - p))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
    }
    best[0]
}

/// Maximum of `sum |v[b_j] - v[a_j]|` over at most `k` intervals with
/// `a_1 <= b_1 <= a_2 <= ... <= b_k`, by exhaustive enumeration.
fn kuiper_brute(v: &[f64], k: usize) -> f64 {
    fn rec(v: &[f64], from: usize, left: usize) -> f64 {
        if left == 0 {
            return 0.0;
        }
        let mut best = 0.0f64;
        for a in from..v.len() {
            for b in a..v.len() {
                best = best.max((v[b] - v[a]).abs() + rec(v, b, left - 1));
            }
        }
        best
    }
    rec(v, 0, k)
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let p: f64 = (1..100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn string_stays_in_tube(rows in rows(2..40, -0.2..0.2), p0 in -0.3f64..0.3, p1 in -0.3f64..0.3) {
        let tube = tube_from(&rows, (p0, p1));
        let (_, v) = string_at_abscissae(&tube);
        for (i, y) in v.iter().enumerate() {
            let (lo, hi) = tube.bounds(i);
            prop_assert!(lo - TOL <= *y && *y <= hi + TOL, "row {i}: {lo} <= {y} <= {hi}");
        }
    }

    #[test]
    fn monotone_bounds_give_monotone_string(rows in rows(2..40, 0.0..0.2), p0 in 0.0f64..0.3, p1 in 0.0f64..0.3) {
        let r = rows[0].2;
        let rows: Vec<_> = rows.iter().map(|&(dx, s, _)| (dx, s, r)).collect();
        let tube = tube_from(&rows, (-r - p0, r + p1));
        let (s, _) = string_at_abscissae(&tube);
        for sl in s.slopes() {
            prop_assert!(sl >= -TOL, "slope {sl}");
        }
    }

    #[test]
    fn slope_bends_toward_the_touched_boundary(rows in rows(3..40, -0.2..0.2), p0 in -0.3f64..0.3, p1 in -0.3f64..0.3) {
        let tube = tube_from(&rows, (p0, p1));
        let (s, _) = string_at_abscissae(&tube);
        let k = s.knots();
        let sl = s.slopes();
        for j in 1..k.len() - 1 {
            let change = sl[j] - sl[j - 1];
            let scale = 1e-9 * (1.0 + sl[j].abs() + sl[j - 1].abs());
            // held under the ceiling the string bends up, over the floor down
            if change > scale {
                prop_assert_eq!(k[j].touch, Touch::Upper, "knot {} rises", j);
            } else if change < -scale {
                prop_assert_eq!(k[j].touch, Touch::Lower, "knot {} falls", j);
            }
        }
        // so the string passes from the upper to the lower boundary across
        // every run of maximal slope, and the reverse across minima
        let report = mode_report(&string_to_density(&s).unwrap());
        for e in &report.extremes {
            let a = k.iter().find(|kn| kn.x == e.left).unwrap();
            let b = k.iter().find(|kn| kn.x == e.right).unwrap();
            let (lo_side, hi_side) = match e.kind {
                tsdensity::model::ExtremeKind::Max => (Touch::Upper, Touch::Lower),
                tsdensity::model::ExtremeKind::Min => (Touch::Lower, Touch::Upper),
            };
            prop_assert!(a.touch == lo_side || a.touch == Touch::Pinned);
            prop_assert!(b.touch == hi_side || b.touch == Touch::Pinned);
        }
    }

    #[test]
    fn string_is_no_longer_than_any_grid_polyline(rows in rows(2..9, -0.2..0.2), p0 in -0.3f64..0.3, p1 in -0.3f64..0.3) {
        let tube = tube_from(&rows, (p0, p1));
        let (s, _) = string_at_abscissae(&tube);
        let xs: Vec<f64> = s.knots().iter().map(|k| k.x).collect();
        let ys: Vec<f64> = s.knots().iter().map(|k| k.y).collect();
        let ours = graph_length(&xs, &ys);
        prop_assert!(ours <= grid_shortest(&tube, 60) + 1e-12);
    }

    #[test]
    fn same_boundary_heights_are_empirical(raw in prop::collection::vec(0u32..400, 3..200), r in 0.005f64..0.2) {
        let values: Vec<f64> = raw.iter().map(|&v| v as f64 / 40.0).collect();
        let sample = Sample::new(values.clone()).unwrap().sorted();
        let ecdf = empirical_cdf(&sample).unwrap();
        prop_assume!(ecdf.len() >= 2);
        let s = fit_constant(&ecdf, half_jump(&ecdf) + r).unwrap();
        let n = values.len() as f64;
        let k = s.knots();
        for w in k.windows(2) {
            let (a, b) = (w[0], w[1]);
            let count = match (a.touch, b.touch) {
                (Touch::Lower, Touch::Lower) => values.iter().filter(|&&v| a.x < v && v <= b.x).count(),
                (Touch::Upper, Touch::Upper) => values.iter().filter(|&&v| a.x <= v && v < b.x).count(),
                _ => continue,
            };
            let height = (b.y - a.y) / (b.x - a.x);
            let expect = count as f64 / (n * (b.x - a.x));
            prop_assert!((height - expect).abs() <= TOL * (1.0 + expect), "{height} vs {expect}");
        }
    }

    #[test]
    fn modality_decreases_with_radius(seed in any::<u64>(), n in 5usize..300, r1 in 0.001f64..0.3, r2 in 0.001f64..0.3) {
        let ecdf = empirical_cdf(&sample(TestBed::N5Claw, n, seed).unwrap().sorted()).unwrap();
        let h = half_jump(&ecdf);
        let (lo, hi) = (h + r1.min(r2), h + r1.max(r2));
        let m_lo = string_modes(&fit_constant(&ecdf, lo).unwrap()).unwrap().mode_count;
        let m_hi = string_modes(&fit_constant(&ecdf, hi).unwrap()).unwrap().mode_count;
        prop_assert!(m_lo >= m_hi, "{m_lo} modes at {lo}, {m_hi} at {hi}");
    }

    #[test]
    fn finalizing_keeps_the_modes(seed in any::<u64>(), n in 5usize..300, r in 0.002f64..0.2) {
        let ecdf = empirical_cdf(&sample(TestBed::N2, n, seed).unwrap().sorted()).unwrap();
        let s = fit_constant(&ecdf, half_jump(&ecdf) + r).unwrap();
        let fin = finalize_density(&s, &ecdf).unwrap();
        prop_assert!((fin.total_mass() - 1.0).abs() < TOL);
        prop_assert_eq!(mode_report(&fin).mode_count, string_modes(&s).unwrap().mode_count);
    }

    #[test]
    fn kuiper_matches_enumeration(
        support in prop::collection::btree_set(0u8..12, 1..=5),
        f_idx in prop::collection::vec(any::<prop::sample::Index>(), 1..=8),
        g_idx in prop::collection::vec(any::<prop::sample::Index>(), 1..=8),
    ) {
        let support: Vec<f64> = support.into_iter().map(f64::from).collect();
        let pick = |idx: &[prop::sample::Index]| -> Vec<f64> {
            // sizes 1, 2, 4, 8 keep every step dyadic, so sums are exact
            let m = 1usize << (usize::BITS - 1 - idx.len().leading_zeros());
            idx[..m].iter().map(|i| support[i.index(support.len())]).collect()
        };
        let f = empirical_cdf(&Sample::new(pick(&f_idx)).unwrap().sorted()).unwrap();
        let g = empirical_cdf(&Sample::new(pick(&g_idx)).unwrap().sorted()).unwrap();
        let v = CurvePair::new(&f, &g).values();
        prop_assert!(v.len() <= 12);
        let profile = kuiper_profile(&v, 3);
        for k in 1..=3 {
            prop_assert_eq!(profile[k - 1], kuiper_brute(&v, k));
            let kv = kuiper(&f, &g, k);
            prop_assert_eq!(kv.value, profile[k - 1]);
            let sites = CurvePair::new(&f, &g).sites();
            let sum: f64 = kv.witness_sites.iter().map(|&(a, b)| (sites[b].d - sites[a].d).abs()).sum();
            prop_assert_eq!(sum, kv.value);
        }
    }

    #[test]
    fn kuiper_against_uniform_matches_enumeration(cells in prop::collection::vec(1u8..16, 1..=4)) {
        let m = if cells.len() == 3 { 2 } else { cells.len() };
        let u: Vec<f64> = cells[..m].iter().map(|&c| c as f64 / 16.0).collect();
        let ecdf = empirical_cdf(&Sample::new(u).unwrap().sorted()).unwrap();
        let v = CurvePair::new(&ecdf, &UniformCdf).values();
        prop_assume!(v.len() <= 12);
        let profile = kuiper_profile(&v, 3);
        for k in 1..=3 {
            prop_assert_eq!(profile[k - 1], kuiper_brute(&v, k));
        }
    }

    #[test]
    fn kuiper_order_one_is_the_range(u in prop::collection::vec(0.0f64..1.0, 1..100)) {
        let mut u = u;
        u.sort_by(f64::total_cmp);
        let v = uniform_sequence(&u);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let p = kuiper_profile(&v, 6);
        prop_assert!((p[0] - (max - min)).abs() < 1e-15);
        for k in 1..6 {
            prop_assert!(p[k] >= p[k - 1]);
            prop_assert!(p[k] <= (k + 1) as f64 * p[0] + 1e-15);
        }
    }

    #[test]
    fn coefficient_levels_telescope(seed in any::<u64>(), n in 4usize..300) {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let s = normalize(&x).unwrap();
        let pg = periodogram(&s).unwrap();
        let f: Vec<f64> = (0..pg.len()).map(|i| 0.5 + (i % 7) as f64).collect();
        let w = multires_coeffs(&pg, &f).unwrap();
        for k in 0..w.len() - 1 {
            for (j, parent) in w[k + 1].iter().enumerate() {
                let sum = w[k][2 * j] + w[k][2 * j + 1];
                prop_assert!((parent - sum).abs() <= 1e-12 * (1.0 + sum));
            }
        }
        prop_assert!((spectral_cdf(&pg).total() - 1.0).abs() < TOL);
    }
}

/// The switch identity: a constant-radius fit with `k` modes has Kuiper
/// distance of order `2k - 1` equal to `(2k - 1) c eps` with `c = 2`. A
/// maximum on a boundary run has no switch on its outer side, which costs
/// at most one of the `2k - 1` swings.
#[test]
fn switch_identity_constant_is_two() {
    for i in 0..100u64 {
        let n = 100 + 3 * i as usize;
        let ecdf = empirical_cdf(&sample(TestBed::N5Claw, n, i).unwrap().sorted()).unwrap();
        let eps = 0.01 + 0.002 * (i % 20) as f64;
        let s = fit_constant(&ecdf, eps).unwrap();
        let k = string_modes(&s).unwrap().mode_count;
        let order = 2 * k - 1;
        let d = kuiper_profile(&string_sequence(&ecdf, &s), order)[order - 1];
        let c = d / (order as f64 * eps);
        let density = string_to_density(&s).unwrap();
        let (lo, hi) = density.support();
        let report = string_modes(&s).unwrap();
        if report.maxima().any(|e| e.left == lo || e.right == hi) {
            let floor = 2.0 * (order - 1) as f64 / order as f64;
            assert!(floor - 1e-9 <= c && c <= 2.0 + 1e-9, "instance {i}: c = {c}");
        } else {
            assert!((c - 2.0).abs() < 1e-9, "instance {i}: c = {c} with {k} modes");
        }
    }
}

#[test]
fn kuiper_statistic_is_distribution_free() {
    let normal = Normal::standard();
    let phi = ContinuousCdf(|x| normal.cdf(x));
    let (n, reps) = (100, 2000);
    let mut a = Vec::with_capacity(reps);
    let mut b = Vec::with_capacity(reps);
    for i in 0..reps as u64 {
        let mut r = rng(i);
        let u: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let e = empirical_cdf(&Sample::new(u).unwrap().sorted()).unwrap();
        a.push(kuiper(&e, &UniformCdf, 3).value);
        let mut r = rng(1_000_000 + i);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let e = empirical_cdf(&Sample::new(z).unwrap().sorted()).unwrap();
        b.push(kuiper(&e, &phi, 3).value);
    }
    let p = ks_two_sample(a, b);
    assert!(p > 0.01, "p = {p}");
}

/// White noise with the candidate density held at the flat truth satisfies
/// every multiresolution inequality in at least a fraction `alpha` of runs.
#[test]
fn spectral_bounds_cover_white_noise() {
    let (n, reps, alpha) = (1024, 200, 0.9);
    let mut held = 0;
    for i in 0..reps as u64 {
        let mut r = rng(77 + i);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let pg = periodogram(&normalize(&x).unwrap()).unwrap();
        let truth = vec![1.0 / (2.0 * std::f64::consts::PI); pg.len()];
        let w = multires_coeffs(&pg, &truth).unwrap();
        let ok = w.iter().enumerate().all(|(k, level)| {
            let (l, u) = gamma_bounds(k, pg.len(), alpha).unwrap();
            level.iter().all(|&v| l <= v && v <= u)
        });
        held += usize::from(ok);
    }
    assert!(held as f64 >= alpha * reps as f64, "{held} of {reps}");
}
