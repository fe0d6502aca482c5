//! Monte Carlo modality summaries on the test beds.

use std::fmt::Write as _;

use tsdensity::calibrate::Calibrator;
use tsdensity::density::{estimate, solve_discrete, tabulate, ProcedureConfig};
use tsdensity::rng::derive_seed;
use tsdensity::spectral::{solve_spectral, Series, SpectralConfig};
use tsdensity::testbeds::{
    gardner_series, neumann_series, sample, sample_poisson_mix, GardnerConfig, NeumannConfig,
    TestBed,
};
use tsdensity::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub testbed: TestBed,
    pub n: usize,
    pub method: String,
    pub reps: usize,
    /// Percentage of replications with the true mode count.
    pub correct: f64,
    /// Mean absolute deviation of the mode count from the truth.
    pub deviation: f64,
    /// Replications that hit the iteration cap or radius floor.
    pub unconverged: usize,
}

pub const HEADER: &str = "testbed,n,method,reps,correct_pct,mean_abs_dev,unconverged,cell";

impl Summary {
    /// One CSV row; `cell` is the table entry `correct (deviation)`.
    pub fn row(&self) -> String {
        format!(
            "{},{},{},{},{:.1},{:.2},{},\"{:.0} ({:.1})\"",
            self.testbed,
            self.n,
            self.method,
            self.reps,
            self.correct,
            self.deviation,
            self.unconverged,
            self.correct,
            self.deviation
        )
    }
}

pub fn table(rows: &[Summary]) -> String {
    let mut s = String::new();
    writeln!(s, "{HEADER}").unwrap();
    for r in rows {
        writeln!(s, "{}", r.row()).unwrap();
    }
    s
}

/// Mode count of one replication and whether the procedure converged.
fn one(
    tb: TestBed,
    n: usize,
    seed: u64,
    config: &ProcedureConfig,
    spectral: &SpectralConfig,
    cal: &Calibrator,
) -> Result<(usize, bool)> {
    match tb {
        TestBed::Neumann | TestBed::Gardner => {
            let x = if tb == TestBed::Neumann {
                neumann_series(NeumannConfig { length: n, ..Default::default() }, seed)?
            } else {
                let g = GardnerConfig::default();
                let length = g.length.max(g.segment_start + n);
                gardner_series(GardnerConfig { length, segment_length: n, ..g }, seed)?
            };
            match solve_spectral(&Series::raw(x), spectral) {
                Ok(r) => Ok((r.peak_count(), true)),
                Err(Error::SpectralNotConverged { last, .. }) => Ok((last.peak_count(), false)),
                Err(e) => Err(e),
            }
        }
        TestBed::PoissonMix => {
            let (support, counts) = tabulate(&sample_poisson_mix(n, seed)?);
            let r = solve_discrete(&support, &counts, config, cal)?;
            Ok((r.modes.mode_count, true))
        }
        _ => match estimate(&sample(tb, n, seed)?, config, cal) {
            Ok(r) => Ok((r.modes.mode_count, true)),
            Err(Error::NotConverged { last, .. }) => Ok((last.modes.mode_count, false)),
            Err(e) => Err(e),
        },
    }
}

/// Runs `reps` replications; replication `i` draws from seed
/// `derive_seed(seed, i)`.
pub fn simulate(
    tb: TestBed,
    n: usize,
    reps: usize,
    seed: u64,
    config: &ProcedureConfig,
    spectral: &SpectralConfig,
    cal: &Calibrator,
) -> Result<Summary> {
    let truth = tb.true_mode_count();
    let results = cal
        .execution()
        .map(reps, |i| one(tb, n, derive_seed(seed, i as u64), config, spectral, cal));
    let mut correct = 0;
    let mut dev = 0;
    let mut unconverged = 0;
    for r in results {
        let (k, ok) = r?;
        correct += usize::from(k == truth);
        dev += k.abs_diff(truth);
        unconverged += usize::from(!ok);
    }
    let method = if tb.is_series() {
        "spectral".to_string()
    } else if tb == TestBed::PoissonMix {
        "discrete".to_string()
    } else {
        config.method.name().to_string()
    };
    Ok(Summary {
        testbed: tb,
        n,
        method,
        reps,
        correct: 100.0 * correct as f64 / reps.max(1) as f64,
        deviation: dev as f64 / reps.max(1) as f64,
        unconverged,
    })
}
