use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tsdensity::density::{DensityResult, Diagnostics, DiscreteResult};
use tsdensity::model::{Extreme, ExtremeKind, Knot, PiecewiseConstantDensity, Segment, TubeSpec, Touch};
use tsdensity::spectral::SpectralResult;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct KnotJson {
    pub x: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub touch: Touch,
}

#[derive(Debug, Serialize)]
pub struct ModeJson {
    pub left: f64,
    pub right: f64,
    pub kind: ExtremeKind,
}

#[derive(Debug, Serialize)]
pub struct ProbabilityJson {
    pub x: f64,
    pub p: f64,
}

#[derive(Debug, Serialize)]
pub struct FitJson<C: Serialize> {
    pub method: String,
    pub config: C,
    pub knots: Vec<KnotJson>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub probabilities: Vec<ProbabilityJson>,
    pub mode_count: usize,
    pub modes: Vec<ModeJson>,
    pub diagnostics: Diagnostics,
}

fn knots(k: &[Knot]) -> Vec<KnotJson> {
    k.iter()
        .map(|k| KnotJson {
            x: k.x,
            f: k.y,
            touch: k.touch,
        })
        .collect()
}

fn modes(e: &[Extreme]) -> Vec<ModeJson> {
    e.iter()
        .map(|e| ModeJson {
            left: e.left,
            right: e.right,
            kind: e.kind,
        })
        .collect()
}

pub fn density_json<C: Serialize>(r: &DensityResult, config: C) -> FitJson<C> {
    FitJson {
        method: r.method.name().to_string(),
        config,
        knots: knots(r.string.knots()),
        segments: r.density.segments().to_vec(),
        probabilities: Vec::new(),
        mode_count: r.modes.mode_count,
        modes: modes(&r.modes.extremes),
        diagnostics: r.diagnostics.clone(),
    }
}

pub fn discrete_json<C: Serialize>(r: &DiscreteResult, config: C) -> FitJson<C> {
    FitJson {
        method: "discrete".into(),
        config,
        knots: knots(r.string.knots()),
        segments: Vec::new(),
        probabilities: r
            .support
            .iter()
            .zip(&r.probabilities)
            .map(|(&x, &p)| ProbabilityJson { x, p })
            .collect(),
        mode_count: r.modes.mode_count,
        modes: modes(&r.modes.extremes),
        diagnostics: Diagnostics {
            iterations: r.iterations,
            radius: r.radius,
            converged: true,
            ..Diagnostics::default()
        },
    }
}

pub fn spectral_json<C: Serialize>(r: &SpectralResult, config: C) -> FitJson<C> {
    FitJson {
        method: "spectral".into(),
        config,
        knots: knots(r.string.knots()),
        segments: r.density.segments().to_vec(),
        probabilities: Vec::new(),
        mode_count: r.peak_count(),
        modes: modes(&r.modes.extremes),
        diagnostics: r.diagnostics.clone(),
    }
}

pub fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = tsdensity::json::to_string(value)?;
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `(x, density)` rows: each segment's left end with its height, then the
/// right end of the last segment repeating the last height.
pub fn step_csv(d: &PiecewiseConstantDensity) -> String {
    let mut s = String::from("x,density\n");
    for seg in d.segments() {
        writeln!(s, "{},{}", seg.left, seg.height).unwrap();
    }
    let last = d.segments()[d.segments().len() - 1];
    writeln!(s, "{},{}", last.right, last.height).unwrap();
    s
}

/// `(x, E, lower, upper, string)` at the tube abscissae; the pinned end
/// rows carry the pin as both bounds.
pub fn tube_csv(tube: &TubeSpec, center: &[f64], string: &[f64]) -> String {
    let mut s = String::from("x,E,lower,upper,string\n");
    for i in 0..tube.len() {
        let (lo, hi) = tube.bounds(i);
        writeln!(s, "{},{},{},{},{}", tube.abscissae[i], center[i], lo, hi, string[i]).unwrap();
    }
    s
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// Writes `<prefix>_density.csv` and `<prefix>_tube.csv`.
pub fn emit_plot_data(
    prefix: &Path,
    density: &PiecewiseConstantDensity,
    tube: &TubeSpec,
    center: &[f64],
    string: &[f64],
) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Data(format!("{}: {e}", p.display()));
    let d = with_suffix(prefix, "_density.csv");
    fs::write(&d, step_csv(density)).map_err(|e| io(&d, e))?;
    let t = with_suffix(prefix, "_tube.csv");
    fs::write(&t, tube_csv(tube, center, string)).map_err(|e| io(&t, e))?;
    Ok(())
}

pub fn density_plot_data(prefix: &Path, r: &DensityResult) -> Result<(), CliError> {
    let tube = r.tube()?;
    let string = r.string.eval_sorted(r.ecdf.points());
    emit_plot_data(prefix, &r.density, &tube, r.ecdf.steps(), &string)
}

pub fn spectral_plot_data(prefix: &Path, r: &SpectralResult) -> Result<(), CliError> {
    let tube = r.tube()?;
    let string = r.string.eval_sorted(&r.cdf.frequencies);
    emit_plot_data(prefix, &r.density, &tube, &r.cdf.values, &string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_density_has_two_rows() {
        let d = PiecewiseConstantDensity::new(vec![Segment {
            left: 0.0,
            right: 1.0,
            height: 1.0,
        }])
        .unwrap();
        assert_eq!(step_csv(&d), "x,density\n0,1\n1,1\n");
    }

    #[test]
    fn step_csv_round_trips() {
        let segs = vec![
            Segment { left: 0.0, right: 0.3, height: 1.0 / 3.0 },
            Segment { left: 0.3, right: 1.7, height: 0.1 + 0.2 },
        ];
        let d = PiecewiseConstantDensity::new(segs.clone()).unwrap();
        let rows: Vec<(f64, f64)> = step_csv(&d)
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        for (s, r) in segs.iter().zip(&rows) {
            assert_eq!((s.left, s.height), *r);
        }
    }
}
