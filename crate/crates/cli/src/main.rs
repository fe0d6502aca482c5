use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;
use tsdensity::calibrate::{Calibrator, StatisticSpec};
use tsdensity::density::{
    estimate, preprocess, solve_discrete, solve_with_modes, DensityResult, Method,
    ProcedureConfig,
};
use tsdensity::model::Sample;
use tsdensity::spectral::{
    solve_spectral, solve_spectral_with_peaks, Series, SpectralConfig, SpectralResult,
};
use tsdensity::testbeds::{
    gardner_series, neumann_series, sample, sample_poisson_mix, GardnerConfig, NeumannConfig,
    TestBed,
};

mod input;
mod output;
mod simulate;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// The partial result has already been written.
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::NotConverged(_) => "not_converged",
        }
    }
}

impl From<tsdensity::Error> for CliError {
    fn from(e: tsdensity::Error) -> Self {
        match e {
            tsdensity::Error::NotConverged { .. } | tsdensity::Error::SpectralNotConverged { .. } => {
                CliError::NotConverged(e.to_string())
            }
            e => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tsdensity", version, about = "Densities and spectral densities with the fewest modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a density to a sample.
    Density(DensityArgs),
    /// Fit a spectral density to a time series.
    Spectral(SpectralArgs),
    /// Simulate quantile tables.
    Calibrate(CalibrateArgs),
    /// Modality summaries over replicated test-bed samples.
    Simulate(SimulateArgs),
    /// Write a test-bed sample or series.
    Fixtures(FixtureArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// One value per line, or a CSV file with --csv-column.
    #[arg(long)]
    input: PathBuf,
    /// 1-based column of a comma-separated input.
    #[arg(long)]
    csv_column: Option<usize>,
}

#[derive(Debug, Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "modified-kuiper")]
    method: MethodArg,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Squeeze factor.
    #[arg(long)]
    rho: Option<f64>,
}

impl MethodArgs {
    fn config(&self) -> Result<ProcedureConfig, CliError> {
        let mut c = ProcedureConfig::new(self.method.into());
        if let Some(k) = self.kappa {
            c.kappa = k;
        }
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(r) = self.rho {
            c.squeeze_factor = r;
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Kolmogorov,
    Kuiper,
    ModifiedKuiper,
    LocalSqueeze,
    Compromise50,
    Compromise90,
    Discrete,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Kolmogorov => Method::Kolmogorov,
            MethodArg::Kuiper => Method::Kuiper,
            MethodArg::ModifiedKuiper => Method::ModifiedKuiper,
            MethodArg::LocalSqueeze => Method::LocalSqueeze,
            MethodArg::Compromise50 => Method::Compromise50,
            MethodArg::Compromise90 => Method::Compromise90,
            MethodArg::Discrete => Method::Discrete,
        }
    }
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Squeeze a constant radius until the fit has exactly K modes.
    #[arg(long, value_name = "K")]
    modes: Option<usize>,
    /// JSON fit output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prefix for `<prefix>_density.csv` and `<prefix>_tube.csv`.
    #[arg(long, value_name = "PREFIX")]
    plot_data: Option<PathBuf>,
    /// Seed for quantile simulations that are not yet tabulated.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SpectralArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Lift the periodogram by FRAC times its mean ordinate.
    #[arg(long, value_name = "FRAC", num_args = 0..=1, default_missing_value = "0.001")]
    baseline: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Squeeze a constant radius until the fit has exactly K peaks.
    #[arg(long, value_name = "K")]
    modes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_name = "PREFIX")]
    plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatArg {
    Ko,
    Ku,
    Rho,
    UniKo,
    UniKu,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    stat: StatArg,
    /// Kuiper order; for `rho` the largest index.
    #[arg(long, default_value_t = 1)]
    kappa: usize,
    /// Report only this `rho` index.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = tsdensity::calibrate::DEFAULT_REPS)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    /// Table directory; results are only printed when absent.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    testbed: Vec<TestBed>,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    testbed: TestBed,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DiagnosticLine<'a> {
    level: &'static str,
    kind: &'a str,
    message: String,
}

fn report(level: &'static str, kind: &str, message: String) {
    let line = DiagnosticLine {
        level,
        kind,
        message,
    };
    eprint!("{}", serde_json::to_string(&line).unwrap() + "\n");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report("error", e.kind(), e.to_string());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Density(a) => density(a),
        Command::Spectral(a) => spectral(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Fixtures(a) => fixtures(a),
    }
}

fn calibrator(seed: Option<u64>) -> Calibrator {
    let c = Calibrator::from_env();
    match seed {
        Some(s) => c.with_seed(s),
        None => c,
    }
}

fn density(a: DensityArgs) -> Result<(), CliError> {
    let values = input::read_values(&a.input.input, a.input.csv_column)?;
    let config = a.method.config()?;
    let cal = calibrator(a.seed);
    if config.method == Method::Discrete {
        let (support, counts) = input::group(&values);
        let r = solve_discrete(&support, &counts, &config, &cal)?;
        return output::write_json(&output::discrete_json(&r, &config), a.out.as_deref());
    }
    let sample = Sample::new(values)?;
    let result = match a.modes {
        Some(k) => solve_with_modes(&preprocess(&sample)?, k, &config),
        None => estimate(&sample, &config, &cal),
    };
    let (fit, failure): (DensityResult, Option<CliError>) = match result {
        Ok(r) => (r, None),
        Err(tsdensity::Error::NotConverged { last, reason, iterations }) => (
            *last,
            Some(CliError::NotConverged(format!(
                "no adequate fit after {iterations} iterations: {reason}"
            ))),
        ),
        Err(e) => return Err(e.into()),
    };
    output::write_json(&output::density_json(&fit, &config), a.out.as_deref())?;
    if let Some(p) = &a.plot_data {
        output::density_plot_data(p, &fit)?;
    }
    failure.map_or(Ok(()), Err)
}

fn spectral(a: SpectralArgs) -> Result<(), CliError> {
    let values = input::read_values(&a.input.input, a.input.csv_column)?;
    let config = SpectralConfig {
        alpha: a.alpha,
        squeeze_factor: a.rho,
        baseline: a.baseline,
        ..SpectralConfig::default()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let series = Series::raw(values);
    let result = match a.modes {
        Some(k) => solve_spectral_with_peaks(&series, k),
        None => solve_spectral(&series, &config),
    };
    let (fit, failure): (SpectralResult, Option<CliError>) = match result {
        Ok(r) => (r, None),
        Err(e @ tsdensity::Error::SpectralNotConverged { .. }) => {
            let msg = e.to_string();
            let tsdensity::Error::SpectralNotConverged { last, .. } = e else {
                unreachable!()
            };
            (*last, Some(CliError::NotConverged(msg)))
        }
        Err(e) => return Err(e.into()),
    };
    output::write_json(&output::spectral_json(&fit, &config), a.out.as_deref())?;
    if let Some(p) = &a.plot_data {
        output::spectral_plot_data(p, &fit)?;
    }
    failure.map_or(Ok(()), Err)
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut cal = Calibrator::new().with_reps(a.reps).with_seed(a.seed);
    if let Some(dir) = &a.table {
        cal = cal.with_dir(dir);
    }
    if a.kappa == 0 {
        return Err(CliError::Usage("--kappa must be at least 1".into()));
    }
    if let Some(i) = a.index {
        if a.stat != StatArg::Rho || i == 0 || i > a.kappa {
            return Err(CliError::Usage("--index needs --stat rho and 1 <= index <= kappa".into()));
        }
    }
    println!("stat,order,n,alpha,reps,seed,quantile");
    for &alpha in &a.alpha {
        for &n in &a.n {
            let rows: Vec<(StatisticSpec, f64, usize, u64)> = if a.stat == StatArg::Rho {
                let (q, reps, seed) = cal.simulate_diff_entries(n, a.kappa, alpha)?;
                q.into_iter()
                    .enumerate()
                    .filter(|(i, _)| a.index.is_none_or(|k| k == i + 1))
                    .map(|(i, q)| (StatisticSpec::kuiper_diff(i + 1), q, reps, seed))
                    .collect()
            } else {
                let spec = match a.stat {
                    StatArg::Ko => StatisticSpec::kolmogorov(),
                    StatArg::Ku => StatisticSpec::kuiper(a.kappa),
                    StatArg::UniKo => StatisticSpec::unimodal_kolmogorov(),
                    StatArg::UniKu => StatisticSpec::unimodal_kuiper(a.kappa),
                    StatArg::Rho => unreachable!(),
                };
                let (q, reps, seed) = cal.simulate_entry(spec, n, alpha)?;
                vec![(spec, q, reps, seed)]
            };
            for (spec, q, reps, seed) in rows {
                if reps != a.reps || seed != a.seed {
                    report(
                        "warning",
                        "table",
                        format!("existing table for {spec} uses reps {reps} and seed {seed}"),
                    );
                }
                println!("{},{},{n},{alpha},{reps},{seed},{q:.16e}", spec.kind.name(), spec.order);
            }
        }
    }
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let config = a.method.config()?;
    let spectral = SpectralConfig::default();
    let cal = Calibrator::from_env();
    let mut rows = Vec::new();
    for &tb in &a.testbed {
        for &n in &a.n {
            rows.push(simulate::simulate(tb, n, a.reps, a.seed, &config, &spectral, &cal)?);
        }
    }
    write_text(&simulate::table(&rows), a.out.as_deref())
}

fn fixtures(a: FixtureArgs) -> Result<(), CliError> {
    let values: Vec<String> = match a.testbed {
        TestBed::Neumann => neumann_series(NeumannConfig { length: a.n, ..Default::default() }, a.seed)?
            .iter()
            .map(f64::to_string)
            .collect(),
        TestBed::Gardner => {
            let g = GardnerConfig::default();
            let length = g.length.max(g.segment_start + a.n);
            gardner_series(GardnerConfig { length, segment_length: a.n, ..g }, a.seed)?
                .iter()
                .map(f64::to_string)
                .collect()
        }
        TestBed::PoissonMix => sample_poisson_mix(a.n, a.seed)?
            .iter()
            .map(u64::to_string)
            .collect(),
        tb => sample(tb, a.n, a.seed)?
            .values()
            .iter()
            .map(f64::to_string)
            .collect(),
    };
    write_text(&(values.join("\n") + "\n"), a.out.as_deref())
}

fn write_text(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
