use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use crate::averaging::poisson_residual;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{to_json_bytes, CsvTable};
use crate::harness::run::{run_averaging_validation, run_convergence, run_holder_scaling};
use crate::linalg::{covariance_j, lyapunov_residual, LyapunovSide};
use crate::models::{
    builtin_model, check_assumptions, probe_cloud, ModelSpec, ScalarField, ScalarObservableSpec,
    BUILTIN_MODELS,
};
use crate::sde::{sample_path_noise, simulate_fast_slow, simulate_limit, write_path_csv};

/// Largest Lyapunov residual `check` accepts.
pub const CHECK_LYAPUNOV_TOL: f64 = 1e-10;
/// Largest Poisson residual `check` accepts.
pub const CHECK_POISSON_TOL: f64 = 1e-7;

#[derive(Debug, Parser)]
#[command(
    name = "roughsk",
    version,
    about = "Small-mass limit of Langevin dynamics with state-dependent friction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (simulate) or directory (converge, holder, average).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the configured model.
    #[arg(long, global = true)]
    model: Option<String>,

    /// Comma-separated ε values, overriding the configured ladder.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,

    /// Suppress everything but errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump one path as CSV: the fast–slow pair when --eps is given, else the limit.
    Simulate,
    /// Monte Carlo convergence study down the ε ladder.
    Converge,
    /// Hölder scaling of the fast–slow path and its Itô lift.
    Holder,
    /// Averaging-principle validation for the configured observable.
    Average,
    /// Assumption, Lyapunov and Poisson self-tests.
    Check,
}

enum Outcome {
    Success,
    CheckFailed,
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code: 0 success, 1 usage or configuration error, 2 runtime failure.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    cli_main_with(args, &mut io::stdout().lock(), &mut io::stderr().lock())
}

pub fn cli_main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let started = Instant::now();
    match dispatch(&cli, stdout) {
        Ok(Outcome::Success) => {
            if !cli.quiet {
                let _ = writeln!(stderr, "done in {:.3} s", started.elapsed().as_secs_f64());
            }
            0
        }
        Ok(Outcome::CheckFailed) => {
            let _ = writeln!(stderr, "error: self-test failed");
            2
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(model) = &cli.model {
        config.model_name = model.clone();
    }
    if let Some(eps) = &cli.eps {
        config.epsilons = eps.clone();
    }
    config.validate()?;
    Ok(config)
}

fn emit(
    cli: &Cli,
    config: &ExperimentConfig,
    stem: &str,
    json: Vec<u8>,
    table: CsvTable,
    stdout: &mut dyn Write,
) -> Result<()> {
    match cli.out.as_ref().or(config.outputs.as_ref()) {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{stem}.json")), json)?;
            fs::write(dir.join(format!("{stem}.csv")), table.to_bytes()?)?;
        }
        None if !cli.quiet => stdout.write_all(&json)?,
        None => {}
    }
    Ok(())
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Simulate => simulate(cli, stdout).map(|_| Outcome::Success),
        Command::Converge => {
            let config = load_config(cli)?;
            let report = run_convergence(&config)?;
            emit(
                cli,
                &config,
                "convergence",
                to_json_bytes(&report)?,
                (&report).into(),
                stdout,
            )?;
            Ok(Outcome::Success)
        }
        Command::Holder => {
            let config = load_config(cli)?;
            let report = run_holder_scaling(&config)?;
            emit(
                cli,
                &config,
                "holder",
                to_json_bytes(&report)?,
                (&report).into(),
                stdout,
            )?;
            Ok(Outcome::Success)
        }
        Command::Average => {
            let config = load_config(cli)?;
            let model = config.model()?;
            let obs = config.observable.to_spec(model.dim())?;
            let report = run_averaging_validation(&config, &obs)?;
            emit(
                cli,
                &config,
                "averaging",
                to_json_bytes(&report)?,
                (&report).into(),
                stdout,
            )?;
            Ok(Outcome::Success)
        }
        Command::Check => check(cli, stdout),
    }
}

fn simulate(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let config = load_config(cli)?;
    let model = config.model()?;
    let mut buf = Vec::new();
    match &cli.eps {
        Some(eps) => {
            let epsilon = eps[0];
            let grid = config.fine_grid(epsilon);
            let noise = sample_path_noise(grid.steps, model.dim(), grid.dt, config.seed, 0);
            let (x, y) = simulate_fast_slow(&model, epsilon, &noise, config.scheme)?;
            write_path_csv(&mut buf, &x, Some(&y))?;
        }
        None => {
            let smallest = *config.epsilons.last().expect("validated non-empty");
            let grid = config.fine_grid(smallest);
            let noise = sample_path_noise(grid.steps, model.dim(), grid.dt, config.seed, 0);
            write_path_csv(&mut buf, &simulate_limit(&model, &noise)?, None)?;
        }
    }
    match &cli.out {
        Some(path) => write_file(path, &buf),
        None if !cli.quiet => Ok(stdout.write_all(&buf)?),
        None => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(fs::write(path, bytes)?)
}

/// Self-test residuals for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckSummary {
    pub model: String,
    pub assumptions: Vec<(String, bool, f64)>,
    pub lyapunov_residual: f64,
    pub poisson_residual: f64,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.assumptions.iter().all(|a| a.1)
            && self.lyapunov_residual <= CHECK_LYAPUNOV_TOL
            && self.poisson_residual <= CHECK_POISSON_TOL
    }
}

/// Assumption probes, `‖MJ + JMᵀ − id‖_F` and the Poisson residual over every
/// index choice and both observable kinds.
pub fn self_check(model: &ModelSpec, seed: u64) -> Result<CheckSummary> {
    let d = model.dim();
    let xs = probe_cloud(d, 200, 3.0, seed);
    let report = check_assumptions(model, &xs, seed)?;
    let id = DMatrix::identity(d, d);
    let mut lyapunov = 0.0_f64;
    for x in &xs {
        let m = model.friction(x);
        let j = covariance_j(&m)?;
        lyapunov = lyapunov.max(lyapunov_residual(&m, &j, &id, LyapunovSide::MjJmt));
    }
    let ys = probe_cloud(d, 200, 3.0, seed.wrapping_add(1));
    let pairs: Vec<_> = xs.into_iter().zip(ys).take(50).collect();
    let mut poisson = 0.0_f64;
    for k in 0..d {
        for l in 0..d {
            let g = || ScalarField::constant(1.0);
            poisson = poisson.max(poisson_residual(
                &ScalarObservableSpec::yy(k, l, g()),
                model,
                &pairs,
            )?);
            for i in 0..d {
                poisson = poisson.max(poisson_residual(
                    &ScalarObservableSpec::xyy(i, k, l, g()),
                    model,
                    &pairs,
                )?);
            }
        }
    }
    Ok(CheckSummary {
        model: model.name().to_string(),
        assumptions: report
            .checks
            .iter()
            .map(|c| (c.name.to_string(), c.passed, c.value))
            .collect(),
        lyapunov_residual: lyapunov,
        poisson_residual: poisson,
    })
}

fn check(cli: &Cli, stdout: &mut dyn Write) -> Result<Outcome> {
    let names: Vec<String> = match &cli.model {
        Some(m) => vec![m.clone()],
        None => BUILTIN_MODELS.iter().map(|s| s.to_string()).collect(),
    };
    let seed = cli.seed.unwrap_or(0);
    let mut ok = true;
    for name in names {
        let summary = self_check(&builtin_model(&name)?, seed)?;
        ok &= summary.passed();
        if cli.quiet {
            continue;
        }
        for (check, passed, value) in &summary.assumptions {
            let verdict = if *passed { "pass" } else { "FAIL" };
            writeln!(stdout, "{name} assumption {check} {verdict} {value:.6e}")?;
        }
        writeln!(
            stdout,
            "{name} lyapunov_residual {:.3e}",
            summary.lyapunov_residual
        )?;
        writeln!(
            stdout,
            "{name} poisson_residual {:.3e}",
            summary.poisson_residual
        )?;
    }
    Ok(if ok {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    })
}
