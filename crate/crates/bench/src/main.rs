//! `mlmc-bench`: point estimates, variance scans, cost scans and work profiles as CSV.
//!
//! Exit codes: 0 success, 1 configuration error, 2 some adaptive run did not converge.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlmc::experiments::{self, CsvRow, ExperimentSpec, Scan};
use mlmc::{MlmcError, Result, Scheme};

use config::{parse_levels, split_pair, Settings};

#[derive(Parser, Debug)]
#[command(name = "mlmc-bench", version, about = "Multilevel Monte Carlo experiments on SDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Adaptive estimate for every (scheme, M, eps)
    Estimate(Flags),
    /// Level variances at a fixed sample count
    VarianceScan(Flags),
    /// Weighted cost of adaptive runs over (scheme, M, eps)
    CostScan(Flags),
    /// Fraction of the work per level, one run per scheme
    WorkProfile(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    /// heston or gbm
    #[arg(long)]
    model: Option<String>,
    /// call, sin, linear or quadratic
    #[arg(long)]
    payoff: Option<String>,
    /// euler, milstein, antithetic or approx-milstein (repeatable)
    #[arg(long = "scheme", value_parser = parse_scheme)]
    schemes: Vec<Scheme>,
    /// Ito-linearize the payoff; the base level becomes exact
    #[arg(long)]
    ito_linearize: bool,
    /// Refinement factor M (repeatable)
    #[arg(long = "refine")]
    refinements: Vec<usize>,
    /// Target RMS error (repeatable)
    #[arg(long = "eps")]
    epsilons: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]; output does not depend on it
    #[arg(long)]
    threads: Option<usize>,
    /// Samples per level for variance scans
    #[arg(long)]
    samples: Option<u64>,
    /// Highest level an adaptive run may add
    #[arg(long)]
    max_level: Option<u32>,
    /// Levels covered by variance scans, e.g. 2-6
    #[arg(long, value_parser = parse_levels)]
    levels: Option<(u32, u32)>,
    /// Output CSV file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model or payoff parameter, e.g. eta=0.3 or strike=1.1 (repeatable)
    #[arg(long = "param")]
    params: Vec<String>,
    /// File of key=value lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<Scheme> {
    s.parse()
}

impl Flags {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings {
            model: self.model.clone(),
            payoff: self.payoff.clone(),
            schemes: self.schemes.clone(),
            ito_linearize: self.ito_linearize.then_some(true),
            refinements: self.refinements.clone(),
            epsilons: self.epsilons.clone(),
            seed: self.seed,
            threads: self.threads,
            samples: self.samples,
            max_level: self.max_level,
            levels: self.levels,
            out: self.out.clone(),
            params: Default::default(),
        };
        for pair in &self.params {
            let (key, value) = split_pair(pair)?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| MlmcError::Config(format!("parameter `{pair}` is not numeric")))?;
            s.params.insert(key.trim().to_string(), value);
        }
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| MlmcError::Config(format!("cannot read {}: {e}", path.display())))?;
                Settings::from_text(&text)?
            }
            None => Settings::default(),
        };
        Ok(file.overridden_by(s))
    }
}

fn spec_from(settings: &Settings) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    if let Some(m) = &settings.model {
        spec.model = m.clone();
    }
    if let Some(p) = &settings.payoff {
        spec.payoff = p.clone();
    }
    if !settings.schemes.is_empty() {
        spec.schemes = settings.schemes.clone();
    }
    if !settings.refinements.is_empty() {
        spec.refinements = settings.refinements.clone();
    }
    if !settings.epsilons.is_empty() {
        spec.epsilons = settings.epsilons.clone();
    }
    spec.ito_linearize = settings.ito_linearize.unwrap_or(false);
    spec.seed = settings.seed.unwrap_or(spec.seed);
    spec.threads = settings.threads;
    spec.samples = settings.samples.unwrap_or(spec.samples);
    spec.max_level = settings.max_level.unwrap_or(spec.max_level);
    if let Some((lo, hi)) = settings.levels {
        spec.levels = lo..=hi;
    }
    spec.params = settings.params.clone();
    spec
}

fn emit<R: CsvRow>(scan: Scan<R>, subcommand: &str, out: Option<&PathBuf>) -> Result<bool> {
    match out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| MlmcError::Config(format!("cannot write {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            experiments::write_csv(&mut w, subcommand, &scan.rows)?;
            w.flush()?;
        }
        None => experiments::write_csv(io::stdout().lock(), subcommand, &scan.rows)?,
    }
    Ok(scan.converged)
}

fn execute(command: &Command) -> Result<bool> {
    let (name, flags) = match command {
        Command::Estimate(f) => ("estimate", f),
        Command::VarianceScan(f) => ("variance-scan", f),
        Command::CostScan(f) => ("cost-scan", f),
        Command::WorkProfile(f) => ("work-profile", f),
    };
    let settings = flags.settings()?;
    let spec = spec_from(&settings);
    let out = settings.out.as_ref();
    match command {
        Command::Estimate(_) => emit(experiments::estimate(&spec)?, name, out),
        Command::VarianceScan(_) => emit(experiments::variance_scan(&spec)?, name, out),
        Command::CostScan(_) => emit(experiments::cost_scan(&spec)?, name, out),
        Command::WorkProfile(_) => emit(experiments::work_profile(&spec)?, name, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("mlmc-bench: at least one run did not converge within the maximum level");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("mlmc-bench: {e}");
            ExitCode::from(1)
        }
    }
}
