//! Command-line front end.
//!
//! Every command reads an optional TOML run configuration, applies the
//! command-line overrides, and writes its outputs stamped with the hash of
//! the effective configuration and the master seed. Errors are reported
//! as a single line `error: kind=<kind> message="<text>"` on stderr.

pub mod bench;
pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimators::FamilyKind;
use crate::gof::StatisticKind;
use bench::Algorithm;
use config::{EstimatorKind, LambdaChoice, RunConfig, SCENARIO_NAMES};

pub const OUT_ENV: &str = "COVGOF_OUT";

#[derive(Debug, Parser)]
#[command(name = "covgof", version, about = "Goodness-of-fit tests for parametric covariate models")]
pub struct Cli {
    /// Master seed; every result is a function of the configuration and this seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "covgof-out")]
    pub out: PathBuf,
    /// Use 500 datasets and 500 Monte Carlo replicates by default.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and write it as CSV with a JSON metadata sidecar.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// File stem; defaults to `<scenario>_seed<seed>`.
        #[arg(long)]
        stem: Option<String>,
    },
    /// Fit one estimator and write the fitted clearance curve.
    Fit(EstimatorArgs),
    /// Cross-validate the regularization parameter.
    Cv(EstimatorArgs),
    /// Run one goodness-of-fit test.
    Test(TestArgs),
    /// Rejection rates over many simulated datasets.
    Power(PowerArgs),
    /// Compare optimization strategies.
    Bench(BenchArgs),
    /// Print the effective configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_parser = PossibleValuesParser::new(SCENARIO_NAMES))]
    pub scenario: Option<String>,
    /// Number of individuals.
    #[arg(long)]
    pub n: Option<usize>,
    /// Residual standard deviation on the log scale.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Dataset CSV with its JSON sidecar; simulated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long)]
    pub family: Option<FamilyKind>,
    /// Regularization parameter or `cv`.
    #[arg(long)]
    pub lambda: Option<LambdaChoice>,
    /// Kernel bandwidth in years.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub tau0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<FamilyKind>,
    #[arg(long, value_delimiter = ',')]
    pub statistics: Option<Vec<StatisticKind>>,
    /// Monte Carlo replicates.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_nonparametric: Option<LambdaChoice>,
    #[arg(long)]
    pub lambda_combined: Option<LambdaChoice>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long, value_delimiter = ',', value_parser = PossibleValuesParser::new(SCENARIO_NAMES))]
    pub scenarios: Option<Vec<String>>,
    /// Overrides the number of individuals of every scenario.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<FamilyKind>>,
    #[arg(long, value_delimiter = ',')]
    pub statistics: Option<Vec<StatisticKind>>,
    #[arg(long)]
    pub n_datasets: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_nonparametric: Option<LambdaChoice>,
    #[arg(long)]
    pub lambda_combined: Option<LambdaChoice>,
    /// Discard records of earlier runs instead of resuming.
    #[arg(long)]
    pub no_resume: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', value_parser = PossibleValuesParser::new(SCENARIO_NAMES))]
    pub scenarios: Option<Vec<String>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_datasets: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    pub lambda_nonparametric: Option<f64>,
    #[arg(long)]
    pub lambda_combined: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ScenarioArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.scenario {
            cfg.scenario.preset = s.clone();
            cfg.scenario.custom = None;
        }
        if self.n.is_some() {
            cfg.scenario.n = self.n;
        }
        if self.sigma.is_some() {
            cfg.scenario.sigma = self.sigma;
        }
    }
}

impl EstimatorArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        self.scenario.apply(cfg);
        let e = &mut cfg.estimator;
        if self.data.is_some() {
            e.data = self.data.clone();
        }
        set(&mut e.kind, self.estimator);
        if let Some(f) = self.family {
            if f != e.family {
                e.tau0 = None;
            }
            e.family = f;
        }
        set(&mut e.lambda, self.lambda);
        if self.tau0.is_some() {
            e.tau0 = self.tau0.clone();
        }
        set(&mut cfg.kernel.bandwidth, self.bandwidth);
        set(&mut cfg.cv.grid, self.grid.clone());
        set(&mut cfg.cv.folds, self.folds);
    }
}

impl TestArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        self.scenario.apply(cfg);
        let t = &mut cfg.test;
        if self.data.is_some() {
            t.data = self.data.clone();
        }
        set(&mut t.family, self.family);
        set(&mut t.statistics, self.statistics.clone());
        if self.m.is_some() {
            t.m = self.m;
        }
        set(&mut t.alpha, self.alpha);
        set(&mut t.lambda_nonparametric, self.lambda_nonparametric);
        set(&mut t.lambda_combined, self.lambda_combined);
        set(&mut cfg.kernel.bandwidth, self.bandwidth);
    }
}

impl PowerArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.power;
        set(&mut p.scenarios, self.scenarios.clone());
        set(&mut p.families, self.families.clone());
        set(&mut p.statistics, self.statistics.clone());
        if self.n_datasets.is_some() {
            p.n_datasets = self.n_datasets;
        }
        if self.m.is_some() {
            p.m = self.m;
        }
        set(&mut p.alpha, self.alpha);
        set(&mut p.lambda_nonparametric, self.lambda_nonparametric);
        set(&mut p.lambda_combined, self.lambda_combined);
        if self.no_resume {
            p.resume = false;
        }
        if self.n.is_some() {
            cfg.scenario.n = self.n;
        }
    }
}

impl BenchArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let b = &mut cfg.bench;
        set(&mut b.scenarios, self.scenarios.clone());
        set(&mut b.n_datasets, self.n_datasets);
        set(&mut b.algorithms, self.algorithms.clone());
        set(&mut b.lambda_nonparametric, self.lambda_nonparametric);
        set(&mut b.lambda_combined, self.lambda_combined);
        if self.n.is_some() {
            cfg.scenario.n = self.n;
        }
    }
}

impl Cli {
    /// Effective configuration: file, then flags, then scale defaults.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        cfg.paper_scale |= self.paper_scale;
        match &self.command {
            Command::Simulate { scenario, .. } | Command::ShowConfig { scenario } => scenario.apply(&mut cfg),
            Command::Fit(a) | Command::Cv(a) => a.apply(&mut cfg),
            Command::Test(a) => a.apply(&mut cfg),
            Command::Power(a) => a.apply(&mut cfg),
            Command::Bench(a) => a.apply(&mut cfg),
        }
        cfg.resolve()
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.effective_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate { stem, .. } => commands::cmd_simulate(&cfg, &cli.out, stem.as_deref()).map(drop),
        Command::Fit(_) => commands::cmd_fit(&cfg, &cli.out).map(drop),
        Command::Cv(_) => commands::cmd_cv(&cfg, &cli.out).map(drop),
        Command::Test(_) => commands::cmd_test(&cfg, &cli.out).map(drop),
        Command::Power(_) => commands::cmd_power(&cfg, &cli.out).map(drop),
        Command::Bench(_) => commands::cmd_bench(&cfg, &cli.out).map(drop),
        Command::ShowConfig { .. } => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    })
}

fn error_line(kind: &str, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error: kind={kind} message={flat:?}")
}

/// Process entry point. Usage errors exit with 2, run errors with 1.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
