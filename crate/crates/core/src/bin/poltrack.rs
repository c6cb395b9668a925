use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poltrack::feedback::Sampler;
use poltrack::harness::{self, RunOutput, ScenarioConfig, ScenarioKind};
use poltrack::series::{summarize, TimeSeries};
use poltrack::Error;

/// Simulate polarization tracking for a fiber QKD link.
#[derive(Parser)]
#[command(name = "poltrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of feedback cycles.
    #[arg(long)]
    duration: Option<u64>,
    /// Disable the controllers (open-loop baseline).
    #[arg(long)]
    no_control: bool,
    /// Simulate every pulse individually instead of sampling batch totals.
    #[arg(long)]
    full: bool,
    /// Independent replicas with consecutive seeds, run in parallel.
    #[arg(long, default_value_t = 1)]
    replicas: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a TOML configuration file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a built-in scenario.
    Preset {
        /// static-converge, drift24h, scramble-0.2, scramble-0.4, scramble-0.6 or table.
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print the estimator accuracy table as CSV.
    Table {
        /// Mean photon number.
        #[arg(long)]
        mu: Option<f64>,
        /// Channel and detector transmittance.
        #[arg(long)]
        eta: Option<f64>,
        /// Comma-separated error rates.
        #[arg(long, value_delimiter = ',')]
        qber: Option<Vec<f64>>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        b: Option<Vec<u64>>,
    },
    /// Summarize an existing series CSV.
    Summary { csv: PathBuf },
    /// Configuration helpers.
    Config {
        /// Print the full default configuration.
        #[arg(long)]
        print_defaults: bool,
        /// Print a preset instead of the defaults.
        #[arg(long)]
        preset: Option<String>,
    },
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config { .. } => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn apply(cfg: &mut ScenarioConfig, opts: &RunOpts) {
    if let Some(seed) = opts.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(d) = opts.duration {
        cfg.scenario.duration = d;
    }
    if opts.no_control {
        cfg.scenario.control_enabled = false;
    }
    if opts.full {
        cfg.scenario.sampler = Sampler::PerPulse;
    }
}

fn execute(mut cfg: ScenarioConfig, opts: &RunOpts) -> Result<(), Error> {
    apply(&mut cfg, opts);
    cfg.validate()?;
    if opts.replicas > 1 {
        let summaries = harness::run_replicas(&cfg, opts.replicas, &opts.out)?;
        print!("{}", harness::aggregate_text(&summaries));
        return Ok(());
    }
    match harness::run_to_dir(&cfg, &opts.out)? {
        RunOutput::Series(_, summary) => print!("{}", summary.to_text()),
        RunOutput::Table(table) => print!("{}", harness::table_to_csv(&table)),
    }
    Ok(())
}

fn summary(path: &Path) -> Result<(), Error> {
    let series = TimeSeries::read_csv(path)?;
    print!("{}", summarize(&series)?.to_text());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, opts } => {
            ScenarioConfig::load(&config).and_then(|cfg| execute(cfg, &opts))
        }
        Command::Preset { name, opts } => {
            harness::preset(&name).and_then(|cfg| execute(cfg, &opts))
        }
        Command::Table { mu, eta, qber, b } => {
            let mut cfg = ScenarioConfig::default();
            cfg.scenario.kind = ScenarioKind::SampleSizeTable;
            let t = &mut cfg.table;
            t.mu = mu.unwrap_or(t.mu);
            t.eta = eta.unwrap_or(t.eta);
            if let Some(q) = qber {
                t.qber = q;
            }
            if let Some(b) = b {
                t.b = b;
            }
            cfg.validate()
                .and_then(|_| harness::sample_size_table(&cfg))
                .map(|table| print!("{}", harness::table_to_csv(&table)))
        }
        Command::Summary { csv } => summary(&csv),
        Command::Config {
            print_defaults,
            preset,
        } => match preset {
            Some(name) => harness::preset(&name).map(|c| print!("{}", c.to_toml())),
            None if print_defaults => {
                print!("{}", ScenarioConfig::default().to_toml());
                Ok(())
            }
            None => Err(Error::config(
                "config",
                "pass --print-defaults or --preset NAME",
            )),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
