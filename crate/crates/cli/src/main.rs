use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use cacheopt_cli::commands::{self, load_config};
use cacheopt_cli::config::PerTier;
use cacheopt_cli::{
    run_random_activity, run_sweep, write_rows, CliError, CliResult, Config, SweepSpec,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cacheopt",
    version,
    about = "Decentralized coded caching with arbitrary file and cache sizes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and smoothed loads of the baseline schemes (and `parameter`, if configured).
    Evaluate(Common),
    /// SCA over complementary GPs, multi-started from the baselines. Writes the trace.
    OptimizeSca(Common),
    /// Projected gradient on the smoothed load. Writes the trace.
    OptimizeSmooth(Common),
    /// Converse bounds for the configured active set.
    Converse(Common),
    /// Monte Carlo delivery simulation of the baseline schemes.
    Simulate(Common),
    /// Sweep of schemes and the converse over the configured variable.
    Sweep(Common),
    /// Sweep with loads and bounds averaged over random user activity.
    RandomActivity {
        #[command(flatten)]
        common: Common,
        /// Per-user activity probability, overriding the scenario.
        #[arg(long)]
        prob: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Smoothing constant, at least 1.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    /// Simulation units per unit of file size.
    #[arg(long)]
    scale: Option<u64>,
    /// Output CSV, stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full-size presets, smoothed solver only.
    #[arg(long)]
    large: bool,
    /// Fill the wall-time column.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn config(&self) -> CliResult<Config> {
        let mut cfg = load_config(self.config.as_deref(), self.preset.as_deref(), self.large)?;
        let s = &mut cfg.solver;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.c {
            s.c = v;
        }
        if let Some(v) = self.starts {
            s.starts = v;
        }
        if let Some(v) = self.trials {
            s.trials = v;
        }
        if let Some(v) = self.scale {
            s.scale = v;
        }
        s.timing |= self.timing;
        Ok(cfg)
    }

    fn output(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Evaluate(c) => commands::evaluate(&c.config()?, c.output()?),
        Command::OptimizeSca(c) => commands::optimize_sca(&c.config()?, c.output()?),
        Command::OptimizeSmooth(c) => commands::optimize_smooth(&c.config()?, c.output()?),
        Command::Converse(c) => commands::converse(&c.config()?, c.output()?),
        Command::Simulate(c) => commands::simulate(&c.config()?, c.output()?),
        Command::Sweep(c) => {
            let spec = SweepSpec::from_config(&c.config()?, c.large)?;
            let rows = run_sweep(&spec)?;
            write_rows(&rows, c.output()?)?;
            Ok(format!("{} rows\n", rows.len()))
        }
        Command::RandomActivity { common: c, prob } => {
            let spec = SweepSpec::from_config(&c.config()?, c.large)?;
            let probs = prob.map(PerTier::One);
            let rows = run_random_activity(&spec, probs.as_ref())?;
            write_rows(&rows, c.output()?)?;
            Ok(format!("{} rows\n", rows.len()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            eprint!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
