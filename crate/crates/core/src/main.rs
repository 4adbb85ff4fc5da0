use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use redundant_topp::commands::{
    cmd_baseline, cmd_export, cmd_plan, cmd_sweep, cmd_verify, CliError, RunOptions, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "rtopp",
    version,
    about = "Time-optimal planning for redundant manipulators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the scenario and report sizes without running.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn options(self, budget: Option<f64>) -> RunOptions {
        RunOptions {
            scenario: self.scenario,
            out: self.out,
            dry_run: self.dry_run,
            threads: self.threads,
            budget,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Plan with the unified planner.
    Plan(Common),
    /// Two-stage baseline and paired comparison.
    Baseline(Common),
    /// Planner against exhaustive enumeration.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Maximum number of chains the oracle may face.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Planner runs over one grid parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of stages, v_step, pv_step, pv_max.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Plan and resample linearly in time.
    Export {
        #[command(flatten)]
        common: Common,
        /// Sample rate (Hz).
        #[arg(long, default_value_t = 1000.0)]
        rate: f64,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let outcome = match cli.command {
        Command::Plan(c) => cmd_plan(&c.options(None))?,
        Command::Baseline(c) => cmd_baseline(&c.options(None))?,
        Command::Verify { common, budget } => cmd_verify(&common.options(budget))?,
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let axis = SweepAxis::parse(&axis)
                .ok_or_else(|| CliError::Config(format!("unknown sweep axis {axis}")))?;
            cmd_sweep(&common.options(None), axis, &values)?
        }
        Command::Export { common, rate } => cmd_export(&common.options(None), rate)?,
    };
    Ok(match outcome.out_dir {
        Some(dir) => format!("{} -> {}", outcome.summary, dir.display()),
        None => outcome.summary,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            // Usage errors count as configuration errors.
            return ExitCode::from(3);
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
