use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safeplan_cli::{run, validate, RunOptions};

#[derive(Parser)]
#[command(
    name = "safeplan",
    version,
    about = "Plan and track walking paths from scenario files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan, track and write artifacts.
    Run {
        /// Scenario file or bundled scenario name.
        scenario: String,
        #[command(flatten)]
        options: Options,
    },
    /// Check a scenario and list every problem found.
    Validate {
        scenario: String,
        #[command(flatten)]
        options: Options,
    },
}

#[derive(Args)]
struct Options {
    /// Planner random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl From<Options> for RunOptions {
    fn from(o: Options) -> Self {
        RunOptions {
            seed: o.seed,
            out: o.out,
            set: o.set,
        }
    }
}

/// Stdout may be a closed pipe; the artifacts are already on disk by then.
fn print_lines(lines: &[String]) {
    let mut out = std::io::stdout().lock();
    for line in lines {
        if writeln!(out, "{line}").is_err() {
            return;
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, options } => match run(&scenario, &options.into()) {
            Ok(summary) => {
                let mut lines: Vec<String> = summary.rows.iter().map(|(k, v)| format!("{k}: {v}")).collect();
                lines.push(format!("artifacts written to {}", summary.out_dir.display()));
                print_lines(&lines);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(e.exit_code())
            }
        },
        Command::Validate { scenario, options } => {
            let findings = validate(&scenario, &options.into());
            if findings.is_empty() {
                print_lines(&[format!("{scenario}: ok")]);
                ExitCode::SUCCESS
            } else {
                print_lines(&findings);
                ExitCode::from(2)
            }
        }
    }
}
