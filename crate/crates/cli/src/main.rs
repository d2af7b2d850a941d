mod commands;
mod options;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::options::Common;
use crate::report::CliError;

#[derive(Parser, Debug)]
#[command(name = "cglab", version, about = "Linear factorization and probe geometry of concept-grid embeddings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train free embeddings and probes from scratch on a concept grid.
    SynthTrain(commands::synth::Args),
    /// Find the smallest dimension at which free training succeeds.
    MinDimScan(commands::scan::Args),
    /// Recover additive factors from a dump.
    RecoverFactors(commands::factors::Args),
    /// R^2, orthogonality, effective rank and compositional accuracy.
    Metrics(commands::metrics::Args),
    /// Run theory checks.
    Verify(commands::verify::Args),
    /// Train probes on a dump.
    ProbeTrain(commands::probes::Args),
    /// Readout stability across training supports.
    Stability(commands::stability::Args),
    /// Collect reports from a directory into one summary.
    Report(commands::summary::Args),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    let c = &cli.common;
    match cli.command {
        Command::SynthTrain(a) => commands::synth::run(c, a),
        Command::MinDimScan(a) => commands::scan::run(c, a),
        Command::RecoverFactors(a) => commands::factors::run(c, a),
        Command::Metrics(a) => commands::metrics::run(c, a),
        Command::Verify(a) => commands::verify::run(c, a),
        Command::ProbeTrain(a) => commands::probes::run(c, a),
        Command::Stability(a) => commands::stability::run(c, a),
        Command::Report(a) => commands::summary::run(c, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cglab: {e}");
            ExitCode::from(e.code())
        }
    }
}
