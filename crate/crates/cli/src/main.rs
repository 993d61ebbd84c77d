//! `hleval`: batch pipeline and annotation server.
//!
//! Exit status: 0 success, 1 invalid data, 2 usage error, 3 internal error.

mod artifacts;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AnalysisArgs, AssignArgs, DataError, SegmentArgs, ServeArgs, SynthArgs, ValidateArgs};

#[derive(Debug, Parser)]
#[command(name = "hleval", version, about = "Behavior-based human-likeness evaluation")]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check corpus invariants; exit 1 on any violation.
    Validate(ValidateArgs),
    /// Cut dialogues into sample windows.
    Segment(SegmentArgs),
    /// Allocate samples to annotators.
    Assign(AssignArgs),
    /// Sample and dialogue scores plus the score histogram.
    Aggregate(AnalysisArgs),
    /// Per-dialogue behavior feature table.
    Features(AnalysisArgs),
    /// Behavior and questionnaire correlations with the scores.
    Correlate(AnalysisArgs),
    /// Leave-one-out SVR evaluation against a mean baseline.
    Evaluate(AnalysisArgs),
    /// Generate a synthetic corpus with planted effects.
    Synth(SynthArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Aggregate, features, correlate and evaluate in one run.
    Report(AnalysisArgs),
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Validate(a) => commands::validate_cmd(a),
        Command::Segment(a) => commands::segment_cmd(a),
        Command::Assign(a) => commands::assign_cmd(a),
        Command::Aggregate(a) => commands::aggregate_cmd(a),
        Command::Features(a) => commands::features_cmd(a),
        Command::Correlate(a) => commands::correlate_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Synth(a) => commands::synth_cmd(a),
        Command::Serve(a) => commands::serve_cmd(a),
        Command::Report(a) => commands::report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<DataError>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}
