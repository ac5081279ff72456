//! Command-line front end for the story-personalization pipeline.
//!
//! Every stage command reads the same JSON run configuration. Failures
//! print one structured JSON line to stderr and exit with 1 (bad input or
//! invocation order) or 2 (a pipeline stage failed mid-run).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fabula::fixtures::emit_fixture;
use fabula::pipeline::{
    build_backend, run_all, run_cost, run_generate, run_ingest, run_judge, run_metrics,
    run_profile, run_report, run_stylize, PipelineError, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "fabula",
    version,
    about = "Author style profiling, persona-driven story generation, and pairwise evaluation"
)]
struct Cli {
    /// Run configuration (JSON). Not needed by `fixture`.
    #[arg(short, long, global = true, default_value = "config.json")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset, split each author's history, write the ingest report.
    Ingest,
    /// Build the iterative writing sheet and one-pass summary per author.
    Profile,
    /// Derive personas and per-prompt story rules from the profiles.
    Stylize,
    /// Generate stories for every held-out prompt with the configured methods.
    Generate,
    /// Judge each method's stories against the average-author baseline.
    Judge,
    /// Compute overlap, homogenization, and style metrics per method.
    Metrics,
    /// Aggregate judge verdicts into win-rate tables (CSV + JSON).
    Report,
    /// Write the profiling cost projection table for both sheet strategies.
    Cost {
        /// Largest profiling-story count to tabulate.
        #[arg(long, default_value_t = 100)]
        max_p: u64,
    },
    /// Run ingest through report in order against one backend.
    Pipeline,
    /// Emit the bundled demo dataset and deterministic mock fixtures.
    Fixture {
        /// Directory to write the fixture bundle into.
        #[arg(long, default_value = "fixture")]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::Fixture { dir } = &cli.command {
        let bundle = emit_fixture(dir)?;
        println!(
            "fixture: {} calls recorded ({} distinct) into {}",
            bundle.calls,
            bundle.distinct_fingerprints,
            dir.display()
        );
        return Ok(());
    }

    let config = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest => {
            let report = run_ingest(&config)?;
            println!(
                "ingest: {} authors, {} stories ({} profiling / {} generation), {} violations",
                report.authors,
                report.stories,
                report.profiling_stories,
                report.generation_stories,
                report.violations.len()
            );
        }
        Command::Profile => {
            let backend = build_backend(&config)?;
            run_profile(&config, backend.as_ref())?;
            println!("profile: sheets and summaries written");
        }
        Command::Stylize => {
            let backend = build_backend(&config)?;
            run_stylize(&config, backend.as_ref())?;
            println!("stylize: personas and story rules written");
        }
        Command::Generate => {
            let backend = build_backend(&config)?;
            run_generate(&config, backend.as_ref())?;
            println!("generate: stories written");
        }
        Command::Judge => {
            let backend = build_backend(&config)?;
            run_judge(&config, backend.as_ref())?;
            println!("judge: verdicts written");
        }
        Command::Metrics => {
            run_metrics(&config)?;
            println!("metrics: per-method rows written");
        }
        Command::Report => {
            run_report(&config)?;
            println!("report: win-rate tables written");
        }
        Command::Cost { max_p } => {
            run_cost(&config, max_p)?;
            println!("cost: projection table written (p = 0..={max_p})");
        }
        Command::Pipeline => {
            let backend = build_backend(&config)?;
            let report = run_all(&config, backend.as_ref())?;
            println!(
                "pipeline: complete ({} authors, {} stories)",
                report.authors, report.stories
            );
        }
        Command::Fixture { .. } => unreachable!("handled before config load"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let line = serde_json::to_string(&error.failure_json())
                .unwrap_or_else(|_| format!("{{\"error\":{:?}}}", error.to_string()));
            eprintln!("{line}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
