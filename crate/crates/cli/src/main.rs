use std::path::PathBuf;
use std::process::ExitCode;

use audit_harness::config::{Overrides, RunConfig};
use audit_harness::error::Result;
use audit_harness::pipeline::{Pipeline, Stage, StageOutcome};
use audit_harness::synth::{write_fixture, SynthParams};
use clap::{Args, Parser, Subcommand};

/// Measure how corpus filtering strategies affect mentions of demographic
/// groups.
#[derive(Parser)]
#[command(name = "harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Never contact remote services.
    #[arg(long)]
    offline: bool,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the People Dataset and build the gazetteer.
    BuildKb(RunArgs),
    /// Read, gate and sample the corpus.
    Ingest(RunArgs),
    /// Train or load classifiers and calibrate quality thresholds.
    Train(RunArgs),
    /// Detect and link person mentions.
    Link(RunArgs),
    /// Apply every enabled strategy.
    Filter(RunArgs),
    /// Aggregate and render the report.
    Audit(RunArgs),
    /// Run every stage, skipping those that are up to date.
    All(RunArgs),
    /// Write a seeded synthetic fixture with a ready-to-run config.
    GenerateFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthParams::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = SynthParams::default().documents)]
        documents: usize,
        #[arg(long, default_value_t = SynthParams::default().people)]
        people: usize,
    },
}

fn pipeline(args: &RunArgs) -> Result<Pipeline> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(Overrides {
        offline: args.offline,
        seed: args.seed,
    });
    Pipeline::new(cfg, args.jobs.unwrap_or(0))
}

fn report(outcomes: &[StageOutcome]) {
    for o in outcomes {
        let state = if o.skipped { "up to date" } else { "done" };
        println!("{:<9} {state}", o.stage.name());
    }
}

fn run(cli: Cli) -> Result<()> {
    let (args, stage) = match cli.command {
        Command::GenerateFixture {
            out,
            seed,
            documents,
            people,
        } => {
            let params = SynthParams {
                seed,
                documents,
                people,
                ..SynthParams::default()
            };
            let layout = write_fixture(&out, &params)?;
            println!("{}", out.join(layout.config).display());
            return Ok(());
        }
        Command::All(a) => {
            let p = pipeline(&a)?;
            let outcomes = p.run_all()?;
            report(&outcomes);
            println!("report: {}", p.stage_dir(Stage::Audit).display());
            return Ok(());
        }
        Command::BuildKb(a) => (a, Stage::BuildKb),
        Command::Ingest(a) => (a, Stage::Ingest),
        Command::Train(a) => (a, Stage::Train),
        Command::Link(a) => (a, Stage::Link),
        Command::Filter(a) => (a, Stage::Filter),
        Command::Audit(a) => (a, Stage::Audit),
    };
    let p = pipeline(&args)?;
    report(&[p.run(stage)?]);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
