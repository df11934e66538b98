use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fiske::harness::{self, BackendSpec, RunConfig, RunReport};
use fiske::{ClueVariant, MappingPolicy};

#[derive(Parser)]
#[command(name = "fiske", version, about = "Clue-driven knowledge-graph question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Scripted,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    All,
    Top1,
}

#[derive(Subcommand)]
enum Command {
    /// Run a QA set end to end and write a JSON-lines report.
    Run(RunArgs),
    /// OR the match flags of a method report with a plain-prompting report.
    MergeIo {
        method: PathBuf,
        io: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the aggregates of a report as a table.
    Report { path: PathBuf },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: Backend,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = fiske::llm::DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    /// JSON-lines script for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Directory of prompt templates to use instead of the built-in English set.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    theta: u8,
    #[arg(long, value_enum, default_value = "all")]
    policy: Policy,
    #[arg(long)]
    branch_cap: Option<usize>,
    #[arg(long, default_value_t = 30)]
    budget: u32,
    #[arg(long)]
    no_sr: bool,
    #[arg(long)]
    no_ams: bool,
    #[arg(long)]
    no_baa: bool,
    #[arg(long, default_value = "none")]
    variant: ClueVariant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    width: usize,
    /// Add inverse edges for every triple.
    #[arg(long)]
    inverse_edges: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<()> {
    let backend = match args.backend {
        Backend::Oracle => BackendSpec::Oracle,
        Backend::Scripted => BackendSpec::Scripted(args.script.context("--script is required for the scripted backend")?),
        Backend::Http => BackendSpec::Http {
            endpoint: args.endpoint.context("--endpoint is required for the http backend")?,
            model: args.model,
            api_key_env: args.api_key_env,
        },
    };
    let mut cfg = RunConfig::new(args.graph, args.qa, backend);
    cfg.theta = args.theta;
    cfg.policy = match args.policy {
        Policy::All => MappingPolicy::All,
        Policy::Top1 => MappingPolicy::Top1,
    };
    cfg.branch_cap = args.branch_cap;
    cfg.budget = args.budget;
    cfg.no_sr = args.no_sr;
    cfg.no_ams = args.no_ams;
    cfg.no_baa = args.no_baa;
    cfg.variant = args.variant;
    cfg.seed = args.seed;
    cfg.width = args.width;
    cfg.templates = args.templates;
    cfg.load.inverse_edges = args.inverse_edges;

    let report = harness::run(&cfg)?;
    match &args.out {
        Some(path) => report.write(path)?,
        None => print!("{}", report.to_jsonl()),
    }
    eprint!("{}", report.summary.table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::MergeIo { method, io, out } => (|| {
            let merged = harness::merge_with_io(&RunReport::read(&method)?, &RunReport::read(&io)?)?;
            match out {
                Some(path) => merged.write(&path)?,
                None => print!("{}", merged.to_jsonl()),
            }
            Ok(())
        })(),
        Command::Report { path } => RunReport::read(&path).map(|r| print!("{}", r.summary.table())).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
