mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "termforge", version, about = "Terminal-agent training data pipeline")]
struct Cli {
    /// JSON config file; `${VAR}` in string values expands from the environment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check task directories (or directories of tasks) for invariant violations.
    Validate(ValidateArgs),
    /// Wrap math, code or SWE prompt records into terminal tasks.
    Adapt(AdaptArgs),
    /// Generate synthetic tasks with a model.
    Generate(GenerateArgs),
    /// Run an agent campaign over a task directory.
    Rollout(RolloutArgs),
    /// Run every task's tests in a fresh session.
    Verify(VerifyArgs),
    /// Drop prompts that share an n-gram with benchmark texts.
    Decontaminate(DecontamArgs),
    /// Select trajectories by status, test outcome and content.
    Filter(FilterArgs),
    /// Turn and token distributions of a trajectory corpus.
    Stats(StatsArgs),
    /// Write SFT samples or build a dataset mixture.
    Export(ExportArgs),
    /// Aggregate test reports into mean ± stderr.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    /// JSONL prompt records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    image_ref: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GenerateKind {
    Skill,
    Seed,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    kind: GenerateKind,
    #[arg(long)]
    out: PathBuf,
    /// JSONL seed records (seed mode).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated domain names (skill mode).
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<String>>,
    /// Domain registry JSON replacing the built-in one.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    image_ref: Option<String>,
    /// Use scripted replies from this JSONL file instead of the configured model.
    #[arg(long)]
    mock: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RolloutArgs {
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_new_episodes: Option<usize>,
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Scripted terminal transcript file or directory.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// JSONL report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Copy the task's solution in and run `solution/solve.sh` first.
    #[arg(long)]
    apply_solution: bool,
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecontamArgs {
    /// JSONL records to filter.
    #[arg(long)]
    input: PathBuf,
    /// Benchmark JSONL (every string field counts) or a directory of tasks.
    #[arg(long)]
    benchmark: PathBuf,
    /// Kept records, verbatim.
    #[arg(long)]
    out: PathBuf,
    /// Removal report JSONL.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Campaign output directory or trajectory JSONL.
    #[arg(long)]
    input: PathBuf,
    /// Trajectory JSONL of the survivors.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    complete_only: bool,
    #[arg(long)]
    success_only: bool,
    #[arg(long)]
    quality: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// Identity-leak pattern file.
    #[arg(long)]
    patterns: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    token_bin_width: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Trajectories to convert; omit when building a mixture.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_parser = ["drop", "truncate_tail"])]
    policy: Option<String>,
    /// Mixture spec JSON; parts are sample JSONL files.
    #[arg(long)]
    mixture: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["pass", "weighted"])]
    mode: Option<String>,
    /// Write the summary JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
