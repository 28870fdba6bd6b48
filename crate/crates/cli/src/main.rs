use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Exit statuses. Usage errors exit with 2 through clap.
pub mod exit {
    pub const CONFIG: u8 = 3;
    pub const ENDPOINT: u8 = 4;
    pub const RUNTIME: u8 = 5;
    pub const DATA: u8 = 6;
}

#[derive(Parser)]
#[command(name = "deskresearch", version)]
#[command(about = "Synthesize tasks, run agents, train, curate, evaluate and merge at desk scale")]
pub struct Cli {
    /// Config file (TOML). Precedence: defaults < file < flags < environment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. `--set limits.max_tool_calls=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Policy locator: tcp://host:port or builtin:{oracle,prior,template}.
    #[arg(long, global = true)]
    policy: Option<String>,

    /// Tool locator: tcp://host:port or sim:<corpus.jsonl>.
    #[arg(long, global = true)]
    tools: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    mode: Option<Mode>,

    #[arg(long, global = true)]
    concurrency: Option<usize>,

    /// Append run events to this JSONL manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    React,
    Cm,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a seeded entity graph, verified tasks and their corpus
    Synth {
        #[arg(short, long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        n_tasks: Option<usize>,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        min_hops: Option<usize>,
        #[arg(long)]
        max_hops: Option<usize>,
        #[arg(long)]
        obfuscation: Option<u32>,
    },
    /// Build the BM25 index of a corpus, optionally running queries
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long, default_value = "index.json")]
        out: PathBuf,
        #[arg(long)]
        query: Vec<String>,
    },
    /// Run one rollout and print its trajectory
    Rollout {
        #[arg(long)]
        question: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Collect judged rollout groups for training
    Collect {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(short, long, default_value = "groups.jsonl")]
        out: PathBuf,
        #[arg(long)]
        group_size: Option<usize>,
    },
    /// One policy-gradient step of the template policy on collected groups
    TrainStep {
        #[arg(long, required_unless_present = "closed_loop")]
        groups: Option<PathBuf>,
        /// Starting logit table (JSON); the prior when absent.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(short, long, default_value = "policy_table.json")]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        /// Run the full synthesize-probe-curate-train loop instead.
        #[arg(long)]
        closed_loop: bool,
    },
    /// Probe tasks, apply the initial difficulty filter and export SFT data
    Curate {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(short, long, default_value = "curation.json")]
        out: PathBuf,
        #[arg(long)]
        sft: Option<PathBuf>,
    },
    /// Run k passes over a task set and report Avg@k / Pass@k
    Eval {
        #[arg(long, required_unless_present = "replay")]
        tasks: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(short, long, default_value = "metrics.json")]
        out: PathBuf,
        #[arg(long, default_value = "trajectories.jsonl")]
        trajectories: PathBuf,
        /// Recompute metrics from persisted trajectories; needs no endpoints.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Parallel context-managed agents on one question, then vote or synthesis
    Heavy {
        #[arg(long)]
        question: String,
        #[arg(long)]
        n: Option<usize>,
        /// Ask the policy to synthesize the reports instead of voting.
        #[arg(long)]
        synthesize: bool,
    },
    /// Convex combination of parameter files
    Merge {
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
