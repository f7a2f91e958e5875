mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "taesar", version, about = "Target-aligned regeneration of mixed-domain interaction sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set predictor.hidden_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every stochastic component.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for stage artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ablation preset: full, w/o-DSA, DSA-w/o-DSP, DSP-w/o-SDE, DSP-w/o-GCS, DSP-w/o-LCS.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted cross-domain clusters.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Generator spec (TOML) replacing the `[synth]` section.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Pretrain the base model on mixed sequences.
    Pretrain(Common),
    /// Adapt domain experts from the base model.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Adapt only this domain.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Regenerate sequences into target-domain items.
    Regenerate(Common),
    /// Rank the test split with saved checkpoints.
    Evaluate(Common),
    /// Compare original, naive-mixed and regenerated training data.
    Compare(Common),
    /// Dataset statistics of original and regenerated data.
    Stats(Common),
    /// Per-domain gradient cosine similarity of the base model.
    Conflict(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Synth { common, .. } => ("synth", common),
            Command::Pretrain(c) => ("pretrain", c),
            Command::Adapt { common, .. } => ("adapt", common),
            Command::Regenerate(c) => ("regenerate", c),
            Command::Evaluate(c) => ("evaluate", c),
            Command::Compare(c) => ("compare", c),
            Command::Stats(c) => ("stats", c),
            Command::Conflict(c) => ("conflict", c),
        }
    }
}

fn run(cmd: &Command, cfg: &RunConfig) -> error::Result<()> {
    match cmd {
        Command::Synth { spec, .. } => stages::synth(cfg, spec.as_deref()),
        Command::Pretrain(_) => stages::pretrain(cfg),
        Command::Adapt { domain, .. } => stages::adapt(cfg, domain.as_deref()),
        Command::Regenerate(_) => stages::regenerate(cfg),
        Command::Evaluate(_) => stages::evaluate_stage(cfg),
        Command::Compare(_) => stages::compare(cfg),
        Command::Stats(_) => stages::stats(cfg),
        Command::Conflict(_) => stages::conflict(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = cli.command.parts();
    let overrides = Overrides {
        set: common.set.clone(),
        seed: common.seed,
        out: common.out.clone(),
        preset: common.preset.clone(),
    };
    let result = RunConfig::load(common.config.as_deref(), &overrides).and_then(|cfg| run(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line(stage));
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
