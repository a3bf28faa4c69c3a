//! `probex`: zoo generation, metanet training, routing, evaluation, and
//! equivalence checks from the command line.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probex_core::pipeline::{MetanetKind, TaskKind};
use probex_core::zoo::Split;

use run::{CheckFailed, Usage};

#[derive(Debug, Parser)]
#[command(name = "probex", version, about = "Learning from model weights with probing experts")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "PROBEX_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fine-tune a population of target networks and save it as a zoo.
    GenerateZoo(GenerateArgs),
    /// Train a metanet (or a routed mixture of experts) on a zoo.
    Train(TrainArgs),
    /// Score a trained run on one split of a zoo.
    Eval(EvalArgs),
    /// Cluster a zoo into trees and route every model.
    Route(RouteArgs),
    /// Check the dense ↔ probing-network constructions on random instances.
    CheckEquivalence(CheckArgs),
    /// Parameter counts of ProbeX against the dense linear expert.
    Params(ParamsArgs),
    /// Train on a Model Tree and a Model Forest and compare test accuracy.
    TreeVsForest(TreeForestArgs),
}

/// Population layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tree,
    Forest,
    Multitree(usize),
    Align,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "tree" => Ok(Mode::Tree),
        "forest" => Ok(Mode::Forest),
        "align" => Ok(Mode::Align),
        _ => {
            let k = s
                .strip_prefix("multitree:")
                .ok_or_else(|| format!("unknown mode `{s}` (tree, forest, multitree:K, align)"))?;
            match k.parse::<usize>() {
                Ok(k) if k > 0 => Ok(Mode::Multitree(k)),
                _ => Err(format!("multitree needs a positive tree count, got `{k}`")),
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    /// Population size; models per class in `align` mode.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    model: Option<MetanetKind>,
    #[arg(long, value_parser = parse_task, default_value = "classify")]
    task: TaskKind,
    /// Class embedding table (JSON object of name → vector).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Comma-separated layer names.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<String>>,
    /// Train one metanet per listed layer and keep the best on validation.
    #[arg(long)]
    select_layer: bool,
    /// Route models to per-tree experts.
    #[arg(long)]
    moe: bool,
    /// Tree count for `--moe`; the largest merge gap decides by default.
    #[arg(long)]
    router_k: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    zoo: Option<PathBuf>,
    /// Output directory of `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
    /// Representation for kNN, one-class, and retrieval reports of aligned runs.
    #[arg(long, value_enum, default_value_t = RepKind::Metanet)]
    rep: RepKind,
    /// Layer flattened by `--rep raw`; defaults to the run's first layer.
    #[arg(long)]
    raw_layer: Option<String>,
    /// Neighbours per class in the kNN and one-class scores.
    #[arg(long, default_value_t = 5)]
    knn: usize,
    /// Also rank the `N` nearest zoo models for every evaluated model.
    #[arg(long)]
    retrieve: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RepKind {
    /// Metanet outputs.
    Metanet,
    /// Flattened weights of one layer.
    Raw,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long, default_value = "fc1")]
    layer: String,
    /// Cluster count; the largest merge gap decides by default.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// `d_W,d_H,d_Y,r_U,r_V,r_T`.
    #[arg(long, default_value = "6,6,6,3,3,3")]
    dims: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// `d_W,d_H,d_Y,r` or `d_W,d_H,d_Y,r_U,r_V,r_T`.
    #[arg(long)]
    dims: String,
}

#[derive(Debug, Args)]
pub struct TreeForestArgs {
    #[arg(long, default_value_t = 430)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the CSV and run record; the CSV is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_kind(s: &str) -> Result<MetanetKind, String> {
    s.parse().map_err(|e: probex_core::Error| e.to_string())
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: probex_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: probex_core::Error| e.to_string())
}

/// 1 for failed checks, 3 for numeric failures, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<probex_core::Error>() {
            return match e {
                probex_core::Error::Numeric { .. } | probex_core::Error::Degenerate(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::GenerateZoo(a) => commands::generate_zoo(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Route(a) => commands::route(a),
        Command::CheckEquivalence(a) => commands::check_equivalence(a),
        Command::Params(a) => commands::params(a),
        Command::TreeVsForest(a) => commands::tree_vs_forest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!(parse_mode("tree"), Ok(Mode::Tree));
        assert_eq!(parse_mode("multitree:4"), Ok(Mode::Multitree(4)));
        assert!(parse_mode("multitree:0").is_err());
        assert!(parse_mode("grove").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let numeric: anyhow::Error = probex_core::Error::Numeric { tensor: "T".into() }.into();
        assert_eq!(exit_code(&numeric), 3);
        assert_eq!(exit_code(&numeric.context("training")), 3);
        let config: anyhow::Error = probex_core::Error::Config("x".into()).into();
        assert_eq!(exit_code(&config), 2);
        assert_eq!(exit_code(&CheckFailed("x".into()).into()), 1);
        assert_eq!(exit_code(&run::usage("x")), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
