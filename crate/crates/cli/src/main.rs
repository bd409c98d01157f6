//! `exrec`: ingest data, train, recommend, evaluate and run ablations.

mod commands;
mod config;
mod exit;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::exit::{Coded, Outcome, INPUT};

#[derive(Parser, Debug)]
#[command(
    name = "exrec",
    version,
    about = "Diversity-aware exercise recommendation"
)]
struct Cli {
    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "EXREC_OUT", default_value = "exrec-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an interaction log and concept map and store them canonically.
    Ingest(IngestArgs),
    /// Generate a synthetic long-tailed dataset with its latent mastery.
    Synth,
    /// Train the mastery predictor and the re-ranker.
    Train(TrainArgs),
    /// Produce candidate sets and top-K lists for every student.
    Recommend(RecommendArgs),
    /// Score recommendations against the held-out windows.
    Evaluate(EvaluateArgs),
    /// Synthesize, train every arm and evaluate in one run.
    Pipeline(PipelineArgs),
    /// Print the effective configuration file.
    Config,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Interaction log CSV (overrides `data.log`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Exercise-to-concept CSV (overrides `data.kc_map`).
    #[arg(long)]
    kc_map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory [default: OUT/data].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train without the representation enhancer.
    #[arg(long)]
    no_enhancer: bool,
    /// Skip the re-ranker; recommendations follow filter order.
    #[arg(long)]
    no_rerank: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Det,
    Prob,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model directory [default: OUT/model].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scoring head [default: `rerank.mode`].
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// List length [default: `eval.k`].
    #[arg(short, long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Recommendation directory [default: OUT/recommend].
    #[arg(long)]
    recs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Use this dataset directory instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).code(INPUT)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();
    let data_dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.join("data"));
    match cli.command {
        Command::Ingest(a) => {
            if a.log.is_some() {
                cfg.log = a.log;
            }
            if a.kc_map.is_some() {
                cfg.kc_map = a.kc_map;
            }
            commands::ingest(&cfg, &out)
        }
        Command::Synth => commands::synth(&cfg, &out),
        Command::Train(a) => commands::train(
            &mut cfg,
            &out,
            &data_dir(&a.data),
            a.no_enhancer,
            a.no_rerank,
        ),
        Command::Recommend(a) => {
            let model = a.model.unwrap_or_else(|| out.join("model"));
            let mode = a.mode.map(|m| match m {
                Mode::Det => exrec::reranker::ScoreMode::Deterministic,
                Mode::Prob => exrec::reranker::ScoreMode::Probabilistic,
            });
            commands::recommend(&out, &data_dir(&a.data), &model, mode, a.k)
        }
        Command::Evaluate(a) => {
            let recs = a.recs.unwrap_or_else(|| out.join("recommend"));
            commands::evaluate(&out, &data_dir(&a.data), &recs)
        }
        Command::Pipeline(a) => commands::pipeline(&cfg, &out, a.data.as_deref()),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
