use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use moma::memory::SearchMode;
use moma::workbench::{commands, version_string, ExperimentConfig};

#[derive(Parser)]
#[command(name = "moma", version = version_string(), about = "Mixture-of-memory augmented dense retrieval at desk scale")]
struct Cli {
    /// Experiment config (JSON). `gen-task` falls back to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `exact` or `approx`.
    #[arg(long, global = true)]
    index_mode: Option<SearchMode>,
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Augmentation documents per query; 0 gives a plain dual encoder.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Attention-selected pseudo-positives per query.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task and an experiment config pointing at it.
    GenTask,
    /// Build the vocabulary and train both retrievers against BM25 negatives.
    Warmup,
    /// Run the training episodes from the warmed models.
    Train,
    /// Re-embed the training mixture with the trained augmenter.
    BuildIndex,
    /// Replace one corpus of the mixture without touching model parameters.
    SwapMemory {
        #[arg(long)]
        remove: String,
        /// BEIR corpus JSONL to plug in.
        #[arg(long)]
        add: PathBuf,
        /// Corpus id for the added documents; defaults to the target id.
        #[arg(long)]
        id: Option<String>,
        /// Mixture to start from; defaults to `<out>/memory`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Rank the target corpus for every test query.
    Retrieve {
        /// Mixture for augmentation; defaults to the swapped one if present.
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Score a run (or a fresh retrieval) with NDCG@10.
    Evaluate {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Export per-document attention mass for the test queries.
    InspectAttention {
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// BM25 over the target corpus.
    Bm25Baseline,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None if matches!(cli.command, Command::GenTask) => ExperimentConfig::default(),
        None => bail!("--config is required for this command"),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(mode) = cli.index_mode {
        cfg.train.index_mode = mode;
    }
    if let Some(e) = cli.episodes {
        cfg.train.episodes = e;
    }
    if let Some(k) = cli.k {
        cfg.train.k = k;
    }
    if let Some(n) = cli.n {
        cfg.train.n = n;
    }
    match cli.command {
        Command::GenTask => {
            cfg.synthetic.validate()?;
            cfg.train.validate()?;
            cfg.model.validate()?;
        }
        _ => cfg.validate()?,
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let cfg = load_config(&cli)?;
    let stamp = cfg.stamp();
    let summary = match &cli.command {
        Command::GenTask => commands::gen_task(&cfg)?,
        Command::Warmup => commands::warmup(&cfg, &stamp)?,
        Command::Train => commands::train(&cfg, &stamp)?,
        Command::BuildIndex => commands::build_memory_index(&cfg, &stamp)?,
        Command::SwapMemory { remove, add, id, from } => {
            commands::swap_memory(&cfg, &stamp, remove, add, id.as_deref(), from.as_deref())?
        }
        Command::Retrieve { memory } => commands::retrieve(&cfg, &stamp, memory.as_deref())?,
        Command::Evaluate { run, memory } => commands::evaluate(&cfg, &stamp, run.as_deref(), memory.as_deref())?,
        Command::InspectAttention { memory, limit } => {
            commands::inspect_attention(&cfg, &stamp, memory.as_deref(), *limit)?
        }
        Command::Bm25Baseline => commands::bm25_baseline(&cfg, &stamp)?,
    };
    Ok(summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
