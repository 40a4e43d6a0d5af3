//! One function per CLI subcommand. Each reads the experiment config plus
//! files produced by earlier commands and writes only under the output
//! directory. The returned string is a one-line summary for the terminal.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{
    load_retrievers, read_json, read_jsonl, save_retrievers, stamp_text_file, write_json, write_jsonl,
};
use super::config::{ArtifactStamp, ExperimentConfig, MemoryPath, SourcePaths, TargetPaths};
use super::pipeline::{self, TaskData};
use super::synthetic::SyntheticTask;
use super::Vocabulary;
use crate::attention::{aggregate_fidatt, Aggregation, FidAttScores};
use crate::error::{Error, Result};
use crate::evalkit::{
    evaluate_run, track_dynamics, write_curves_csv, Query, RankedDoc, Retriever, RunReport, SOURCE_OTHER,
    SOURCE_RELEVANT,
};
use crate::memory::{Corpus, DocKey, MemoryMixture};
use crate::trainer::{build_index, MomaRetriever, Retrievers, TextEncoder};

/// Well-known locations under the output directory.
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout {
            out: cfg.output_dir.clone(),
        }
    }

    pub fn task_dir(&self) -> PathBuf {
        self.out.join("task")
    }
    pub fn experiment(&self) -> PathBuf {
        self.out.join("experiment.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.out.join("vocab.json")
    }
    pub fn warmup_dir(&self) -> PathBuf {
        self.out.join("warmup")
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }
    pub fn memory_dir(&self) -> PathBuf {
        self.out.join("memory")
    }
    pub fn swapped_memory_dir(&self) -> PathBuf {
        self.out.join("memory-swapped")
    }
    pub fn run(&self) -> PathBuf {
        self.out.join("run.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.json")
    }

    /// The swapped mixture when `swap-memory` has run, else the training one.
    pub fn default_memory(&self) -> PathBuf {
        let swapped = self.swapped_memory_dir();
        if swapped.join("manifest.json").exists() {
            swapped
        } else {
            self.memory_dir()
        }
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

/// Writes the synthetic task under `out/task` and an experiment config
/// pointing at it to `out/experiment.json`.
pub fn gen_task(cfg: &ExperimentConfig) -> Result<String> {
    let layout = Layout::new(cfg);
    let task = SyntheticTask::generate(&cfg.synthetic, cfg.seed)?;
    let files = task.write(&layout.task_dir())?;
    let rel = |p: &Path| relative_to(p, &layout.out);
    let generated = ExperimentConfig {
        source_id: task.source.id().to_string(),
        source: SourcePaths {
            corpus: rel(&files.source_corpus),
            train_queries: rel(&files.train_queries),
            train_qrels: rel(&files.train_qrels),
            dev_queries: rel(&files.dev_queries),
            dev_qrels: rel(&files.dev_qrels),
        },
        memories: files
            .memory_corpora
            .iter()
            .map(|(id, p)| MemoryPath {
                id: id.clone(),
                path: rel(p),
            })
            .collect(),
        target_id: task.target.id().to_string(),
        target: TargetPaths {
            corpus: rel(&files.target_corpus),
            queries: rel(&files.test_queries),
            qrels: rel(&files.test_qrels),
        },
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    };
    generated.save(&layout.experiment())?;
    Ok(format!(
        "wrote {} source, {} target and {} memory documents; config at {}",
        task.source.len(),
        task.target.len(),
        task.memories.iter().map(Corpus::len).sum::<usize>(),
        layout.experiment().display()
    ))
}

fn load_vocab(layout: &Layout) -> Result<Vocabulary> {
    let path = layout.vocab();
    if !path.exists() {
        return Err(Error::contract(format!("{} is missing; run `warmup` first", path.display())));
    }
    Ok(read_json::<Vocabulary>(&path)?.data)
}

fn load_models(dir: &Path, producer: &str) -> Result<Retrievers> {
    if !dir.join("end.json").exists() {
        return Err(Error::contract(format!("{} has no models; run `{producer}` first", dir.display())));
    }
    load_retrievers(dir)
}

/// Builds the vocabulary, initializes both retrievers and trains them
/// against BM25 negatives.
pub fn warmup(cfg: &ExperimentConfig, stamp: &ArtifactStamp) -> Result<String> {
    let layout = Layout::new(cfg);
    let data = TaskData::load(cfg)?;
    let vocab = pipeline::build_vocabulary(&data, cfg.vocab_size);
    write_json(&layout.vocab(), stamp, &vocab)?;
    let models = pipeline::initial_models(cfg, &vocab, &data)?;
    let mut trainer = pipeline::trainer(cfg, models, &vocab, &data)?;
    trainer.warmup()?;
    let dev = trainer.dev_ndcg()?;
    let dir = layout.warmup_dir();
    save_retrievers(&dir, stamp, trainer.models())?;
    write_jsonl(&dir.join("metrics.jsonl"), stamp, trainer.metrics())?;
    write_json(&dir.join("timing.json"), stamp, &trainer.timings().report())?;
    Ok(format!(
        "warm-up: {} steps, {} vocabulary entries, dev NDCG@10 {dev:.4}",
        trainer.metrics().len(),
        vocab.len()
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub episode: usize,
    pub dev_ndcg: f64,
}

/// Runs the configured episodes from the warmed models and keeps the
/// checkpoint with the best development score.
pub fn train(cfg: &ExperimentConfig, stamp: &ArtifactStamp) -> Result<String> {
    let layout = Layout::new(cfg);
    let data = TaskData::load(cfg)?;
    let vocab = load_vocab(&layout)?;
    let models = load_models(&layout.warmup_dir(), "warmup")?;
    let mut trainer = pipeline::trainer(cfg, models, &vocab, &data)?;
    trainer.prepare()?;
    for _ in 0..cfg.train.episodes {
        trainer.run_episode()?;
    }
    let best = trainer.best().ok_or_else(|| Error::contract("no episode finished"))?.clone();
    let out = &layout.out;
    save_retrievers(&layout.models_dir(), stamp, &best.models)?;
    write_json(
        &layout.models_dir().join("checkpoint.json"),
        stamp,
        &CheckpointInfo {
            episode: best.episode,
            dev_ndcg: best.dev_ndcg,
        },
    )?;
    write_jsonl(&out.join("metrics.jsonl"), stamp, trainer.metrics())?;
    write_json(&out.join("episodes.json"), stamp, &trainer.reports())?;
    let rows: Vec<_> = trainer.fidatt().iter().flat_map(FidAttScores::rows).collect();
    write_jsonl(&out.join("fidatt.jsonl"), stamp, &rows)?;
    let classes: Vec<String> = [SOURCE_RELEVANT, SOURCE_OTHER]
        .into_iter()
        .map(String::from)
        .chain(data.memories.iter().map(|c| c.id().to_string()))
        .collect();
    let curves_path = out.join("curves.csv");
    write_curves_csv(&track_dynamics(trainer.dynamics(), &classes), &curves_path)?;
    stamp_text_file(&curves_path, stamp)?;
    write_json(&out.join("timing.json"), stamp, &trainer.timings().report())?;
    let memory = pipeline::training_memory(&best.models, &vocab, &data)?;
    save_memory(&memory, &layout.memory_dir(), stamp)?;
    let coverage: Vec<String> = trainer.reports().iter().map(|r| format!("{:.3}", r.coverage)).collect();
    Ok(format!(
        "trained {} episodes; best episode {} with dev NDCG@10 {:.4}; coverage per episode [{}]",
        trainer.reports().len(),
        best.episode,
        best.dev_ndcg,
        coverage.join(", ")
    ))
}

fn save_memory(memory: &MemoryMixture, dir: &Path, stamp: &ArtifactStamp) -> Result<()> {
    memory.save(dir)?;
    write_json(&dir.join("stamp.json"), stamp, &memory.corpus_ids().collect::<Vec<_>>())
}

/// Re-embeds the training mixture with the trained augmenter.
pub fn build_memory_index(cfg: &ExperimentConfig, stamp: &ArtifactStamp) -> Result<String> {
    let layout = Layout::new(cfg);
    let data = TaskData::load(cfg)?;
    let vocab = load_vocab(&layout)?;
    let models = load_models(&layout.models_dir(), "train")?;
    let memory = pipeline::training_memory(&models, &vocab, &data)?;
    if cfg.train.index_mode == crate::memory::SearchMode::Approx {
        memory.prepare_approx();
    }
    save_memory(&memory, &layout.memory_dir(), stamp)?;
    Ok(format!(
        "indexed {} documents from [{}] into {}",
        memory.len(),
        memory.corpus_ids().collect::<Vec<_>>().join(", "),
        layout.memory_dir().display()
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SwapRecord {
    pub removed: String,
    pub added: String,
    pub documents: usize,
    pub checksums_before: (String, String),
    pub checksums_after: (String, String),
}

/// Replaces corpus `remove` of a saved mixture with the corpus at `add`.
pub fn swap_memory(
    cfg: &ExperimentConfig,
    stamp: &ArtifactStamp,
    remove: &str,
    add: &Path,
    add_id: Option<&str>,
    from: Option<&Path>,
) -> Result<String> {
    let layout = Layout::new(cfg);
    let vocab = load_vocab(&layout)?;
    let models = load_models(&layout.models_dir(), "train")?;
    let from = from.map_or_else(|| layout.memory_dir(), Path::to_path_buf);
    let mut memory = MemoryMixture::load(&from)?;
    let id = add_id.unwrap_or(&cfg.target_id);
    let corpus = Corpus::read_jsonl(add, id)?;
    let before = models.checksums();
    memory.swap_corpus(remove, corpus, &TextEncoder::new(&models.aug, &vocab))?;
    let after = models.checksums();
    if before != after {
        return Err(Error::contract("model parameters changed during a memory swap"));
    }
    let into = layout.swapped_memory_dir();
    save_memory(&memory, &into, stamp)?;
    let record = SwapRecord {
        removed: remove.to_string(),
        added: id.to_string(),
        documents: memory.len(),
        checksums_before: before,
        checksums_after: after,
    };
    write_json(&into.join("swap.json"), stamp, &record)?;
    Ok(format!(
        "swapped `{remove}` for `{id}` into {}; end checksum {} and augmenter checksum {} unchanged",
        into.display(),
        record.checksums_after.0,
        record.checksums_after.1
    ))
}

/// One ranked target query as written by `retrieve`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub query_id: String,
    pub ranking: Vec<RankedDoc>,
    #[serde(default)]
    pub augmentation: Vec<DocKey>,
}

struct Loaded {
    data: TaskData,
    vocab: Vocabulary,
    models: Retrievers,
    memory: MemoryMixture,
    target: MemoryMixture,
}

fn load_for_retrieval(cfg: &ExperimentConfig, memory_dir: Option<&Path>) -> Result<Loaded> {
    let layout = Layout::new(cfg);
    let data = TaskData::load(cfg)?;
    let vocab = load_vocab(&layout)?;
    let models = load_models(&layout.models_dir(), "train")?;
    let memory = if cfg.train.k == 0 {
        MemoryMixture::new(models.aug.config().model_dim)
    } else {
        MemoryMixture::load(&memory_dir.map_or_else(|| layout.default_memory(), Path::to_path_buf))?
    };
    let target = build_index([data.target.clone()], &TextEncoder::new(&models.end, &vocab))?;
    Ok(Loaded {
        data,
        vocab,
        models,
        memory,
        target,
    })
}

impl Loaded {
    fn retriever(&self, cfg: &ExperimentConfig) -> MomaRetriever<'_> {
        MomaRetriever {
            end: &self.models.end,
            aug: &self.models.aug,
            vocab: &self.vocab,
            memory: &self.memory,
            target: &self.target,
            target_corpus: self.data.target.id().to_string(),
            k: cfg.train.k,
            mode: cfg.train.index_mode,
        }
    }
}

fn ranked_rows(cfg: &ExperimentConfig, loaded: &Loaded, depth: usize) -> Result<Vec<RunRow>> {
    let retriever = loaded.retriever(cfg);
    loaded
        .data
        .test
        .queries
        .iter()
        .map(|q| {
            let ranking = retriever
                .rank(q, depth)?
                .into_iter()
                .map(|(doc_id, score)| RankedDoc { doc_id, score })
                .collect();
            Ok(RunRow {
                query_id: q.id.clone(),
                ranking,
                augmentation: retriever.augmentation(&q.text)?,
            })
        })
        .collect()
}

/// Ranks the target corpus for every test query.
pub fn retrieve(cfg: &ExperimentConfig, stamp: &ArtifactStamp, memory_dir: Option<&Path>) -> Result<String> {
    let layout = Layout::new(cfg);
    let loaded = load_for_retrieval(cfg, memory_dir)?;
    let rows = ranked_rows(cfg, &loaded, 100)?;
    write_jsonl(&layout.run(), stamp, &rows)?;
    Ok(format!("ranked {} queries into {}", rows.len(), layout.run().display()))
}

struct FixedRun(std::collections::HashMap<String, Vec<RankedDoc>>);

impl Retriever for FixedRun {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self
            .0
            .get(&query.id)
            .map(|r| r.iter().take(k).map(|d| (d.doc_id.clone(), d.score)).collect())
            .unwrap_or_default())
    }
}

/// NDCG@10 on the target task, either of a saved run or of a fresh
/// retrieval with the trained models.
pub fn evaluate(
    cfg: &ExperimentConfig,
    stamp: &ArtifactStamp,
    run: Option<&Path>,
    memory_dir: Option<&Path>,
) -> Result<String> {
    let layout = Layout::new(cfg);
    let report = match run {
        Some(path) => {
            let test = TaskData::load(cfg)?.test;
            let rows: Vec<RunRow> = read_jsonl(path)?;
            let fixed = FixedRun(rows.into_iter().map(|r| (r.query_id, r.ranking)).collect());
            evaluate_run(&fixed, &test.queries, &test.qrels, 10)?
        }
        None => {
            let loaded = load_for_retrieval(cfg, memory_dir)?;
            let mut report = crate::trainer::evaluate_target(
                &loaded.models,
                &loaded.vocab,
                &loaded.memory,
                &loaded.data.target,
                &loaded.data.test,
                cfg.train.k,
                cfg.train.index_mode,
            )?;
            report.timings = None;
            report
        }
    };
    write_json(&layout.report(), stamp, &report)?;
    Ok(summary("evaluation", &report, &layout.report()))
}

fn summary(what: &str, report: &RunReport, path: &Path) -> String {
    format!(
        "{what}: mean NDCG@10 {:.4} over {} queries; report at {}",
        report.mean_ndcg,
        report.evaluated,
        path.display()
    )
}

/// Per-document attention mass of every test query's augmentation set.
pub fn inspect_attention(
    cfg: &ExperimentConfig,
    stamp: &ArtifactStamp,
    memory_dir: Option<&Path>,
    limit: Option<usize>,
) -> Result<String> {
    let layout = Layout::new(cfg);
    let loaded = load_for_retrieval(cfg, memory_dir)?;
    let episode = read_json::<CheckpointInfo>(&layout.models_dir().join("checkpoint.json"))
        .map(|c| c.data.episode)
        .unwrap_or(0);
    let retriever = loaded.retriever(cfg);
    let queries = &loaded.data.test.queries;
    let scores: Vec<FidAttScores> = queries
        .iter()
        .take(limit.unwrap_or(queries.len()))
        .map(|q| {
            let fused = retriever.fused_query(&q.text)?;
            aggregate_fidatt(&fused.record, &fused.augmentation, &q.id, episode, Aggregation::Sum)
        })
        .collect::<Result<_>>()?;
    let path = layout.out.join("attention.jsonl");
    write_jsonl(&path, stamp, &scores)?;
    let mean_query = scores.iter().map(|s| s.query_mass).sum::<f64>() / scores.len().max(1) as f64;
    Ok(format!(
        "attention for {} queries in {}; mean mass on the query segment {mean_query:.3}",
        scores.len(),
        path.display()
    ))
}

/// BM25 over the target corpus.
pub fn bm25_baseline(cfg: &ExperimentConfig, stamp: &ArtifactStamp) -> Result<String> {
    let layout = Layout::new(cfg);
    let data = TaskData::load(cfg)?;
    let report = pipeline::bm25_target(&data)?;
    let path = layout.out.join("bm25-report.json");
    write_json(&path, stamp, &report)?;
    Ok(summary("BM25", &report, &path))
}
