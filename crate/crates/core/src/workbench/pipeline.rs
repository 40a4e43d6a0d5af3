//! Experiment steps shared by the command line and the tests.

use super::config::ExperimentConfig;
use super::embedding::init_token_embeddings;
use super::synthetic::SyntheticTask;
use super::Vocabulary;
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_run, QrelSet, Query, QuerySet, Retriever, RunReport};
use crate::lexical::{Bm25Params, InvertedIndex};
use crate::memory::{Corpus, MemoryMixture};
use crate::model::ModelConfig;
use crate::seeds;
use crate::trainer::{build_index, evaluate_target, plug_in_target, Retrievers, SourceTask, TextEncoder, Trainer};

/// Every corpus and query set of one experiment.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub source: SourceTask,
    /// Non-source corpora of the training mixture.
    pub memories: Vec<Corpus>,
    pub target: Corpus,
    pub test: QuerySet,
}

fn read_set(queries: &std::path::Path, qrels: &std::path::Path) -> Result<QuerySet> {
    Ok(QuerySet {
        queries: Query::read_jsonl(queries)?,
        qrels: QrelSet::read_tsv(qrels)?,
    })
}

impl TaskData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(TaskData {
            source: SourceTask {
                corpus: Corpus::read_jsonl(&cfg.source.corpus, &cfg.source_id)?,
                train: read_set(&cfg.source.train_queries, &cfg.source.train_qrels)?,
                dev: read_set(&cfg.source.dev_queries, &cfg.source.dev_qrels)?,
            },
            memories: cfg
                .memories
                .iter()
                .map(|m| Corpus::read_jsonl(&m.path, &m.id))
                .collect::<Result<_>>()?,
            target: Corpus::read_jsonl(&cfg.target.corpus, &cfg.target_id)?,
            test: read_set(&cfg.target.queries, &cfg.target.qrels)?,
        })
    }

    pub fn from_synthetic(task: SyntheticTask) -> Self {
        TaskData {
            source: SourceTask {
                corpus: task.source,
                train: task.train,
                dev: task.dev,
            },
            memories: task.memories,
            target: task.target,
            test: task.test,
        }
    }

    /// Source corpus followed by the memories.
    pub fn training_corpora(&self) -> impl Iterator<Item = &Corpus> {
        std::iter::once(&self.source.corpus).chain(&self.memories)
    }
}

/// Vocabulary over every corpus, target included, and the source queries.
pub fn build_vocabulary(data: &TaskData, max_size: usize) -> Vocabulary {
    let docs = data
        .training_corpora()
        .chain(std::iter::once(&data.target))
        .flat_map(|c| c.documents().iter().map(|d| d.full_text()));
    let queries = [&data.source.train, &data.source.dev]
        .into_iter()
        .flat_map(|s| s.queries.iter().map(|q| q.text.clone()));
    let texts: Vec<String> = docs.chain(queries).collect();
    Vocabulary::build(texts.iter().map(String::as_str), max_size)
}

pub fn model_config(cfg: &ExperimentConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    }
}

/// Freshly initialized retrievers, with the configured token table
/// initialisation applied to both.
pub fn initial_models(cfg: &ExperimentConfig, vocab: &Vocabulary, data: &TaskData) -> Result<Retrievers> {
    let mut models = Retrievers::new(&model_config(cfg, vocab), cfg.seed)?;
    if let Some(init) = &cfg.embedding_init {
        let corpora: Vec<&Corpus> = init
            .corpora
            .iter()
            .map(|id| {
                data.training_corpora()
                    .find(|c| c.id() == id)
                    .ok_or_else(|| Error::config("embedding_init.corpora", format!("`{id}` is not a training corpus")))
            })
            .collect::<Result<_>>()?;
        let Retrievers { end, aug } = &mut models;
        init_token_embeddings(
            &mut [end, aug],
            &corpora,
            vocab,
            init.weight,
            &mut seeds::substream(cfg.seed, seeds::EMBEDDING),
        )?;
    }
    Ok(models)
}

pub fn trainer<'a>(
    cfg: &ExperimentConfig,
    models: Retrievers,
    vocab: &'a Vocabulary,
    data: &'a TaskData,
) -> Result<Trainer<'a>> {
    let train = crate::trainer::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    Trainer::new(train, models, vocab, &data.source, data.memories.clone())
}

/// The training mixture embedded with `models.aug`.
pub fn training_memory(models: &Retrievers, vocab: &Vocabulary, data: &TaskData) -> Result<MemoryMixture> {
    build_index(data.training_corpora().cloned(), &TextEncoder::new(&models.aug, vocab))
}

/// Target-task results of one trained model pair.
#[derive(Clone, Debug)]
pub struct TargetResults {
    /// Source corpus swapped for the target corpus.
    pub plugged: RunReport,
    /// Training mixture unchanged.
    pub unplugged: RunReport,
}

pub fn evaluate_with_and_without_target(
    cfg: &ExperimentConfig,
    models: &Retrievers,
    vocab: &Vocabulary,
    data: &TaskData,
) -> Result<TargetResults> {
    let memory = training_memory(models, vocab, data)?;
    let plugged_memory = plug_in_target(&memory, data.source.corpus.id(), data.target.clone(), models, vocab)?;
    let k = cfg.train.k;
    let mode = cfg.train.index_mode;
    Ok(TargetResults {
        plugged: evaluate_target(models, vocab, &plugged_memory, &data.target, &data.test, k, mode)?,
        unplugged: evaluate_target(models, vocab, &memory, &data.target, &data.test, k, mode)?,
    })
}

/// Target NDCG@10 of a model pair without any augmentation.
pub fn evaluate_plain(models: &Retrievers, vocab: &Vocabulary, data: &TaskData) -> Result<RunReport> {
    let empty = MemoryMixture::new(models.aug.config().model_dim);
    evaluate_target(
        models,
        vocab,
        &empty,
        &data.target,
        &data.test,
        0,
        crate::memory::SearchMode::Exact,
    )
}

struct Bm25Retriever(InvertedIndex);

impl Retriever for Bm25Retriever {
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self
            .0
            .search_text(&query.text, k)
            .hits
            .into_iter()
            .map(|h| (h.key.doc_id, h.score))
            .collect())
    }
}

/// BM25 over the target corpus.
pub fn bm25_target(data: &TaskData) -> Result<RunReport> {
    let index = InvertedIndex::build(
        data.target.documents().iter().map(|d| (d.key(), d.full_text())),
        Bm25Params::default(),
    );
    evaluate_run(&Bm25Retriever(index), &data.test.queries, &data.test.qrels, 10)
}
