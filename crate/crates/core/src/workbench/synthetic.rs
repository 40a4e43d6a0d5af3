//! Topic-clustered stand-in for a source task, two memory corpora and a
//! held-out target task.
//!
//! Every topic owns a disjoint set of core words, and neighbouring topics
//! grouped into families share a few family words. Documents mix topic words
//! with shared background words; queries take a few topic words of one
//! document of their topic. A document is relevant to a query
//! when both share a topic and the document lives in the query's corpus.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{QrelSet, Query, QuerySet};
use crate::memory::{Corpus, Document};
use crate::seeds;

pub const SOURCE_CORPUS: &str = "source";
pub const WIKI_CORPUS: &str = "wiki";
pub const MESH_CORPUS: &str = "mesh";
pub const TARGET_CORPUS: &str = "target";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub source_topics: usize,
    pub target_topics: usize,
    pub core_words: usize,
    /// Consecutive topics sharing family words.
    pub family_size: usize,
    pub family_words: usize,
    /// Share of family words among the non-background words of a document.
    pub family_rate: f64,
    pub background_words: usize,
    pub doc_len: usize,
    pub query_len: usize,
    /// Share of background words in source and target documents.
    pub noise_rate: f64,
    /// Share of background words in memory documents.
    pub memory_noise_rate: f64,
    pub source_docs_per_topic: usize,
    pub target_docs_per_topic: usize,
    /// The broad memory covers every topic.
    pub wiki_docs_per_topic: usize,
    /// The specialised memory covers the target topics plus a few source topics.
    pub mesh_docs_per_topic: usize,
    pub mesh_source_topics: usize,
    pub train_queries_per_topic: usize,
    pub dev_queries_per_topic: usize,
    pub test_queries_per_topic: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            source_topics: 96,
            target_topics: 8,
            core_words: 8,
            family_size: 2,
            family_words: 12,
            family_rate: 0.1,
            background_words: 200,
            doc_len: 12,
            query_len: 3,
            noise_rate: 0.4,
            memory_noise_rate: 0.3,
            source_docs_per_topic: 4,
            target_docs_per_topic: 10,
            wiki_docs_per_topic: 3,
            mesh_docs_per_topic: 20,
            mesh_source_topics: 4,
            train_queries_per_topic: 3,
            dev_queries_per_topic: 1,
            test_queries_per_topic: 6,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("source_topics", self.source_topics),
            ("target_topics", self.target_topics),
            ("core_words", self.core_words),
            ("doc_len", self.doc_len),
            ("query_len", self.query_len),
            ("source_docs_per_topic", self.source_docs_per_topic),
            ("target_docs_per_topic", self.target_docs_per_topic),
            ("train_queries_per_topic", self.train_queries_per_topic),
            ("test_queries_per_topic", self.test_queries_per_topic),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.family_size == 0 {
            return Err(Error::config("family_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.family_rate) {
            return Err(Error::config("family_rate", "must lie in [0, 1)"));
        }
        if self.family_rate > 0.0 && self.family_words == 0 {
            return Err(Error::config("family_words", "family_rate needs family words"));
        }
        for (field, v) in [("noise_rate", self.noise_rate), ("memory_noise_rate", self.memory_noise_rate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
            if v > 0.0 && self.background_words == 0 {
                return Err(Error::config("background_words", "noise needs background words"));
            }
        }
        if self.mesh_source_topics > self.source_topics {
            return Err(Error::config("mesh_source_topics", "exceeds source_topics"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub source: Corpus,
    pub memories: Vec<Corpus>,
    pub target: Corpus,
    pub train: QuerySet,
    pub dev: QuerySet,
    pub test: QuerySet,
}

/// Paths of a task written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFiles {
    pub source_corpus: PathBuf,
    pub memory_corpora: Vec<(String, PathBuf)>,
    pub train_queries: PathBuf,
    pub train_qrels: PathBuf,
    pub dev_queries: PathBuf,
    pub dev_qrels: PathBuf,
    pub target_corpus: PathBuf,
    pub test_queries: PathBuf,
    pub test_qrels: PathBuf,
}

fn core_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

fn family_word(family: usize, j: usize) -> String {
    format!("f{family}w{j}")
}

struct Gen<'a, R: Rng> {
    p: &'a SyntheticParams,
    rng: R,
}

impl<R: Rng> Gen<'_, R> {
    fn doc_words(&mut self, topic: usize, noise: f64) -> Vec<String> {
        (0..self.p.doc_len)
            .map(|_| {
                if self.rng.random::<f64>() < noise {
                    format!("bg{}", self.rng.random_range(0..self.p.background_words))
                } else if self.rng.random::<f64>() < self.p.family_rate {
                    family_word(topic / self.p.family_size, self.rng.random_range(0..self.p.family_words))
                } else {
                    core_word(topic, self.rng.random_range(0..self.p.core_words))
                }
            })
            .collect()
    }

    fn corpus(&mut self, id: &str, prefix: &str, topics: &[usize], per_topic: usize, noise: f64) -> Result<(Corpus, Vec<usize>)> {
        let mut docs = Vec::new();
        let mut labels = Vec::new();
        for &t in topics {
            for j in 0..per_topic {
                docs.push(Document {
                    doc_id: format!("{prefix}-{t}-{j}"),
                    corpus_id: id.to_string(),
                    title: None,
                    text: self.doc_words(t, noise).join(" "),
                });
                labels.push(t);
            }
        }
        Ok((Corpus::new(id, docs)?, labels))
    }

    /// Queries built from topic words of a random document of each topic.
    fn queries(&mut self, prefix: &str, corpus: &Corpus, labels: &[usize], topics: &[usize], per_topic: usize) -> QuerySet {
        let mut queries = Vec::new();
        let mut qrels = QrelSet::default();
        for &t in topics {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == t).collect();
            for j in 0..per_topic {
                let seed_doc = &corpus.documents()[members[self.rng.random_range(0..members.len())]];
                let core = format!("t{t}w");
                let family = format!("f{}w", t / self.p.family_size);
                let mut words: Vec<&str> = seed_doc
                    .text
                    .split(' ')
                    .filter(|w| w.starts_with(&core) || w.starts_with(&family))
                    .collect();
                words.sort_unstable();
                words.dedup();
                words.shuffle(&mut self.rng);
                let mut q: Vec<String> = words.into_iter().take(self.p.query_len).map(String::from).collect();
                while q.len() < self.p.query_len {
                    q.push(core_word(t, self.rng.random_range(0..self.p.core_words)));
                }
                let id = format!("{prefix}-{t}-{j}");
                for &m in &members {
                    qrels.insert(id.clone(), corpus.documents()[m].doc_id.clone(), 1);
                }
                queries.push(Query { id, text: q.join(" ") });
            }
        }
        QuerySet { queries, qrels }
    }
}

impl SyntheticTask {
    pub fn generate(params: &SyntheticParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut g = Gen {
            p: params,
            rng: seeds::substream(seed, seeds::TASK_GEN),
        };
        let source_topics: Vec<usize> = (0..params.source_topics).collect();
        let target_topics: Vec<usize> = (params.source_topics..params.source_topics + params.target_topics).collect();
        let all_topics: Vec<usize> = (0..params.source_topics + params.target_topics).collect();
        let mesh_topics: Vec<usize> = source_topics[..params.mesh_source_topics]
            .iter()
            .chain(&target_topics)
            .copied()
            .collect();

        let (source, source_labels) = g.corpus(SOURCE_CORPUS, "s", &source_topics, params.source_docs_per_topic, params.noise_rate)?;
        let (wiki, _) = g.corpus(WIKI_CORPUS, "w", &all_topics, params.wiki_docs_per_topic, params.memory_noise_rate)?;
        let (mesh, _) = g.corpus(MESH_CORPUS, "m", &mesh_topics, params.mesh_docs_per_topic, params.memory_noise_rate)?;
        let (target, target_labels) = g.corpus(TARGET_CORPUS, "t", &target_topics, params.target_docs_per_topic, params.noise_rate)?;

        let train = g.queries("train", &source, &source_labels, &source_topics, params.train_queries_per_topic);
        let dev = g.queries("dev", &source, &source_labels, &source_topics, params.dev_queries_per_topic);
        let test = g.queries("test", &target, &target_labels, &target_topics, params.test_queries_per_topic);
        Ok(SyntheticTask {
            source,
            memories: vec![wiki, mesh],
            target,
            train,
            dev,
            test,
        })
    }

    /// Every text of the task, for vocabulary building.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        std::iter::once(&self.source)
            .chain(&self.memories)
            .chain(std::iter::once(&self.target))
            .flat_map(|c| c.documents().iter().map(|d| d.text.as_str()))
            .chain(
                [&self.train, &self.dev, &self.test]
                    .into_iter()
                    .flat_map(|s| s.queries.iter().map(|q| q.text.as_str())),
            )
    }

    pub fn write(&self, dir: &Path) -> Result<TaskFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = TaskFiles {
            source_corpus: dir.join("source-corpus.jsonl"),
            memory_corpora: self
                .memories
                .iter()
                .map(|c| (c.id().to_string(), dir.join(format!("{}-corpus.jsonl", c.id()))))
                .collect(),
            train_queries: dir.join("train-queries.jsonl"),
            train_qrels: dir.join("train-qrels.tsv"),
            dev_queries: dir.join("dev-queries.jsonl"),
            dev_qrels: dir.join("dev-qrels.tsv"),
            target_corpus: dir.join("target-corpus.jsonl"),
            test_queries: dir.join("test-queries.jsonl"),
            test_qrels: dir.join("test-qrels.tsv"),
        };
        self.source.write_jsonl(&files.source_corpus)?;
        for (c, (_, path)) in self.memories.iter().zip(&files.memory_corpora) {
            c.write_jsonl(path)?;
        }
        self.target.write_jsonl(&files.target_corpus)?;
        for (set, q, r) in [
            (&self.train, &files.train_queries, &files.train_qrels),
            (&self.dev, &files.dev_queries, &files.dev_qrels),
            (&self.test, &files.test_queries, &files.test_qrels),
        ] {
            Query::write_jsonl(&set.queries, q)?;
            set.qrels.write_tsv(r)?;
        }
        Ok(files)
    }

    pub fn read(files: &TaskFiles) -> Result<Self> {
        let read_set = |q: &Path, r: &Path| -> Result<QuerySet> {
            Ok(QuerySet {
                queries: Query::read_jsonl(q)?,
                qrels: QrelSet::read_tsv(r)?,
            })
        };
        Ok(SyntheticTask {
            source: Corpus::read_jsonl(&files.source_corpus, SOURCE_CORPUS)?,
            memories: files
                .memory_corpora
                .iter()
                .map(|(id, p)| Corpus::read_jsonl(p, id))
                .collect::<Result<_>>()?,
            target: Corpus::read_jsonl(&files.target_corpus, TARGET_CORPUS)?,
            train: read_set(&files.train_queries, &files.train_qrels)?,
            dev: read_set(&files.dev_queries, &files.dev_qrels)?,
            test: read_set(&files.test_queries, &files.test_qrels)?,
        })
    }
}
