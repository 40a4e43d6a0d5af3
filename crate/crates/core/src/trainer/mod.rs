//! BM25 warm-up followed by episodes of joint end-retriever and augmenter
//! training over a memory mixture.

mod batches;
mod config;
mod evaluate;
mod example;
mod retrieval;

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use batches::build_batches;
pub use config::TrainConfig;
pub use evaluate::{evaluate_target, plug_in_target};
pub use example::{
    batch_gradients, example_gradients, example_loss, example_loss_on, train_step, ExampleRole, TrainingExample,
};
pub use retrieval::{build_index, stored_tokens, FusedQuery, MomaRetriever, TextEncoder};

use crate::attention::{aggregate_fidatt, select_pseudo_positives, Aggregation, FidAttScores};
use crate::error::{Error, Result};
use crate::evalkit::{
    classify_doc, evaluate_run, AugmentedDoc, EpisodeLog, Phase, QueryAugmentation, QuerySet, Timings,
};
use crate::lexical::{terms, Bm25Params, InvertedIndex};
use crate::memory::{attribution_stats, AttributionStats, Corpus, DocKey, MemoryMixture, SearchMode};
use crate::model::{Model, ModelConfig};
use crate::numerics::AdamW;
use crate::seeds;
use crate::workbench::Vocabulary;

/// The end retriever and the augmenter, with separate weights.
#[derive(Clone, Debug)]
pub struct Retrievers {
    pub end: Model,
    pub aug: Model,
}

impl Retrievers {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Retrievers {
            end: Model::new(config.clone(), &mut seeds::indexed(seed, seeds::INIT, 0))?,
            aug: Model::new(config.clone(), &mut seeds::indexed(seed, seeds::INIT, 1))?,
        })
    }

    pub fn checksums(&self) -> (String, String) {
        (self.end.checksum(), self.aug.checksum())
    }
}

/// Source-task data: the corpus with training and development queries.
#[derive(Clone, Debug)]
pub struct SourceTask {
    pub corpus: Corpus,
    pub train: QuerySet,
    pub dev: QuerySet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPhase {
    Warmup,
    EndRetriever,
    Augmenter,
}

/// One optimizer step, as written to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub episode: usize,
    pub phase: TrainPhase,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub shortfalls: usize,
}

/// Parameter checksums around the two training steps of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseChecksums {
    pub end_before: String,
    pub aug_before: String,
    pub end_after_end_step: String,
    pub aug_after_end_step: String,
    pub end_after_aug_step: String,
    pub aug_after_aug_step: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    /// 0-based; episode `e` uses augmentation retrieved by the augmenter
    /// as it stood after episode `e - 1` (or warm-up).
    pub episode: usize,
    /// Fraction of training queries whose augmentation set holds a relevant
    /// source document.
    pub coverage: f64,
    pub attribution: AttributionStats,
    pub end_loss: f64,
    pub aug_loss: f64,
    pub source_negative_shortfalls: usize,
    pub aug_negative_shortfalls: usize,
    pub mean_pseudo_positives: f64,
    pub dev_ndcg: f64,
    pub memory_version: u64,
    pub checksums: PhaseChecksums,
}

/// Models and augmentation sets carried between episodes.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    /// Completed episodes.
    pub episode: usize,
    pub models: Retrievers,
    /// Current augmentation set per training query.
    pub augmentation: Vec<Vec<DocKey>>,
}

struct TrainQuery {
    id: String,
    text: String,
    positives: BTreeSet<DocKey>,
}

/// Chosen by best development NDCG@10.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub episode: usize,
    pub dev_ndcg: f64,
    pub models: Retrievers,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    vocab: &'a Vocabulary,
    source: &'a SourceTask,
    memories: Vec<Corpus>,
    queries: Vec<TrainQuery>,
    state: EpisodeState,
    /// The source corpus under the end retriever's document encoder.
    source_index: Option<MemoryMixture>,
    /// The mixture `M` under the augmenter's encoder.
    memory: Option<MemoryMixture>,
    metrics: Vec<StepMetric>,
    reports: Vec<EpisodeReport>,
    dynamics: Vec<EpisodeLog>,
    fidatt: Vec<FidAttScores>,
    best: Option<Checkpoint>,
    timings: Timings,
    skipped_queries: usize,
}

impl<'a> Trainer<'a> {
    /// `memories` are the non-source corpora of the training mixture.
    pub fn new(
        config: TrainConfig,
        models: Retrievers,
        vocab: &'a Vocabulary,
        source: &'a SourceTask,
        memories: Vec<Corpus>,
    ) -> Result<Self> {
        config.validate()?;
        if config.k > models.end.config().k_default {
            return Err(Error::config("k", "exceeds the model's K"));
        }
        let known: HashSet<&str> = source.corpus.documents().iter().map(|d| d.doc_id.as_str()).collect();
        let mut queries = Vec::new();
        let mut skipped = 0;
        for q in &source.train.queries {
            let positives: BTreeSet<DocKey> = source
                .train
                .qrels
                .relevant(&q.id)
                .filter(|d| known.contains(d))
                .map(|d| DocKey::new(source.corpus.id(), d))
                .collect();
            if positives.is_empty() {
                skipped += 1;
                continue;
            }
            queries.push(TrainQuery {
                id: q.id.clone(),
                text: q.text.clone(),
                positives,
            });
        }
        if queries.is_empty() {
            return Err(Error::EmptyInput("training queries with positives"));
        }
        let n = queries.len();
        Ok(Trainer {
            config,
            vocab,
            source,
            memories,
            queries,
            state: EpisodeState {
                episode: 0,
                models,
                augmentation: vec![Vec::new(); n],
            },
            source_index: None,
            memory: None,
            metrics: Vec::new(),
            reports: Vec::new(),
            dynamics: Vec::new(),
            fidatt: Vec::new(),
            best: None,
            timings: Timings::new(),
            skipped_queries: skipped,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn models(&self) -> &Retrievers {
        &self.state.models
    }

    pub fn metrics(&self) -> &[StepMetric] {
        &self.metrics
    }

    pub fn reports(&self) -> &[EpisodeReport] {
        &self.reports
    }

    pub fn dynamics(&self) -> &[EpisodeLog] {
        &self.dynamics
    }

    pub fn fidatt(&self) -> &[FidAttScores] {
        &self.fidatt
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    pub fn timings(&self) -> &Timings {
        &self.timings
    }

    /// Training queries dropped for lack of a positive in the source corpus.
    pub fn skipped_queries(&self) -> usize {
        self.skipped_queries
    }

    pub fn memory(&self) -> Option<&MemoryMixture> {
        self.memory.as_ref()
    }

    pub fn source_index(&self) -> Option<&MemoryMixture> {
        self.source_index.as_ref()
    }

    fn mixture_corpora(&self) -> Vec<Corpus> {
        std::iter::once(self.source.corpus.clone())
            .chain(self.memories.iter().cloned())
            .collect()
    }

    fn epoch_positives<R: Rng>(&self, all: &[DocKey], rng: &mut R) -> Vec<DocKey> {
        match self.config.positives_per_query {
            Some(p) if p < all.len() => {
                let mut idx = sample(rng, all.len(), p).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| all[i].clone()).collect()
            }
            _ => all.to_vec(),
        }
    }

    /// Trains `model` for `epochs` over examples grouped by query. Each
    /// group offers one example per positive; `positives_per_query` caps how
    /// many are drawn per epoch.
    fn fit(
        &mut self,
        phase: TrainPhase,
        train_aug: bool,
        groups: &[Vec<TrainingExample>],
        epochs: usize,
        stream: u64,
    ) -> Result<f64> {
        let mut shuffle = seeds::indexed(self.config.seed, seeds::SHUFFLE, stream);
        let per_epoch: usize = groups
            .iter()
            .map(|g| self.config.positives_per_query.map_or(g.len(), |p| p.min(g.len())))
            .sum();
        let steps_per_epoch = per_epoch.div_ceil(self.config.batch_size);
        let total = (steps_per_epoch * epochs).max(1) as f64;
        let mut opt = AdamW::new(self.config.learning_rate, self.config.weight_decay);
        let mut last_epoch_loss = 0.0;
        let mut step = 0u64;
        for _ in 0..epochs {
            let mut chosen: Vec<&TrainingExample> = Vec::with_capacity(per_epoch);
            for g in groups {
                let keys: Vec<DocKey> = g.iter().map(|e| e.positive.0.clone()).collect();
                let pick: HashSet<DocKey> = self.epoch_positives(&keys, &mut shuffle).into_iter().collect();
                chosen.extend(g.iter().filter(|e| pick.contains(&e.positive.0)));
            }
            let batches = build_batches(chosen.len(), self.config.batch_size, &mut shuffle);
            let mut epoch_loss = 0.0;
            for batch in &batches {
                let refs: Vec<&TrainingExample> = batch.iter().map(|&i| chosen[i]).collect();
                let lr = self.config.learning_rate * (1.0 - step as f64 / total);
                opt.lr = lr;
                let model = if train_aug { &mut self.state.models.aug } else { &mut self.state.models.end };
                let start = std::time::Instant::now();
                let loss = train_step(model, &mut opt, &refs)?;
                self.timings.record(Phase::OptimizerStep, start.elapsed());
                step += 1;
                epoch_loss += loss * refs.len() as f64;
                self.metrics.push(StepMetric {
                    episode: self.state.episode,
                    phase,
                    step,
                    loss,
                    lr,
                    shortfalls: refs.iter().filter(|e| e.shortfall).count(),
                });
            }
            last_epoch_loss = epoch_loss / chosen.len().max(1) as f64;
        }
        Ok(last_epoch_loss)
    }

    /// Trains both retrievers with plain scoring against BM25 negatives, then
    /// builds both indexes and the first augmentation sets.
    pub fn warmup(&mut self) -> Result<()> {
        let bm25 = self.timings.time(Phase::IndexBuild, || {
            InvertedIndex::build(
                self.source.corpus.documents().iter().map(|d| (d.key(), d.full_text())),
                Bm25Params::default(),
            )
        });
        let epochs = self.config.warmup_epochs;
        if epochs > 0 {
            for train_aug in [false, true] {
                let model = if train_aug { &self.state.models.aug } else { &self.state.models.end };
                let enc = TextEncoder::new(model, self.vocab);
                let doc_tokens: std::collections::HashMap<&str, Vec<u32>> = self
                    .source
                    .corpus
                    .documents()
                    .iter()
                    .map(|d| (d.doc_id.as_str(), enc.doc_tokens(d)))
                    .collect();
                let tokens_of = |k: &DocKey| doc_tokens[k.doc_id.as_str()].clone();
                let groups: Vec<Vec<TrainingExample>> = self
                    .queries
                    .iter()
                    .map(|q| {
                        let pos: HashSet<DocKey> = q.positives.iter().cloned().collect();
                        let mined = bm25.warmup_negatives(&terms(&q.text), &pos, self.config.negatives);
                        if mined.docs.is_empty() {
                            return Ok(Vec::new());
                        }
                        let negatives: Vec<(DocKey, Vec<u32>)> =
                            mined.docs.iter().map(|k| (k.clone(), tokens_of(k))).collect();
                        q.positives
                            .iter()
                            .map(|p| {
                                TrainingExample::new(
                                    &q.id,
                                    enc.query_tokens(&q.text),
                                    Vec::new(),
                                    (p.clone(), tokens_of(p)),
                                    negatives.clone(),
                                    ExampleRole::Augmenter,
                                    mined.shortfall,
                                )
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                self.fit(TrainPhase::Warmup, train_aug, &groups, epochs, u64::from(train_aug))?;
            }
        }
        self.prepare()
    }

    /// Builds both indexes and the first augmentation sets from the current
    /// models. `warmup` ends with this; call it directly when starting from
    /// already warmed models.
    pub fn prepare(&mut self) -> Result<()> {
        self.refresh_indexes()?;
        self.state.augmentation = self.retrieve_augmentation()?;
        Ok(())
    }

    /// Re-embeds the source index with the end retriever and the mixture
    /// with the augmenter.
    fn refresh_indexes(&mut self) -> Result<()> {
        let end = TextEncoder::new(&self.state.models.end, self.vocab);
        let aug = TextEncoder::new(&self.state.models.aug, self.vocab);
        let timings = &self.timings;
        match self.source_index.as_mut() {
            Some(ix) => timings.time(Phase::CorpusEncoding, || ix.refresh(&end))?,
            None => {
                self.source_index =
                    Some(timings.time(Phase::CorpusEncoding, || build_index([self.source.corpus.clone()], &end))?)
            }
        }
        if self.config.augmented() {
            match self.memory.as_mut() {
                Some(m) => timings.time(Phase::CorpusEncoding, || m.refresh(&aug))?,
                None => {
                    let corpora = self.mixture_corpora();
                    self.memory = Some(timings.time(Phase::CorpusEncoding, || build_index(corpora, &aug))?);
                }
            }
            if self.config.index_mode == SearchMode::Approx {
                let m = self.memory.as_ref().expect("built above");
                timings.time(Phase::IndexBuild, || m.prepare_approx());
            }
        }
        Ok(())
    }

    /// Top-K documents from the mixture for every training query, using the
    /// current augmenter.
    fn retrieve_augmentation(&self) -> Result<Vec<Vec<DocKey>>> {
        let Some(memory) = self.memory.as_ref().filter(|_| self.config.augmented()) else {
            return Ok(vec![Vec::new(); self.queries.len()]);
        };
        let enc = TextEncoder::new(&self.state.models.aug, self.vocab);
        let vecs: Vec<Vec<f64>> = self.timings.time(Phase::QueryEncoding, || {
            self.queries.par_iter().map(|q| enc.embed_query(&q.text)).collect::<Result<_>>()
        })?;
        let phase = match self.config.index_mode {
            SearchMode::Exact => Phase::ExactSearch,
            SearchMode::Approx => Phase::AnnSearch,
        };
        let results = self
            .timings
            .time(phase, || memory.search_batch(&vecs, self.config.k, self.config.index_mode))?;
        Ok(results
            .into_iter()
            .map(|r| r.hits.into_iter().map(|h| h.key).collect())
            .collect())
    }

    fn memory_tokens(&self, enc: &TextEncoder<'_>, keys: &[DocKey]) -> Result<Vec<Vec<u32>>> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let memory = self.memory.as_ref().ok_or_else(|| Error::contract("mixture index not built"))?;
        keys.iter().map(|k| stored_tokens(enc, memory, k)).collect()
    }

    fn classify(&self, qi: usize, key: &DocKey) -> String {
        classify_doc(key, self.source.corpus.id(), &self.queries[qi].positives)
    }

    /// Mean development NDCG@10 of the current models on the source corpus.
    pub fn dev_ndcg(&self) -> Result<f64> {
        let source_index = self.source_index.as_ref().ok_or_else(|| Error::contract("source index not built"))?;
        let empty = MemoryMixture::new(self.state.models.aug.config().model_dim);
        let retriever = MomaRetriever {
            end: &self.state.models.end,
            aug: &self.state.models.aug,
            vocab: self.vocab,
            memory: self.memory.as_ref().unwrap_or(&empty),
            target: source_index,
            target_corpus: self.source.corpus.id().to_string(),
            k: self.config.k,
            mode: self.config.index_mode,
        };
        Ok(evaluate_run(&retriever, &self.source.dev.queries, &self.source.dev.qrels, 10)?.mean_ndcg)
    }

    /// Runs the five steps of one training episode and refreshes both
    /// indexes at its end.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        if self.source_index.is_none() {
            return Err(Error::contract("warm-up must run before the first episode"));
        }
        let episode = self.state.episode;
        let prev = self.state.models.clone();
        let (end_before, aug_before) = prev.checksums();
        let mut mining = seeds::indexed(self.config.seed, seeds::MINING, episode as u64);
        let end_enc = TextEncoder::new(&prev.end, self.vocab);
        let aug_enc = TextEncoder::new(&prev.aug, self.vocab);

        // Augmentation sets come from the previous augmenter and are shared by
        // both training phases.
        let augmentation = if episode == 0 {
            self.state.augmentation.clone()
        } else {
            self.retrieve_augmentation()?
        };

        // Hard negatives from the source corpus for augmented queries.
        let source_index = self.source_index.as_ref().expect("checked above");
        let t0 = std::time::Instant::now();
        let fused: Vec<Vec<f64>> = (0..self.queries.len())
            .into_par_iter()
            .map(|qi| {
                let docs = self.memory_tokens(&end_enc, &augmentation[qi])?;
                Ok(prev.end.embed_query_fused(&end_enc.query_tokens(&self.queries[qi].text), &docs)?.0)
            })
            .collect::<Result<_>>()?;
        self.timings.record(Phase::QueryEncoding, t0.elapsed());
        let t0 = std::time::Instant::now();
        let mut end_groups = Vec::with_capacity(self.queries.len());
        let mut source_shortfalls = 0;
        for (qi, q) in self.queries.iter().enumerate() {
            let exclude: HashSet<DocKey> = q.positives.iter().cloned().collect();
            let mined = source_index.mine_negatives(
                &fused[qi],
                self.config.mining_depth,
                &exclude,
                self.config.negatives,
                self.config.index_mode,
                &mut mining,
            )?;
            source_shortfalls += usize::from(mined.shortfall);
            if mined.docs.is_empty() {
                end_groups.push(Vec::new());
                continue;
            }
            let negatives: Vec<(DocKey, Vec<u32>)> = mined
                .docs
                .iter()
                .map(|k| Ok((k.clone(), stored_tokens(&end_enc, source_index, k)?)))
                .collect::<Result<_>>()?;
            let aug_tokens = self.memory_tokens(&end_enc, &augmentation[qi])?;
            let group = q
                .positives
                .iter()
                .map(|p| {
                    TrainingExample::new(
                        &q.id,
                        end_enc.query_tokens(&q.text),
                        aug_tokens.clone(),
                        (p.clone(), stored_tokens(&end_enc, source_index, p)?),
                        negatives.clone(),
                        ExampleRole::EndRetriever,
                        mined.shortfall,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            end_groups.push(group);
        }
        self.timings.record(Phase::NegativeConstruction, t0.elapsed());

        // Train the end retriever.
        let end_loss = self.fit(TrainPhase::EndRetriever, false, &end_groups, self.config.epochs_per_episode, 10 + 2 * episode as u64)?;
        let (end_after_end_step, aug_after_end_step) = self.state.models.checksums();
        if aug_after_end_step != aug_before {
            return Err(Error::contract("augmenter parameters changed while training the end retriever"));
        }

        // Pseudo-positives from the new end retriever's attention, negatives
        // mined from the mixture with the previous augmenter.
        let mut aug_groups = Vec::with_capacity(self.queries.len());
        let mut aug_shortfalls = 0;
        let mut pseudo_total = 0usize;
        let mut episode_scores = Vec::with_capacity(self.queries.len());
        let mut log = EpisodeLog {
            episode,
            queries: Vec::with_capacity(self.queries.len()),
        };
        if self.config.augmented() {
            let memory = self.memory.as_ref().expect("augmented runs build the mixture");
            let cur_enc = TextEncoder::new(&self.state.models.end, self.vocab);
            let scores: Vec<FidAttScores> = (0..self.queries.len())
                .into_par_iter()
                .map(|qi| {
                    let q = &self.queries[qi];
                    let docs = self.memory_tokens(&cur_enc, &augmentation[qi])?;
                    let (_, record) = self.state.models.end.embed_query_fused(&cur_enc.query_tokens(&q.text), &docs)?;
                    aggregate_fidatt(&record, &augmentation[qi], &q.id, episode, Aggregation::Sum)
                })
                .collect::<Result<_>>()?;
            let aug_vecs: Vec<Vec<f64>> = self
                .queries
                .par_iter()
                .map(|q| aug_enc.embed_query(&q.text))
                .collect::<Result<_>>()?;
            let t0 = std::time::Instant::now();
            for (qi, q) in self.queries.iter().enumerate() {
                let pseudo = select_pseudo_positives(&scores[qi], &q.positives, self.config.n)?;
                pseudo_total += pseudo.len();
                let mined = memory.mine_negatives(
                    &aug_vecs[qi],
                    self.config.mining_depth,
                    &pseudo.exclusion_set(),
                    self.config.negatives,
                    self.config.index_mode,
                    &mut mining,
                )?;
                aug_shortfalls += usize::from(mined.shortfall);
                if mined.docs.iter().any(|k| pseudo.contains(k)) {
                    return Err(Error::contract("pseudo-positive sampled as a negative"));
                }
                if mined.docs.is_empty() {
                    aug_groups.push(Vec::new());
                } else {
                    let negatives: Vec<(DocKey, Vec<u32>)> = mined
                        .docs
                        .iter()
                        .map(|k| Ok((k.clone(), stored_tokens(&aug_enc, memory, k)?)))
                        .collect::<Result<_>>()?;
                    let group = pseudo
                        .keys()
                        .map(|p| {
                            TrainingExample::new(
                                &q.id,
                                aug_enc.query_tokens(&q.text),
                                Vec::new(),
                                (p.clone(), stored_tokens(&aug_enc, memory, p)?),
                                negatives.clone(),
                                ExampleRole::Augmenter,
                                mined.shortfall,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    aug_groups.push(group);
                }
                log.queries.push(QueryAugmentation {
                    query_id: q.id.clone(),
                    docs: augmentation[qi]
                        .iter()
                        .map(|k| AugmentedDoc {
                            key: k.clone(),
                            class: self.classify(qi, k),
                            fidatt: scores[qi].get(k),
                        })
                        .collect(),
                });
            }
            self.timings.record(Phase::NegativeConstruction, t0.elapsed());
            episode_scores = scores;
        }

        // Train the augmenter.
        let aug_loss = if self.config.augmented() {
            self.fit(TrainPhase::Augmenter, true, &aug_groups, self.config.epochs_per_episode, 11 + 2 * episode as u64)?
        } else {
            0.0
        };
        let (end_after_aug_step, aug_after_aug_step) = self.state.models.checksums();
        if end_after_aug_step != end_after_end_step {
            return Err(Error::contract("end retriever parameters changed while training the augmenter"));
        }

        let coverage = self.coverage(&augmentation);
        let attribution = attribution_stats(
            augmentation.iter().flatten(),
            |k| k.corpus_id.clone(),
        );

        // Episode boundary: refresh indexes with f_t and retrieve the next sets.
        self.refresh_indexes()?;
        self.state.episode += 1;
        self.state.augmentation = self.retrieve_augmentation()?;
        let dev_ndcg = self.dev_ndcg()?;
        if self.best.as_ref().is_none_or(|b| dev_ndcg > b.dev_ndcg) {
            self.best = Some(Checkpoint {
                episode,
                dev_ndcg,
                models: self.state.models.clone(),
            });
        }

        let report = EpisodeReport {
            episode,
            coverage,
            attribution,
            end_loss,
            aug_loss,
            source_negative_shortfalls: source_shortfalls,
            aug_negative_shortfalls: aug_shortfalls,
            mean_pseudo_positives: pseudo_total as f64 / self.queries.len() as f64,
            dev_ndcg,
            memory_version: self.memory.as_ref().map_or(0, MemoryMixture::version),
            checksums: PhaseChecksums {
                end_before,
                aug_before,
                end_after_end_step,
                aug_after_end_step,
                end_after_aug_step,
                aug_after_aug_step,
            },
        };
        self.fidatt.extend(episode_scores);
        self.dynamics.push(log);
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Fraction of training queries with a relevant source document in `sets`.
    pub fn coverage(&self, sets: &[Vec<DocKey>]) -> f64 {
        let hit = sets
            .iter()
            .zip(&self.queries)
            .filter(|(ks, q)| ks.iter().any(|k| q.positives.contains(k)))
            .count();
        hit as f64 / self.queries.len() as f64
    }

    /// Warm-up followed by every configured episode.
    pub fn run(&mut self) -> Result<()> {
        self.warmup()?;
        for _ in 0..self.config.episodes {
            self.run_episode()?;
        }
        Ok(())
    }

    pub fn into_state(self) -> EpisodeState {
        self.state
    }
}
