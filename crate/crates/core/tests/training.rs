//! Loss behaviour of warm-up and episode training on small synthetic tasks.

use std::collections::{HashMap, HashSet};

use moma::lexical::{terms, Bm25Params, InvertedIndex};
use moma::memory::DocKey;
use moma::numerics::AdamW;
use moma::trainer::{train_step, ExampleRole, TextEncoder, TrainPhase, TrainingExample};
use moma::workbench::pipeline::{build_vocabulary, initial_models, trainer, TaskData};
use moma::workbench::{ExperimentConfig, MemoryPath, SyntheticTask, Vocabulary};

fn small(seed: u64) -> (ExperimentConfig, TaskData, Vocabulary) {
    let mut cfg = ExperimentConfig::default();
    cfg.set_seed(seed);
    cfg.synthetic.source_topics = 24;
    cfg.synthetic.target_topics = 4;
    cfg.train.warmup_epochs = 2;
    cfg.train.episodes = 1;
    cfg.train.epochs_per_episode = 3;
    let data = TaskData::from_synthetic(SyntheticTask::generate(&cfg.synthetic, seed).unwrap());
    cfg.memories = data
        .memories
        .iter()
        .map(|c| MemoryPath {
            id: c.id().to_string(),
            path: Default::default(),
        })
        .collect();
    let vocab = build_vocabulary(&data, cfg.vocab_size);
    (cfg, data, vocab)
}

/// One warm-up style batch: each query's first positive against BM25
/// negatives. Queries without any lexical negative are skipped, as in warm-up.
fn fixed_batch(cfg: &ExperimentConfig, data: &TaskData, enc: &TextEncoder<'_>) -> Vec<TrainingExample> {
    let corpus = &data.source.corpus;
    let bm25 = InvertedIndex::build(corpus.documents().iter().map(|d| (d.key(), d.full_text())), Bm25Params::default());
    let tokens: HashMap<&str, Vec<u32>> = corpus.documents().iter().map(|d| (d.doc_id.as_str(), enc.doc_tokens(d))).collect();
    data.source
        .train
        .queries
        .iter()
        .filter_map(|q| {
            let pos = data.source.train.qrels.relevant(&q.id).next()?;
            let key = DocKey::new(corpus.id(), pos);
            let exclude: HashSet<DocKey> = data.source.train.qrels.relevant(&q.id).map(|d| DocKey::new(corpus.id(), d)).collect();
            let mined = bm25.warmup_negatives(&terms(&q.text), &exclude, cfg.train.negatives);
            if mined.docs.is_empty() {
                return None;
            }
            let negatives = mined.docs.iter().map(|k| (k.clone(), tokens[k.doc_id.as_str()].clone())).collect();
            let positive = (key, tokens[pos].clone());
            TrainingExample::new(&q.id, enc.query_tokens(&q.text), Vec::new(), positive, negatives, ExampleRole::Augmenter, mined.shortfall).ok()
        })
        .take(cfg.train.batch_size)
        .collect()
}

#[test]
fn warmup_loss_falls_on_a_fixed_batch() {
    let mut falling = 0;
    let mut curves = Vec::new();
    for seed in 0..5 {
        let (cfg, data, vocab) = small(seed);
        let mut models = initial_models(&cfg, &vocab, &data).unwrap();
        let batch = fixed_batch(&cfg, &data, &TextEncoder::new(&models.end, &vocab));
        let refs: Vec<&TrainingExample> = batch.iter().collect();
        let mut opt = AdamW::new(cfg.train.learning_rate, cfg.train.weight_decay);
        let losses: Vec<f64> = (0..6).map(|_| train_step(&mut models.end, &mut opt, &refs).unwrap()).collect();
        falling += usize::from(losses.windows(2).all(|w| w[1] < w[0]));
        curves.push(losses);
    }
    assert!(falling >= 4, "{falling}/5 strictly falling: {curves:?}");
}

#[test]
fn end_retriever_loss_falls_within_an_episode() {
    let mut falling = 0;
    let mut summary = Vec::new();
    for seed in 0..5 {
        let (cfg, data, vocab) = small(seed);
        let mut t = trainer(&cfg, initial_models(&cfg, &vocab, &data).unwrap(), &vocab, &data).unwrap();
        t.run().unwrap();
        let losses: Vec<f64> = t
            .metrics()
            .iter()
            .filter(|m| m.phase == TrainPhase::EndRetriever && m.episode == 0)
            .map(|m| m.loss)
            .collect();
        let per_epoch = losses.len() / cfg.train.epochs_per_episode;
        assert!(per_epoch > 0);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (first, last) = (mean(&losses[..per_epoch]), mean(&losses[losses.len() - per_epoch..]));
        falling += usize::from(last < first);
        summary.push((first, last));
        assert!(t.reports()[0].end_loss.is_finite());
    }
    assert!(falling >= 4, "{falling}/5 falling (first, last epoch means): {summary:?}");
}

#[test]
fn zero_warmup_epochs_leave_parameters_alone() {
    let (mut cfg, data, vocab) = small(7);
    cfg.train.warmup_epochs = 0;
    let models = initial_models(&cfg, &vocab, &data).unwrap();
    let before = models.checksums();
    let mut t = trainer(&cfg, models, &vocab, &data).unwrap();
    t.warmup().unwrap();
    assert_eq!(t.models().checksums(), before);
    assert!(t.metrics().is_empty());
}
