use super::{build_index, MomaRetriever, Retrievers, TextEncoder};
use crate::error::Result;
use crate::evalkit::{evaluate_run, QuerySet, RunReport};
use crate::memory::{attribution_stats, Corpus, MemoryMixture, SearchMode};
use crate::workbench::Vocabulary;

/// Replaces the source corpus of a trained mixture with `target`, embedding
/// the new documents with the augmenter. Parameters are untouched.
pub fn plug_in_target(
    training: &MemoryMixture,
    source_corpus: &str,
    target: Corpus,
    models: &Retrievers,
    vocab: &Vocabulary,
) -> Result<MemoryMixture> {
    let mut m = training.clone();
    m.swap_corpus(source_corpus, target, &TextEncoder::new(&models.aug, vocab))?;
    Ok(m)
}

/// NDCG@10 on the target task, augmenting each query from `memory` with
/// `k` documents. Attribution of the augmentation sets lands in the report.
pub fn evaluate_target(
    models: &Retrievers,
    vocab: &Vocabulary,
    memory: &MemoryMixture,
    target: &Corpus,
    test: &QuerySet,
    k: usize,
    mode: SearchMode,
) -> Result<RunReport> {
    let index = build_index([target.clone()], &TextEncoder::new(&models.end, vocab))?;
    let retriever = MomaRetriever {
        end: &models.end,
        aug: &models.aug,
        vocab,
        memory,
        target: &index,
        target_corpus: target.id().to_string(),
        k,
        mode,
    };
    let mut report = evaluate_run(&retriever, &test.queries, &test.qrels, 10)?;
    if k > 0 && !memory.is_empty() {
        let sets = test
            .queries
            .iter()
            .map(|q| retriever.augmentation(&q.text))
            .collect::<Result<Vec<_>>>()?;
        let stats = attribution_stats(sets.iter().flatten(), |key| key.corpus_id.clone());
        report.attribution = vec![(k, stats)];
    }
    Ok(report)
}
