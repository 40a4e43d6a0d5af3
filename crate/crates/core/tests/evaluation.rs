//! Evaluation against chance and approximate-search speed.

use std::time::Instant;

use moma::evalkit::{evaluate_run, ndcg_at_k, Query, Retriever};
use moma::memory::{Corpus, MemoryMixture, SearchMode};
use moma::workbench::{SyntheticParams, SyntheticTask};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Scores documents with a random vector per document and per query.
struct RandomEmbeddings {
    mixture: MemoryMixture,
    dim: usize,
    seed: u64,
}

impl RandomEmbeddings {
    fn new(corpus: &Corpus, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = (0..corpus.len() * dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut mixture = MemoryMixture::new(dim);
        mixture.add_corpus_with_embeddings(corpus.clone(), emb).unwrap();
        RandomEmbeddings { mixture, dim, seed }
    }
}

impl Retriever for RandomEmbeddings {
    fn rank(&self, query: &Query, k: usize) -> moma::Result<Vec<(String, f64)>> {
        let salt = query.id.bytes().fold(self.seed, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
        let mut rng = ChaCha8Rng::seed_from_u64(salt);
        let q: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let hits = self.mixture.search(&q, k, SearchMode::Exact)?.hits;
        Ok(hits.into_iter().map(|h| (h.key.doc_id, h.score)).collect())
    }
}

#[test]
fn random_retriever_scores_at_chance() {
    let task = SyntheticTask::generate(&SyntheticParams::default(), 3).unwrap();
    let retriever = RandomEmbeddings::new(&task.target, 16, 99);
    let report = evaluate_run(&retriever, &task.test.queries, &task.test.qrels, 10).unwrap();

    // Chance level by shuffling the target corpus for every query.
    let ids: Vec<&str> = task.target.documents().iter().map(|d| d.doc_id.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 2000;
    let mut mean = 0.0;
    let mut var_of_mean = 0.0;
    let mut n = 0.0;
    for q in &task.test.queries {
        let Some(judged) = task.test.qrels.get(&q.id) else { continue };
        let mut order = ids.clone();
        let samples: Vec<f64> = (0..trials)
            .map(|_| {
                order.shuffle(&mut rng);
                ndcg_at_k(&order[..10], judged, 10).unwrap_or(0.0)
            })
            .collect();
        let m = samples.iter().sum::<f64>() / trials as f64;
        let v = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        mean += m;
        var_of_mean += v;
        n += 1.0;
    }
    assert_eq!(n as usize, report.evaluated);
    let (mean, sigma) = (mean / n, var_of_mean.sqrt() / n);
    assert!(
        (report.mean_ndcg - mean).abs() <= 3.0 * sigma,
        "random retriever {} vs chance {mean} (sigma {sigma})",
        report.mean_ndcg
    );
}

#[test]
fn approximate_search_beats_exact_on_100k_documents() {
    let (n, dim, clusters) = (100_000, 32, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let docs = (0..n)
        .map(|i| moma::memory::Document {
            doc_id: format!("d{i}"),
            corpus_id: "bench".into(),
            title: None,
            text: String::new(),
        })
        .collect();
    let emb: Vec<f64> = (0..n)
        .flat_map(|_| {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter().map(|x| x + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>()
        })
        .collect();
    let mut mixture = MemoryMixture::new(dim);
    mixture.add_corpus_with_embeddings(Corpus::new("bench", docs).unwrap(), emb).unwrap();
    mixture.prepare_approx();
    let queries: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter().map(|x| x + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();

    let time = |mode: SearchMode| {
        let start = Instant::now();
        for q in &queries {
            mixture.search(q, 10, mode).unwrap();
        }
        start.elapsed()
    };
    let exact = time(SearchMode::Exact);
    let approx = time(SearchMode::Approx);
    assert!(approx < exact, "approx {approx:?} vs exact {exact:?}");
}
