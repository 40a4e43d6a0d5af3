use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ndcg_at_k, QrelSet, Query, TimingReport};
use crate::error::Result;
use crate::memory::AttributionStats;

/// Anything that ranks target documents for a query.
pub trait Retriever: Sync {
    /// Best-first `(doc_id, score)` pairs, at most `k` of them.
    fn rank(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query_id: String,
    pub ranking: Vec<RankedDoc>,
    /// `None` when the query has no positively graded document.
    pub ndcg: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub k: usize,
    pub per_query: Vec<QueryReport>,
    pub mean_ndcg: f64,
    /// Queries contributing to the mean.
    pub evaluated: usize,
    /// Judged queries without any positive grade.
    pub zero_idcg: usize,
    /// Queries with no judgments at all; not ranked.
    pub missing_qrels: usize,
    pub attribution: Vec<(usize, AttributionStats)>,
    pub timings: Option<TimingReport>,
}

impl RunReport {
    pub fn ndcg_of(&self, query_id: &str) -> Option<f64> {
        self.per_query.iter().find(|q| q.query_id == query_id).and_then(|q| q.ndcg)
    }
}

/// Ranks every judged query and scores it with NDCG@k.
pub fn evaluate_run(retriever: &dyn Retriever, queries: &[Query], qrels: &QrelSet, k: usize) -> Result<RunReport> {
    let judged: Vec<&Query> = queries.iter().filter(|q| qrels.get(&q.id).is_some()).collect();
    let per_query: Vec<QueryReport> = judged
        .par_iter()
        .map(|q| {
            let ranked = retriever.rank(q, k)?;
            let ids: Vec<&str> = ranked.iter().map(|(d, _)| d.as_str()).collect();
            let ndcg = ndcg_at_k(&ids, qrels.get(&q.id).expect("filtered"), k);
            Ok(QueryReport {
                query_id: q.id.clone(),
                ranking: ranked
                    .into_iter()
                    .map(|(doc_id, score)| RankedDoc { doc_id, score })
                    .collect(),
                ndcg,
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = per_query.iter().filter_map(|q| q.ndcg).collect();
    let mean_ndcg = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    Ok(RunReport {
        k,
        evaluated: values.len(),
        zero_idcg: per_query.len() - values.len(),
        missing_qrels: queries.len() - judged.len(),
        per_query,
        mean_ndcg,
        attribution: Vec::new(),
        timings: None,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    /// Ranks the judged documents by grade, the planted-oracle case.
    struct Oracle<'a>(&'a QrelSet);

    impl Retriever for Oracle<'_> {
        fn rank(&self, query: &Query, k: usize) -> Result<Vec<(String, f64)>> {
            let mut docs: Vec<(String, f64)> = self
                .0
                .get(&query.id)
                .map(|m: &BTreeMap<String, u32>| m.iter().map(|(d, &g)| (d.clone(), f64::from(g))).collect())
                .unwrap_or_default();
            docs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            docs.truncate(k);
            Ok(docs)
        }
    }

    fn query(id: &str) -> Query {
        Query {
            id: id.into(),
            text: String::new(),
        }
    }

    #[test]
    fn oracle_scores_one_and_counts_exclusions() {
        let mut qrels = QrelSet::default();
        qrels.insert("q1", "a", 2);
        qrels.insert("q1", "b", 1);
        qrels.insert("q2", "c", 1);
        qrels.insert("q3", "d", 0);
        let queries = vec![query("q1"), query("q2"), query("q3"), query("q4")];
        let r = evaluate_run(&Oracle(&qrels), &queries, &qrels, 10).unwrap();
        assert_eq!(r.mean_ndcg, 1.0);
        assert_eq!((r.evaluated, r.zero_idcg, r.missing_qrels), (2, 1, 1));
        assert_eq!(r, evaluate_run(&Oracle(&qrels), &queries, &qrels, 10).unwrap());
        assert_eq!(r.ndcg_of("q3"), None);
    }

    #[test]
    fn mean_is_order_independent() {
        struct Fixed;
        impl Retriever for Fixed {
            fn rank(&self, _: &Query, _: usize) -> Result<Vec<(String, f64)>> {
                Ok(vec![("x".into(), 1.0), ("a".into(), 0.5)])
            }
        }
        let mut qrels = QrelSet::default();
        qrels.insert("q1", "a", 1);
        qrels.insert("q2", "x", 1);
        qrels.insert("q3", "z", 1);
        let fwd = evaluate_run(&Fixed, &[query("q1"), query("q2"), query("q3")], &qrels, 10).unwrap();
        let rev = evaluate_run(&Fixed, &[query("q3"), query("q2"), query("q1")], &qrels, 10).unwrap();
        let mean = fwd.per_query.iter().filter_map(|q| q.ndcg).sum::<f64>() / 3.0;
        assert!((fwd.mean_ndcg - mean).abs() < 1e-12);
        assert!((fwd.mean_ndcg - rev.mean_ndcg).abs() < 1e-15);
    }
}
