use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::DocKey;

/// Class of a source-corpus document judged relevant to the query.
pub const SOURCE_RELEVANT: &str = "source-relevant";
/// Class of any other source-corpus document.
pub const SOURCE_OTHER: &str = "source-other";

/// Source documents split by relevance; memory documents are labelled by
/// their corpus id.
pub fn classify_doc(key: &DocKey, source_corpus: &str, relevant: &BTreeSet<DocKey>) -> String {
    if key.corpus_id == source_corpus {
        if relevant.contains(key) {
            SOURCE_RELEVANT.to_string()
        } else {
            SOURCE_OTHER.to_string()
        }
    } else {
        key.corpus_id.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDoc {
    pub key: DocKey,
    pub class: String,
    pub fidatt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryAugmentation {
    pub query_id: String,
    pub docs: Vec<AugmentedDoc>,
}

/// Augmentation sets used during one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub queries: Vec<QueryAugmentation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsCurve {
    pub episode: usize,
    /// Share of augmentation slots per class.
    pub ratios: BTreeMap<String, f64>,
    /// Mean attention score per class; `None` when the class never appears
    /// with a score.
    pub mean_fidatt: BTreeMap<String, Option<f64>>,
    /// Fraction of queries with a source-relevant document among their
    /// augmentation documents.
    pub coverage: f64,
}

/// Per-episode class shares, attention means and coverage. Every class in
/// `classes` is reported, present or not.
pub fn track_dynamics(logs: &[EpisodeLog], classes: &[String]) -> Vec<DynamicsCurve> {
    logs.iter()
        .map(|log| {
            let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            let mut total = 0usize;
            let mut covered = 0usize;
            for q in &log.queries {
                if q.docs.iter().any(|d| d.class == SOURCE_RELEVANT) {
                    covered += 1;
                }
                for d in &q.docs {
                    *counts.entry(d.class.clone()).or_default() += 1;
                    total += 1;
                    if let Some(f) = d.fidatt {
                        let e = sums.entry(d.class.clone()).or_default();
                        e.0 += f;
                        e.1 += 1;
                    }
                }
            }
            let ratios = counts
                .iter()
                .map(|(c, &n)| (c.clone(), if total == 0 { 0.0 } else { n as f64 / total as f64 }))
                .collect();
            let mean_fidatt = counts
                .keys()
                .map(|c| (c.clone(), sums.get(c).map(|&(s, n)| s / n as f64)))
                .collect();
            let coverage = if log.queries.is_empty() {
                0.0
            } else {
                covered as f64 / log.queries.len() as f64
            };
            DynamicsCurve {
                episode: log.episode,
                ratios,
                mean_fidatt,
                coverage,
            }
        })
        .collect()
}

/// One CSV row per (episode, class).
pub fn write_curves_csv(curves: &[DynamicsCurve], path: &Path) -> Result<()> {
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(["episode", "class", "ratio", "mean_fidatt", "coverage"])
        .map_err(to_err)?;
    for c in curves {
        for (class, ratio) in &c.ratios {
            let fid = c.mean_fidatt.get(class).copied().flatten().map_or(String::new(), |v| v.to_string());
            w.write_record([
                c.episode.to_string(),
                class.clone(),
                ratio.to_string(),
                fid,
                c.coverage.to_string(),
            ])
            .map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(corpus: &str, id: &str, class: &str, fidatt: Option<f64>) -> AugmentedDoc {
        AugmentedDoc {
            key: DocKey::new(corpus, id),
            class: class.into(),
            fidatt,
        }
    }

    fn classes() -> Vec<String> {
        [SOURCE_RELEVANT, SOURCE_OTHER, "wiki", "mesh"].map(String::from).to_vec()
    }

    #[test]
    fn classification() {
        let rel: BTreeSet<_> = [DocKey::new("src", "1")].into();
        assert_eq!(classify_doc(&DocKey::new("src", "1"), "src", &rel), SOURCE_RELEVANT);
        assert_eq!(classify_doc(&DocKey::new("src", "2"), "src", &rel), SOURCE_OTHER);
        assert_eq!(classify_doc(&DocKey::new("wiki", "1"), "src", &rel), "wiki");
    }

    #[test]
    fn curves_from_logs() {
        let log = EpisodeLog {
            episode: 1,
            queries: vec![
                QueryAugmentation {
                    query_id: "q1".into(),
                    docs: vec![
                        doc("src", "1", SOURCE_RELEVANT, Some(0.5)),
                        doc("wiki", "w", "wiki", Some(0.25)),
                    ],
                },
                QueryAugmentation {
                    query_id: "q2".into(),
                    docs: vec![doc("wiki", "x", "wiki", Some(0.75)), doc("src", "3", SOURCE_OTHER, None)],
                },
            ],
        };
        let c = &track_dynamics(&[log], &classes())[0];
        assert_eq!(c.coverage, 0.5);
        assert_eq!(c.ratios["wiki"], 0.5);
        assert_eq!(c.ratios["mesh"], 0.0);
        assert_eq!(c.mean_fidatt["wiki"], Some(0.5));
        assert_eq!(c.mean_fidatt["mesh"], None);
        assert_eq!(c.mean_fidatt[SOURCE_OTHER], None);
        assert!((c.ratios.values().sum::<f64>() - 1.0).abs() < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves_csv(std::slice::from_ref(c), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("episode,class,ratio,mean_fidatt,coverage"));
    }

    #[test]
    fn planted_full_coverage() {
        let queries = (0..5)
            .map(|i| QueryAugmentation {
                query_id: format!("q{i}"),
                docs: vec![doc("src", &i.to_string(), SOURCE_RELEVANT, None)],
            })
            .collect();
        let c = track_dynamics(&[EpisodeLog { episode: 0, queries }], &classes());
        assert_eq!(c[0].coverage, 1.0);
    }
}
