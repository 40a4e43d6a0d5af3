use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

impl Query {
    /// Reads a BEIR `queries.jsonl` file.
    pub fn read_jsonl(path: &Path) -> Result<Vec<Query>> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(out)
    }

    pub fn write_jsonl(queries: &[Query], path: &Path) -> Result<()> {
        let mut out = String::new();
        for q in queries {
            out.push_str(&serde_json::to_string(q)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Queries with their judgments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
}

/// Graded judgments: query id → document id → grade.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrelSet {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

#[derive(Deserialize)]
struct QrelRow {
    #[serde(rename = "query-id")]
    query_id: String,
    #[serde(rename = "corpus-id")]
    corpus_id: String,
    score: i64,
}

impl QrelSet {
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    /// Documents with a positive grade for `query_id`.
    pub fn relevant(&self, query_id: &str) -> impl Iterator<Item = &str> {
        self.get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// Reads a BEIR qrels TSV (`query-id`, `corpus-id`, `score` with header).
    pub fn read_tsv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_path(path)
            .map_err(|e| parse_error(path, 0, e.to_string()))?;
        let mut set = QrelSet::default();
        for (i, row) in reader.deserialize::<QrelRow>().enumerate() {
            let row = row.map_err(|e| parse_error(path, i + 2, e.to_string()))?;
            let grade = u32::try_from(row.score)
                .map_err(|_| parse_error(path, i + 2, format!("negative relevance grade {}", row.score)))?;
            set.insert(row.query_id, row.corpus_id, grade);
        }
        Ok(set)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query-id\tcorpus-id\tscore\n");
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                out.push_str(&format!("{q}\t{d}\t{g}\n"));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn parse_error(path: &Path, line: usize, reason: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    }
}
