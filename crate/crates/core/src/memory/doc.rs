use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global identity of a document: `(corpus_id, doc_id)`.
///
/// Ordering compares the corpus id first, which is also the search tie-break.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocKey {
    pub corpus_id: String,
    pub doc_id: String,
}

impl DocKey {
    pub fn new(corpus_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        DocKey {
            corpus_id: corpus_id.into(),
            doc_id: doc_id.into(),
        }
    }
}

impl fmt::Display for DocKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.corpus_id, self.doc_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub corpus_id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn key(&self) -> DocKey {
        DocKey::new(&self.corpus_id, &self.doc_id)
    }

    /// Title and body joined the way they are fed to tokenizers.
    pub fn full_text(&self) -> String {
        match self.title.as_deref() {
            Some(t) if !t.is_empty() => format!("{t} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

/// One line of a BEIR corpus file.
#[derive(Serialize, Deserialize)]
struct CorpusLine {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    corpus_id: String,
    documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, rejecting empty or duplicate document ids. The
    /// documents' own corpus ids are overwritten with `corpus_id`.
    pub fn new(corpus_id: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let corpus_id = corpus_id.into();
        if corpus_id.is_empty() {
            return Err(Error::contract("corpus id must be nonempty"));
        }
        let mut seen = HashSet::with_capacity(documents.len());
        let mut documents = documents;
        for d in &mut documents {
            if d.doc_id.is_empty() {
                return Err(Error::contract(format!("empty document id in corpus `{corpus_id}`")));
            }
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::DuplicateDocument {
                    corpus_id: corpus_id.clone(),
                    doc_id: d.doc_id.clone(),
                });
            }
            d.corpus_id.clone_from(&corpus_id);
        }
        Ok(Corpus {
            corpus_id,
            documents,
        })
    }

    pub fn id(&self) -> &str {
        &self.corpus_id
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Reads a BEIR `corpus.jsonl` file.
    pub fn read_jsonl(path: &Path, corpus_id: &str) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(std::io::BufReader::new(file), path, corpus_id)
    }

    pub fn parse_jsonl(reader: impl BufRead, path: &Path, corpus_id: &str) -> Result<Self> {
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            documents.push(Document {
                doc_id: row.id,
                corpus_id: corpus_id.to_string(),
                title: (!row.title.is_empty()).then_some(row.title),
                text: row.text,
            });
        }
        Corpus::new(corpus_id, documents)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.documents {
            let line = CorpusLine {
                id: d.doc_id.clone(),
                title: d.title.clone().unwrap_or_default(),
                text: d.text.clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
