//! On-disk layout: `manifest.json` plus, per corpus, a documents JSONL file
//! and a raw little-endian `f64` embedding matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ivf::IvfParams;
use super::{Corpus, MemoryMixture};
use crate::error::{Error, Result};

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    dim: usize,
    version: u64,
    ivf: IvfParams,
    corpora: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    corpus_id: String,
    documents: usize,
    documents_file: String,
    embeddings_file: String,
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl MemoryMixture {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut corpora = Vec::new();
        for (i, slot) in self.slots().enumerate() {
            let documents_file = format!("corpus-{i}.jsonl");
            let embeddings_file = format!("corpus-{i}.f64");
            slot.corpus.write_jsonl(&dir.join(&documents_file))?;
            let bytes: Vec<u8> = slot.embeddings.iter().flat_map(|x| x.to_le_bytes()).collect();
            let path = dir.join(&embeddings_file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            corpora.push(ManifestEntry {
                corpus_id: slot.corpus.id().to_string(),
                documents: slot.corpus.len(),
                documents_file,
                embeddings_file,
            });
        }
        let manifest = Manifest {
            format: FORMAT,
            dim: self.dim(),
            version: self.version(),
            ivf: self.ivf_params().clone(),
            corpora,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::contract(format!("unsupported index format {}", manifest.format)));
        }
        let mut mixture = MemoryMixture::with_ivf(manifest.dim, manifest.ivf);
        for entry in manifest.corpora {
            let corpus = Corpus::read_jsonl(&dir.join(&entry.documents_file), &entry.corpus_id)?;
            if corpus.len() != entry.documents {
                return Err(Error::contract(format!(
                    "corpus `{}` has {} documents, manifest says {}",
                    entry.corpus_id,
                    corpus.len(),
                    entry.documents
                )));
            }
            let embeddings = read_f64s(&dir.join(&entry.embeddings_file))?;
            mixture.add_corpus_with_embeddings(corpus, embeddings)?;
        }
        mixture.set_version(manifest.version);
        Ok(mixture)
    }
}
