use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embedding::EmbeddingInit;
use super::synthetic::{SyntheticParams, SOURCE_CORPUS, WIKI_CORPUS};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourcePaths {
    pub corpus: PathBuf,
    pub train_queries: PathBuf,
    pub train_qrels: PathBuf,
    pub dev_queries: PathBuf,
    pub dev_qrels: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryPath {
    pub id: String,
    pub path: PathBuf,
}

/// Everything one experiment reads. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source_id: String,
    pub source: SourcePaths,
    pub memories: Vec<MemoryPath>,
    pub target_id: String,
    pub target: TargetPaths,
    pub train: TrainConfig,
    /// `vocab_size` is replaced by the size of the built vocabulary.
    pub model: ModelConfig,
    /// Token table initialisation; `None` keeps it random.
    pub embedding_init: Option<EmbeddingInit>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Largest vocabulary including the reserved tokens.
    pub vocab_size: usize,
    /// Parameters for `gen-task`.
    pub synthetic: SyntheticParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source_id: "source".into(),
            source: SourcePaths::default(),
            memories: Vec::new(),
            target_id: "target".into(),
            target: TargetPaths::default(),
            train: TrainConfig {
                warmup_epochs: 10,
                positives_per_query: Some(3),
                ..TrainConfig::default()
            },
            model: ModelConfig {
                model_dim: 32,
                num_layers: 2,
                num_heads: 2,
                feedforward_dim: 64,
                max_query_len: 6,
                max_doc_len: 16,
                freeze_token_embeddings: true,
                ..ModelConfig::default()
            },
            embedding_init: Some(EmbeddingInit {
                corpora: vec![SOURCE_CORPUS.into(), WIKI_CORPUS.into()],
                weight: 0.7,
            }),
            seed: 0,
            output_dir: PathBuf::from("out"),
            vocab_size: 8192,
            synthetic: SyntheticParams::default(),
        }
    }
}

/// Provenance written into every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactStamp {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// `git describe`-style build identifier.
pub fn version_string() -> String {
    match option_env!("MOMA_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("v{}-{d}", env!("CARGO_PKG_VERSION")),
        _ => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

impl ExperimentConfig {
    /// Parses a JSON config and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.as_os_str() == "." {
                *p = base.to_path_buf();
            } else if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.source.corpus);
        fix(&mut self.source.train_queries);
        fix(&mut self.source.train_qrels);
        fix(&mut self.source.dev_queries);
        fix(&mut self.source.dev_qrels);
        for m in &mut self.memories {
            fix(&mut m.path);
        }
        fix(&mut self.target.corpus);
        fix(&mut self.target.queries);
        fix(&mut self.target.qrels);
        fix(&mut self.output_dir);
    }

    /// Checks field values and that every referenced data file exists.
    pub fn validate(&self) -> Result<()> {
        let within = |section: &str, e: Error| match e {
            Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
            other => other,
        };
        self.train.validate().map_err(|e| within("train", e))?;
        self.model.validate().map_err(|e| within("model", e))?;
        if self.train.k > self.model.k_default {
            return Err(Error::config("train.k", "exceeds model.k_default"));
        }
        if self.vocab_size <= 4 {
            return Err(Error::config("vocab_size", "must exceed the reserved tokens"));
        }
        let mut paths = vec![
            ("source.corpus", &self.source.corpus),
            ("source.train_queries", &self.source.train_queries),
            ("source.train_qrels", &self.source.train_qrels),
            ("source.dev_queries", &self.source.dev_queries),
            ("source.dev_qrels", &self.source.dev_qrels),
            ("target.corpus", &self.target.corpus),
            ("target.queries", &self.target.queries),
            ("target.qrels", &self.target.qrels),
        ];
        for m in &self.memories {
            paths.push(("memories.path", &m.path));
        }
        for (field, p) in paths {
            if p.as_os_str().is_empty() {
                return Err(Error::config(field, "is not set"));
            }
            if !p.exists() {
                return Err(Error::config(field, format!("{} does not exist", p.display())));
            }
        }
        if let Some(init) = &self.embedding_init {
            init.validate()?;
            let known: Vec<&str> = std::iter::once(self.source_id.as_str())
                .chain(self.memories.iter().map(|m| m.id.as_str()))
                .collect();
            if let Some(bad) = init.corpora.iter().find(|c| !known.contains(&c.as_str())) {
                return Err(Error::config(
                    "embedding_init.corpora",
                    format!("`{bad}` is not a training corpus"),
                ));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        crate::numerics::hex(&Sha256::digest(bytes))
    }

    pub fn stamp(&self) -> ArtifactStamp {
        ArtifactStamp {
            config_hash: self.hash(),
            seed: self.seed,
            version: version_string(),
        }
    }

    /// Sets the run seed everywhere it is read.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }
}
