//! Tokenizer, synthetic task, experiment configuration and CLI glue.

pub mod artifacts;
pub mod commands;
mod config;
mod embedding;
pub mod pipeline;
pub mod synthetic;
mod vocab;

pub use config::{version_string, ArtifactStamp, ExperimentConfig, MemoryPath, SourcePaths, TargetPaths};
pub use embedding::{cooccurrence_vectors, init_token_embeddings, EmbeddingInit};
pub use synthetic::{SyntheticParams, SyntheticTask, TaskFiles};
pub use vocab::Vocabulary;
