//! Mixture-of-memory augmented dense retrieval at desk scale.

pub mod attention;
pub mod error;
pub mod evalkit;
pub mod lexical;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod seeds;
pub mod trainer;
pub mod workbench;

pub use error::{Error, Result};
