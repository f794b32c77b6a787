//! Benchmark framework for embedding-aware generative models in any-shot
//! learning: domain types, split construction, the ten generative
//! objectives, final-stage classifiers, metrics and experiment orchestration.

pub mod autograd;
pub mod benchmarks;
pub mod classify;
pub mod datamodel;
pub mod embeddings;
pub mod error;
pub mod generators;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod splits;

pub use error::{Error, Result};
