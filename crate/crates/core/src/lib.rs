//! Multimodal fusion toolkit.
//!
//! Claim-level feature encoders, seven two-input fusion blocks, slow-fusion
//! classifiers with optional auxiliary heads, a deterministic training
//! harness for heavily imbalanced binary labels, evaluation metrics, and a
//! synthetic claim generator with a planted cross-modal signal.
//!
//! Everything is built on the small reverse-mode engine in [`graph`].

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod fusion;
pub mod graph;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Mode, ParamId, ParamSet, Var};
pub use tensor::{Real, Tensor};
