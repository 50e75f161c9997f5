//! Explainable causal video summarization.
//!
//! A self-contained implementation of a variational causal model for video
//! summary scoring: a reverse-mode tensor engine, Gaussian/Bernoulli/
//! categorical machinery, a gated posterior with helper heads, a top-k
//! causal attention fusion module, a synthetic intervention corpus with a
//! ground-truth effect oracle, and budgeted-summary F1 evaluation.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod dist;
pub mod eval;
pub mod extractor;
pub mod graph;
pub mod model;
pub mod nn;
pub mod runner;
pub mod synth;

pub use graph::{Graph, Tensor, TensorError, TensorId};
