//! Graph neural network toolkit for misinformation-spreader detection.
//!
//! Three classifiers over user graphs: GCN and GraphSAGE semi-supervised
//! node classification, and DGCNN graph classification over 3-hop
//! ego-networks, with a small reverse-mode autodiff engine, Adam/BCE
//! training, evaluation metrics (accuracy, MCC, ROC AUC), and a synthetic
//! dataset generator for desk-scale experiments.

pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{EgoSample, SparseGraph};
pub use tensor::Tensor;
