//! Implicit relational reasoning graph network for multi-turn response
//! selection, built on a small reverse-mode autodiff engine.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod head;
pub mod model;
pub mod nn;
pub mod odc;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod urr;

pub use config::{Ablation, ArcMode, ModelConfig};
pub use error::{Error, Result};
pub use model::Irrgn;
pub use scalar::Scalar;

/// Double-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type ParameterStore = tensor::ParameterStore<f64>;
pub type AdamW = tensor::AdamW<f64>;
