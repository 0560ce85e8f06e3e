//! Multi-sense language modelling: a word model predicts the next word, a
//! sense model picks its sense, optionally helped by a dictionary graph
//! read through a graph attention layer.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

#![allow(clippy::type_complexity, clippy::large_enum_variant)]

pub mod config;
pub mod corpus;
pub mod dictgraph;
pub mod error;
pub mod eval;
pub mod gat;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod senselm;
pub mod standardlm;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape = tensor::Tape<f64>;
pub type ParamStore = tensor::ParamStore<f64>;
pub type DictGraph = dictgraph::DictGraph<f64>;
pub type WordVectors = dictgraph::WordVectors<f64>;
pub type GraphSignal = gat::GraphSignal<f64>;
pub type SeqModel = standardlm::SeqModel<f64>;
pub type StandardLm = standardlm::StandardLm<f64>;
pub type SenseHead = senselm::SenseHead<f64>;
pub type SenseStats = senselm::SenseStats<f64>;
pub type ContextEncoder = senselm::ContextEncoder<f64>;
pub type Workspace = pipeline::Workspace<f64>;
