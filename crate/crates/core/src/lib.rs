//! Traffic forecasting with dynamic weighted graph-structure embeddings,
//! spatial self-attention and frequency-domain MLPs.

pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod spatial;
pub mod temporal;
pub mod training;

pub use config::{ModelConfig, RunConfig, TemporalKind, Variant};
pub use error::{Error, Result};
pub use model::DwafmModel;
