//! Network-wide multi-step traffic volume forecasting with graph
//! convolutional gated recurrent networks.
//!
//! The crate is self-contained: a small reverse-mode differentiation core
//! ([`tensor`]), trainable graph filters ([`graph`]), the encoder-decoder
//! ([`model`]), data preparation ([`data`]), classical baselines
//! ([`baselines`]), the training protocol ([`training`]), evaluation metrics
//! ([`eval`]) and a text checkpoint format ([`checkpoint`]).

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use tensor::Matrix;
