//! Structured feature network for continuous sign language recognition.
//!
//! Frame-level mixed 2D/3D convolutions, gloss-level framing with an LSTM
//! and a KL regularizer, a sentence-level BiLSTM trained with CTC, greedy
//! decoding and word error rate evaluation, plus a synthetic
//! continuous-gesture corpus for desk-scale experiments.

pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
