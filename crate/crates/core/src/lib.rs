//! Loudspeaker diaphragm-excursion toolkit: a nonlinear speaker simulator,
//! DC-drift label extraction, a small reverse-mode autodiff engine, FFTNet
//! and ConvNet predictors, online batch-norm re-estimation and INT8
//! post-training quantization.

pub mod adapt;
pub(crate) mod binio;
pub mod cli;
pub mod error;
pub mod kv;
pub mod models;
pub mod preproc;
pub mod quant;
pub mod sim;
pub mod tensor;
pub mod train;

pub use binio::derive_seed;
pub use error::{Error, Result};
