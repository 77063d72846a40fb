//! Frequency-domain time series forecasting library.
//!
//! The crate is built around a small f64 tensor core with reverse-mode
//! autodiff ([`tensor`], [`tape`]), a one-sided DFT toolkit ([`spectral`]),
//! dataset ingestion and windowing ([`data`]), the forecasting network
//! itself ([`model`]), its composite objective ([`loss`]), concept-drift and
//! basis-evolution diagnostics ([`analytics`]), and an Adam trainer with
//! early stopping ([`trainer`]).

pub mod analytics;
pub mod checkpoint;
pub mod data;
pub mod loss;
pub mod model;
pub mod spectral;
pub mod trainer;
pub mod tape;
pub mod tensor;

pub use tensor::{CTensor, CoreResult, Tensor, TensorError};
