//! Time-series forecasting with seasonal-trend decomposition performed inside
//! the recurrent cell.
//!
//! The crate implements, from scratch:
//!
//! - robust STL decomposition built on loess regression ([`stl`]),
//! - seven recurrent cell variants behind one step/readout contract
//!   ([`cells`]): RNN, LSTM, GRU, their STLC counterparts (decomposed input,
//!   one hidden state per component), and the CRU with autocorrelation and
//!   correlation gates,
//! - manual backpropagation through time, finite-difference gradient
//!   verification, and Adam/SGD updates ([`train`]),
//! - CSV/synthetic data pipelines with windowing and chronological splits
//!   ([`data`]),
//! - RMSE/MAPE metrics with repeated-trial statistics ([`metrics`]),
//! - a deterministic, file-driven experiment runner ([`cli`]) exposed by the
//!   `cru` binary.
//!
//! Everything is 64-bit floating point and deterministic given a seed.

pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod stl;
pub mod train;

pub use error::{Error, Result};
