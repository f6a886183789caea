//! Adversarial variational domain adaptation on a small reverse-mode
//! autodiff engine.

pub mod cli;
pub mod config;
pub mod container;
pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod param;
pub mod prior;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
