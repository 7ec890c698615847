//! Ensemble score filter and LETKF data assimilation on a two-surface SQG
//! model, with an OSSE cycling harness and spectral diagnostics.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod diffusion;
pub mod ensemble;
pub mod ensf;
pub mod error;
pub mod letkf;
pub mod obs;
pub mod osse;
pub mod rng;
pub mod sqg;

pub use error::{Error, Result};
