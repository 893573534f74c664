//! Post-training compression of linear-projection hyperdimensional (HDC)
//! classifiers, with adaptive early-exit inference and exact cost accounting.
//!
//! The pipeline takes a trained encoder/model pair and applies, in order,
//! low-rank decomposition of the projection ([`compression::Factorization`]),
//! pruning of trailing hypervector dimensions ([`compression::prune`]) and
//! per-row MSE-grid quantization ([`compression::quantize_mse`]). Rank and
//! prune ratio can be picked from small labeled subsets
//! ([`calibration`]), and [`adaptive`] evaluates class similarity chunk by
//! chunk, dropping weak classes and exiting early on a confident margin.

pub mod adaptive;
pub mod calibration;
pub mod compression;
pub mod container;
pub mod cost;
pub mod datasets;
pub mod error;
pub mod hdc;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use par::Exec;
