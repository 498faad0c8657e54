//! Closed-loop adaptive error-mitigation stack.
//!
//! The crate composes five layers into offline-training and online-control
//! pipelines:
//!
//! * [`plant`] — a repetition-code logical memory under drifting bit-flip
//!   noise, plus a surrogate workload error model, driven by discrete
//!   intervention levels;
//! * [`telemetry`] — 13-dimensional per-cycle feature vectors, rolling
//!   statistics, normalization, and line-delimited JSON persistence;
//! * [`ghsom`] — a growing hierarchical self-organizing map that discovers
//!   discrete operating contexts from normalized telemetry;
//! * [`forecaster`] — a sparse variational Gaussian-process regressor that
//!   predicts next-cycle logical fidelity with calibrated uncertainty;
//! * [`policy`] — a cost-aware Thompson-sampling contextual bandit choosing
//!   among intervention levels, with an imitation-bootstrapped prior.
//!
//! [`orchestrator`] wires the layers together and runs paired baseline
//! comparisons; [`cli`] exposes the collect/train/compare/oracle commands.

pub mod cli;
pub mod config;
pub mod error;
pub mod forecaster;
pub mod ghsom;
pub mod orchestrator;
pub mod plant;
pub mod policy;
pub mod telemetry;

pub use error::{Error, Result};
