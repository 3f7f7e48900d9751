//! Desk-scale laboratory for reinforcement learning over a joint
//! discrete-token / continuous-denoising policy.
//!
//! The crate provides:
//! - flow-matching process math with a stochastic reversal sampler whose
//!   per-step Gaussian log-density is available in closed form (`flow`),
//! - tiny differentiable models (token policy, velocity network, query
//!   connector) backed by a minimal reverse-mode tape (`autodiff`, `models`),
//! - group-relative policy optimization with clipped surrogates and exact
//!   KL regularization (`grpo`),
//! - synthetic reward functions: compressed-size, composition checking,
//!   cycle-consistent editing, and judge/format scoring (`rewards`),
//! - the six interaction scenarios as composite-trajectory protocols
//!   (`scenarios`),
//! - a reproducible experiment harness with TOML configs, JSONL metrics,
//!   checkpoints, verification reports, and SVG plots (`harness`).

pub mod autodiff;
pub mod flow;
pub mod grpo;
pub mod harness;
pub mod models;
pub mod numeric;
pub mod params;
pub mod rewards;
pub mod scenarios;
pub mod seeds;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A configuration value is missing, unknown, or out of range.
    #[error("config error: {0}")]
    Config(String),
    /// A deterministic step has no probability density.
    #[error("deterministic step has no density: {0}")]
    NoDensity(String),
    /// An update touched a frozen parameter tensor.
    #[error("frozen parameter: {0}")]
    Frozen(String),
    /// A loss or gradient became non-finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Checkpoint or metrics file is malformed.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
