//! Simulation engine for hierarchical, hybrid active-inference agents.
//!
//! Agents are built from continuous predictive-coding units over beliefs in
//! generalized coordinates (value + first temporal order). Units can be wired
//! into kinematic hierarchies of intrinsic/extrinsic pairs, equipped with
//! intention-modulated dynamics, wrapped by hybrid heads that score discrete
//! trajectory hypotheses through model reduction, and driven from above by a
//! discrete planner that selects policies by expected free energy. A small
//! planar world closes the action-perception loop, and bundled scenarios
//! reproduce reaching, tracking, multi-step manipulation and tool-use tasks.

pub mod agent;
pub mod diag;
pub mod discrete;
pub mod hybrid;
pub mod intention;
pub mod kinematics;
pub mod math;
pub mod scenario;
pub mod unit;
pub mod world;

use thiserror::Error;

/// Crate-wide error type. Contract violations carry enough context to find
/// the offending unit or config field.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value at tick {tick} in {path}")]
    NonFinite { tick: u64, path: String },

    #[error("degenerate model reduction for hypothesis {index}: reduced precision is not positive definite")]
    DegenerateReduction { index: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dims(context: impl Into<String>, left: usize, right: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            left,
            right,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
