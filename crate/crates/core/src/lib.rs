//! Feasibility analysis for pairwise human preference evaluation.
//!
//! Estimates per-pair preference margins from judgment logs, turns them
//! into judgment budgets and detectability curves, simulates and replays
//! budget allocation across prompt types, and plans comparisons from small
//! pilots. The `prefdetect` binary exposes the same operations.

pub mod allocation;
pub mod cli;
pub mod data;
pub mod dependence;
pub mod detect;
pub mod error;
pub mod margins;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
