//! Hierarchical Roofline toolkit.
//!
//! The crate models an accelerator's compute and bandwidth ceilings, runs a
//! desk-scale GPP kernel in nine optimization versions with exact FP64
//! instruction counters and memory-access traces, turns traces into L1/L2/HBM
//! byte counts with a two-level LRU simulator, and reports Roofline points,
//! bound classifications, locality gaps and speedup trajectories as JSON or SVG.

pub mod cache;
pub mod chart;
pub mod cli;
mod error;
pub mod gpp;
pub mod machine;
pub mod metrics;
pub mod occupancy;
pub mod roofline;
mod util;

pub use error::{Error, Result};
