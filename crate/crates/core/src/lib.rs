//! SLA-aware, channel-aware resource-block scheduling for massive-MIMO RAN
//! slicing, plus a trace-driven simulator for comparing the schedulers.
//!
//! The crate is organized around the scheduling pipeline:
//!
//! - [`channel`]: channel tensors from trace files or a clustered synthetic
//!   generator; gain and inter-user-correlation primitives.
//! - [`grouping`]: thresholded correlation graph and greedy graph-coloring
//!   partition of users into low-correlation groups, with caching.
//! - [`rate`]: zero-forcing precoding and Shannon-rate estimation.
//! - [`sla`]: slice plans, running SLA deficits, deficit classification,
//!   proportional fairness, and Jain's index.
//! - [`schedulers`]: greedy, greedy-plus, deficit-driven orthogonal and
//!   sharing schedulers, a user-level exhaustive-search baseline, an exact
//!   branch-and-bound solver, and an RB-parallel wrapper.
//! - [`harness`]: TTI-loop simulation driver, presets, metrics, benchmarks.
//! - [`config`]: file-format front end for experiment configuration.

pub mod channel;
pub mod config;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod rate;
pub mod schedulers;
pub mod sla;

pub use error::{Error, Result};
