//! Privacy-preserving trajectory-based contact tracing.
//!
//! A user is a *contact* if one of their visits falls within distance `r` and
//! time window `delta` of a patient visit. This crate classifies whole
//! populations under that definition without exposing either side's
//! trajectory, three ways:
//!
//! * `mpc`: a two-party secure baseline where every user visit is compared
//!   against every patient visit on additive secret shares. Exact, slow.
//! * `geoi`: a plaintext baseline over geo-indistinguishable (planar
//!   Laplace) perturbed locations. Fast, noisy.
//! * `cg`: the combined pipeline, where perturbed locations are submitted to the
//!   server, the server flags candidate indexes under randomized response,
//!   and only the flagged subset goes through the secure comparison. Fast,
//!   and never produces a false positive beyond fixed-point rounding.
//!
//! The crate also ships the benchmark harness used to measure the
//! effectiveness/efficiency trade-off between the three methods: synthetic
//! dataset generation with planted ground truth, check-in CSV ingestion, a
//! TCP transport with a length-prefixed binary framing, an instrumented
//! counting backend for desk-scale scalability runs, and CSV/JSON reports.

pub mod data;
pub mod error;
pub mod experiment;
pub mod fixed;
pub mod geo;
pub mod model;
pub mod net;
pub mod protocols;
pub mod rng;
pub mod secure;

pub use error::{Error, Result};
