//! Experiment runner for the policy-sharing matrix-game laboratory:
//! config ingestion, seeded run matrices with on-disk artifacts,
//! cross-seed aggregation with confidence intervals, verification of the
//! standard comparison grid, and reference table emission.

pub mod aggregate;
pub mod config;
pub mod demo;
pub mod fmt;
pub mod runner;
pub mod tables;
pub mod verify;
