//! Library side of the enhancement pipeline front end: configuration
//! parsing, per-method orchestration, sweeps, reports, and the selftest
//! suite. The `sie` binary is a thin wrapper over these.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod selftest;
