//! Workload generation and benchmarks for the geo-context broker.
//!
//! - [`trajectory`]: PLT parsing, directory loading, synthetic walks.
//! - [`experiment`]: travel and teleporting clients against a running broker.
//! - [`report`]: latency statistics, delivery accounting, CSV and JSON.
//! - [`bench`]: the in-process index benchmark and the fixed operation mix.
//! - [`heatmap`]: location density export.

pub mod bench;
pub mod experiment;
pub mod heatmap;
pub mod report;
pub mod trajectory;
