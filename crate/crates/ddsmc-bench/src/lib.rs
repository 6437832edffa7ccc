//! Benchmark harness for the ddsmc samplers: experiment configuration, seeded
//! runs scored against exact references, and CSV/plot-data output.

pub mod config;
pub mod results;
pub mod runner;
pub mod scatter;

pub use config::{ExperimentConfig, Task};
pub use results::ResultRow;
pub use runner::run_benchmark;
pub use scatter::export_scatter;
