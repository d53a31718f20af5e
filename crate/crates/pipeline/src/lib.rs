//! Experiment pipeline around the `cita` library: configuration, persistence,
//! a bounded worker pool and the runners behind the `cita` command.

pub mod config;
pub mod error;
pub mod pool;
pub mod results;
pub mod runners;
pub mod tasks;
pub mod workdir;

pub use config::{ExperimentConfig, ExperimentKind, FamilyKind};
pub use error::{PipelineError, Result};
pub use results::{Check, RunOutput};

/// Sixteen hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    cita::content_hash(bytes)[..16].to_string()
}

/// Seed for a named job, derived from a declared seed.
pub fn job_seed(seed: u64, tag: &str) -> u64 {
    let h = cita::content_hash(format!("{seed}/{tag}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}
