//! Configuration, orchestration and reporting for the SDRE / POD-DEIM identification
//! experiments, plus the `sdre-rom` command line.

pub mod config;
pub mod experiment;
pub mod report;
pub mod timing;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, sweep_pod_error, Algorithm, Experiment, OfflineProducts};
pub use report::{RunReport, RunSummary, SweepPoint};
pub use timing::{timing_harness, TimingStats};

/// Environment variable naming the root of all output directories.
pub const OUTPUT_ENV: &str = "SDRE_ROM_OUT";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sdre_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Core(e) if e.is_numerical() => 3,
            ExperimentError::Core(sdre_core::Error::InvalidInput(_))
            | ExperimentError::Core(sdre_core::Error::ActuatorEmpty)
            | ExperimentError::Core(sdre_core::Error::EmptyRegion(_)) => 2,
            _ => 1,
        }
    }
}
