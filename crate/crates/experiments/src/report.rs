use std::io::Write;

use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;
pub const SWEEP_CSV_VERSION: u32 = 1;

/// Deterministic summary of one invocation; wall-clock figures live in `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub name: String,
    pub problem: String,
    pub grid: [usize; 2],
    pub dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub mu_true: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_scale: f64,
    pub domain: Vec<[f64; 2]>,
    pub sigma_hat: f64,
    pub seed: u64,
    pub offline: Option<OfflineSummary>,
    pub runs: Vec<RunSummary>,
    pub sweep: Vec<SweepPoint>,
    /// Stage failures that prevented a section from being filled.
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn run(&self, algorithm: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn has_numerical_failure(&self) -> bool {
        !self.failures.is_empty()
            || self.runs.iter().any(|r| r.failure.is_some())
            || self.sweep.iter().any(|p| p.failure.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSummary {
    pub strategy: String,
    pub snapshot_columns: usize,
    pub parameter_grid: Vec<Vec<f64>>,
    pub rejected: Vec<Vec<f64>>,
    pub pod_rank: usize,
    /// DEIM size per term; 0 marks a Galerkin-projected constant term.
    pub deim_sizes: Vec<usize>,
    pub basis_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    /// Set when the run aborted; the remaining fields are then absent.
    pub failure: Option<String>,
    /// `dt · Σ stage_cost` over the rows of `steps_csv`.
    pub cost: Option<f64>,
    pub final_mean: Option<Vec<f64>>,
    pub relative_error: Option<Vec<f64>>,
    pub terminal_inf_norm: Option<f64>,
    pub contraction_violations: Option<usize>,
    pub held_steps: Option<usize>,
    pub steps_csv: Option<String>,
}

impl RunSummary {
    pub fn failed(algorithm: &str, failure: String) -> Self {
        RunSummary {
            algorithm: algorithm.to_string(),
            failure: Some(failure),
            cost: None,
            final_mean: None,
            relative_error: None,
            terminal_inf_norm: None,
            contraction_violations: None,
            held_steps: None,
            steps_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub strategy: String,
    /// Requested size, or `rank` for the numerical rank of the snapshots.
    pub requested: String,
    pub pod_rank: usize,
    pub state_error: Option<f64>,
    pub cost_error: Option<f64>,
    pub relative_cost_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub entries: Vec<TimingEntry>,
}

impl TimingReport {
    pub fn push(&mut self, label: impl Into<String>, seconds: f64) {
        self.entries.push(TimingEntry {
            label: label.into(),
            seconds,
        });
    }
}

pub fn write_sweep_csv<W: Write>(mut out: W, points: &[SweepPoint], seconds: &[f64]) -> std::io::Result<()> {
    writeln!(out, "# sweep-csv v{SWEEP_CSV_VERSION}")?;
    writeln!(out, "strategy,requested,pod_rank,state_error,cost_error,relative_cost_error,seconds,failure")?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.12e}"));
    for (i, p) in points.iter().enumerate() {
        let secs = seconds.get(i).map_or_else(String::new, |s| format!("{s:.6e}"));
        let failure = p.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.strategy,
            p.requested,
            p.pod_rank,
            opt(p.state_error),
            opt(p.cost_error),
            opt(p.relative_cost_error),
            secs,
            failure
        )?;
    }
    Ok(())
}
