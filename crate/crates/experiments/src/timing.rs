use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: Vec<f64>,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl TimingStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "timing needs at least one sample");
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        samples.shrink_to_fit();
        TimingStats {
            median,
            min: sorted[0],
            max: sorted[n - 1],
            samples,
        }
    }

    /// `(max − min) / median`
    pub fn spread(&self) -> f64 {
        if self.median > 0.0 {
            (self.max - self.min) / self.median
        } else {
            0.0
        }
    }
}

/// Runs `work` `repetitions` times (at least once) and returns the wall-clock statistics
/// together with the last result.
pub fn timing_harness<T, E>(
    repetitions: usize,
    mut work: impl FnMut() -> Result<T, E>,
) -> Result<(TimingStats, T), E> {
    let mut samples = Vec::with_capacity(repetitions.max(1));
    let mut last = None;
    for _ in 0..repetitions.max(1) {
        let clock = Instant::now();
        let value = work()?;
        samples.push(clock.elapsed().as_secs_f64());
        last = Some(value);
    }
    Ok((TimingStats::from_samples(samples), last.expect("at least one repetition")))
}
