//! Dynamic regret and constraint violation series.
//!
//! Regret at slot `t` accumulates `oracle_t - f_t(x_t)` against the noise-free
//! trace values; the oracle series is whatever baseline the caller provides.
//! Violation at slot `t` is the positive part of the running constraint sum,
//! `[sum_{s<=t} g_s(x_s)]_+`, applied at every prefix so the time-averaged
//! series can be plotted. Both depend only on the trace's noise-free matrices
//! and the chosen arms, never on the noisy observations.

use thiserror::Error;

use crate::env::EnvironmentTrace;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: horizon {horizon}, oracle {oracle}, arms {arms}")]
    LengthMismatch { horizon: usize, oracle: usize, arms: usize },

    #[error("arm {arm} outside 0..{n_arms}")]
    BadArm { arm: usize, n_arms: usize },

    #[error("no runs to aggregate")]
    EmptyRuns,

    #[error("runs have different horizons")]
    MixedHorizons,
}

/// Per-slot diagnostics of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub arms: Vec<usize>,
    /// Noise-free reward of the chosen arm per slot.
    pub rewards_true: Vec<f64>,
    /// Noise-free constraint of the chosen arm per slot.
    pub costs_true: Vec<f64>,
    pub regret_cum: Vec<f64>,
    pub violation_cum: Vec<f64>,
    pub regret_avg: Vec<f64>,
    pub violation_avg: Vec<f64>,
}

impl RunMetrics {
    pub fn horizon(&self) -> usize {
        self.arms.len()
    }
}

/// Fill all series from the trace, the oracle baseline, and the arm choices.
pub fn compute_metrics(
    trace: &EnvironmentTrace,
    oracle_series: &[f64],
    arms: &[usize],
) -> Result<RunMetrics, MetricsError> {
    let horizon = trace.horizon();
    if oracle_series.len() != horizon || arms.len() != horizon {
        return Err(MetricsError::LengthMismatch {
            horizon,
            oracle: oracle_series.len(),
            arms: arms.len(),
        });
    }
    let mut rewards_true = Vec::with_capacity(horizon);
    let mut costs_true = Vec::with_capacity(horizon);
    let mut regret_cum = Vec::with_capacity(horizon);
    let mut violation_cum = Vec::with_capacity(horizon);
    let mut regret_avg = Vec::with_capacity(horizon);
    let mut violation_avg = Vec::with_capacity(horizon);

    let mut regret = 0.0;
    let mut cost_sum = 0.0;
    for (t, (&arm, &oracle)) in arms.iter().zip(oracle_series).enumerate() {
        if arm >= trace.n_arms() {
            return Err(MetricsError::BadArm { arm, n_arms: trace.n_arms() });
        }
        let f = trace.f_value(t + 1, arm);
        let g = trace.g_value(t + 1, arm);
        rewards_true.push(f);
        costs_true.push(g);
        regret += oracle - f;
        cost_sum += g;
        let violation = cost_sum.max(0.0);
        regret_cum.push(regret);
        violation_cum.push(violation);
        let steps = (t + 1) as f64;
        regret_avg.push(regret / steps);
        violation_avg.push(violation / steps);
    }
    Ok(RunMetrics {
        arms: arms.to_vec(),
        rewards_true,
        costs_true,
        regret_cum,
        violation_cum,
        regret_avg,
        violation_avg,
    })
}

/// Per-slot mean and standard error across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub regret_avg_mean: Vec<f64>,
    pub regret_avg_stderr: Vec<f64>,
    pub violation_avg_mean: Vec<f64>,
    pub violation_avg_stderr: Vec<f64>,
}

/// Aggregate the time-averaged series of several runs of equal horizon.
/// Standard error uses the sample standard deviation over sqrt(n); a single
/// run reports zero.
pub fn aggregate_seeds(runs: &[RunMetrics]) -> Result<SeedSummary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::EmptyRuns)?;
    let horizon = first.horizon();
    if runs.iter().any(|r| r.horizon() != horizon) {
        return Err(MetricsError::MixedHorizons);
    }
    let mean_stderr = |select: fn(&RunMetrics) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let n = runs.len() as f64;
        let mut means = vec![0.0; horizon];
        let mut errs = vec![0.0; horizon];
        for t in 0..horizon {
            let mean = runs.iter().map(|r| select(r)[t]).sum::<f64>() / n;
            means[t] = mean;
            if runs.len() > 1 {
                let var = runs.iter().map(|r| (select(r)[t] - mean).powi(2)).sum::<f64>()
                    / (n - 1.0);
                errs[t] = (var / n).sqrt();
            }
        }
        (means, errs)
    };
    let (regret_avg_mean, regret_avg_stderr) = mean_stderr(|r| &r.regret_avg);
    let (violation_avg_mean, violation_avg_stderr) = mean_stderr(|r| &r.violation_avg);
    Ok(SeedSummary { regret_avg_mean, regret_avg_stderr, violation_avg_mean, violation_avg_stderr })
}
