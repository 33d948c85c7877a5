//! Rollout accounting and per-step training metrics.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{self, GroupError, Reward};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no trained groups to average")]
    NoGroups,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: u64,
    pub sampled: u64,
    pub trained: u64,
    pub extra_rounds: u32,
}

/// Exact sampled/trained rollout counts, per step and cumulative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub sampled_total: u64,
    pub trained_total: u64,
    pub per_step: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens the entry that subsequent credits are charged to.
    pub fn begin_step(&mut self, step: u64) {
        self.per_step.push(LedgerEntry {
            step,
            sampled: 0,
            trained: 0,
            extra_rounds: 0,
        });
    }

    fn current(&mut self) -> &mut LedgerEntry {
        if self.per_step.is_empty() {
            self.begin_step(0);
        }
        self.per_step.last_mut().expect("entry exists")
    }

    pub fn credit_sampled(&mut self, rollouts: u64) {
        self.current().sampled += rollouts;
        self.sampled_total += rollouts;
    }

    pub fn credit_trained(&mut self, rollouts: u64) {
        self.current().trained += rollouts;
        self.trained_total += rollouts;
    }

    pub fn record_extra_round(&mut self) {
        self.current().extra_rounds += 1;
    }

    pub fn last(&self) -> Option<&LedgerEntry> {
        self.per_step.last()
    }

    /// Totals equal the sum of the per-step entries.
    pub fn is_consistent(&self) -> bool {
        let sampled: u64 = self.per_step.iter().map(|e| e.sampled).sum();
        let trained: u64 = self.per_step.iter().map(|e| e.trained).sum();
        sampled == self.sampled_total && trained == self.trained_total
    }

    pub fn steps_with_extra_rounds(&self) -> usize {
        self.per_step.iter().filter(|e| e.extra_rounds > 0).count()
    }

    pub fn mean_sampled_per_step(&self) -> f64 {
        if self.per_step.is_empty() {
            0.0
        } else {
            self.sampled_total as f64 / self.per_step.len() as f64
        }
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_success: f64,
    pub mean_reward_std: f64,
    #[serde(rename = "sampled_cum")]
    pub sampled_cumulative: u64,
    #[serde(rename = "trained_cum")]
    pub trained_cumulative: u64,
    pub buffer_size: usize,
    #[serde(rename = "evictions_cum")]
    pub evictions_cumulative: usize,
    pub extra_rounds: u32,
}

/// Column order of the metrics table.
pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "mean_success",
    "mean_reward_std",
    "sampled_cum",
    "trained_cum",
    "buffer_size",
    "evictions_cum",
    "extra_rounds",
];

/// Cumulative sampled rollouts at the first step reaching `target`, or
/// `None` if the series never gets there.
pub fn rollouts_to_target(series: &[StepMetrics], target: f64) -> Option<u64> {
    series
        .iter()
        .find(|m| m.mean_success >= target)
        .map(|m| m.sampled_cumulative)
}

/// `a / b`, undefined when either side never reached the target.
pub fn efficiency_ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn mean_group_std<G: AsRef<[Reward]>>(groups: &[G]) -> Result<f64, MetricsError> {
    if groups.is_empty() {
        return Err(MetricsError::NoGroups);
    }
    let mut total = 0.0;
    for g in groups {
        total += grpo::group_stats(g.as_ref())?.std;
    }
    Ok(total / groups.len() as f64)
}

pub fn peak_success(series: &[StepMetrics]) -> Option<f64> {
    series.iter().map(|m| m.mean_success).reduce(f64::max)
}

/// Seed-averaged view of several runs of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedPoint {
    pub step: u64,
    pub mean_success: f64,
    pub sampled_cumulative: f64,
}

/// Averages runs step by step over their common prefix.
pub fn average_series(runs: &[&[StepMetrics]]) -> Vec<AveragedPoint> {
    let Some(len) = runs.iter().map(|r| r.len()).min() else {
        return Vec::new();
    };
    let k = runs.len() as f64;
    (0..len)
        .map(|i| AveragedPoint {
            step: runs[0][i].step,
            mean_success: runs.iter().map(|r| r[i].mean_success).sum::<f64>() / k,
            sampled_cumulative: runs.iter().map(|r| r[i].sampled_cumulative as f64).sum::<f64>() / k,
        })
        .collect()
}

pub fn averaged_rollouts_to_target(series: &[AveragedPoint], target: f64) -> Option<f64> {
    series
        .iter()
        .find(|m| m.mean_success >= target)
        .map(|m| m.sampled_cumulative)
}

pub fn averaged_peak(series: &[AveragedPoint]) -> Option<f64> {
    series.iter().map(|m| m.mean_success).reduce(f64::max)
}

pub fn write_metrics_csv<W: io::Write>(series: &[StepMetrics], out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for row in series {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: io::Read>(input: R) -> Result<Vec<StepMetrics>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(MetricsError::from)).collect()
}
