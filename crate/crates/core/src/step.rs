//! Pieces shared by every allocator: the per-step event record, the
//! training helper and the `Allocator` trait.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Population, PromptId};
use crate::grpo::Reward;
use crate::metrics::BudgetLedger;
use crate::traversal::PoolExhausted;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("active pool exhausted: {} active prompts, batch of {} requested", .0.active, .0.requested)]
    PoolExhausted(PoolExhausted),
    #[error("extra pilot rounds exceeded the cap of {cap} without filling the training batch")]
    RoundCapReached { cap: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl From<PoolExhausted> for StepError {
    fn from(e: PoolExhausted) -> Self {
        StepError::PoolExhausted(e)
    }
}

impl StepError {
    /// Exhaustion ends an experiment cleanly rather than failing it.
    pub fn is_exhaustion(&self) -> bool {
        matches!(self, StepError::PoolExhausted(_) | StepError::RoundCapReached { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grpo,
    Dapo,
    Pc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Grpo, Method::Dapo, Method::Pc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::Dapo => "dapo",
            Method::Pc => "pc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// A prompt's training group for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGroup {
    pub prompt_id: PromptId,
    pub rewards: Vec<Reward>,
}

impl AsRef<[Reward]> for TrainedGroup {
    fn as_ref(&self) -> &[Reward] {
        &self.rewards
    }
}

/// A pilot estimate consumed for training, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumedEntry {
    pub prompt_id: PromptId,
    /// Policy version the pilot rewards were sampled under.
    pub pilot_step: u64,
    /// Step at which the estimate entered the replay buffer.
    pub created_step: u64,
    pub pilot_rewards: Vec<Reward>,
}

/// Pilot rewards exactly as sampled, kept for auditing buffered copies.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotRecord {
    pub prompt_id: PromptId,
    pub pilot_step: u64,
    pub rewards: Vec<Reward>,
}

/// Everything an allocator did during one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvent {
    pub step: u64,
    /// Every batch of prompts that received rollouts this step (pilot
    /// batches for Pilot-Commit, sampling batches for the baselines).
    pub sampled_batches: Vec<Vec<PromptId>>,
    /// Pilot-Commit only: every pilot sampled this step, in sampling order.
    pub piloted: Vec<PilotRecord>,
    pub consumed: Vec<ConsumedEntry>,
    pub deferred: Vec<PromptId>,
    pub skipped: Vec<PromptId>,
    pub evicted: Vec<PromptId>,
    pub extra_rounds: u32,
    pub buffer_size: usize,
    pub trained: Vec<TrainedGroup>,
}

/// Count-only view of a [`StepEvent`], one row of the event log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: u64,
    pub selected: usize,
    pub deferred: usize,
    pub skipped: usize,
    pub evicted: usize,
    pub extra_rounds: u32,
    pub buffer_size: usize,
}

impl From<&StepEvent> for EventRecord {
    fn from(e: &StepEvent) -> Self {
        Self {
            step: e.step,
            selected: e.trained.len(),
            deferred: e.deferred.len(),
            skipped: e.skipped.len(),
            evicted: e.evicted.len(),
            extra_rounds: e.extra_rounds,
            buffer_size: e.buffer_size,
        }
    }
}

pub fn write_events_csv<W: io::Write>(events: &[StepEvent], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(EventRecord::from(e))?;
    }
    w.flush()?;
    Ok(())
}

/// Applies one update per group in prompt-id order.
pub fn train(pop: &mut Population, groups: &[TrainedGroup]) -> Result<(), EnvError> {
    let mut order: Vec<&TrainedGroup> = groups.iter().collect();
    order.sort_by_key(|g| g.prompt_id);
    for g in order {
        pop.apply_update(g.prompt_id, &g.rewards)?;
    }
    Ok(())
}

/// A rollout-allocation strategy advanced one training step at a time.
pub trait Allocator {
    fn method(&self) -> Method;

    /// Samples, selects and trains for `step`, charging every rollout to
    /// `ledger`.
    fn step(
        &mut self,
        pop: &mut Population,
        ledger: &mut BudgetLedger,
        step: u64,
    ) -> Result<StepEvent, StepError>;

    /// Entries waiting in a replay buffer after the last step.
    fn buffer_len(&self) -> usize {
        0
    }
}
