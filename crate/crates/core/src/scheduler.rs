//! Pilot-Commit rollout allocation.
//!
//! Each step pilots `b_g = s * b_t` prompts with `n_pilot` rollouts, keeps
//! those whose success rate lies in `[p_lower, p_upper]`, evicts prompts at
//! or above `p_solve`, and fills a training batch of `b_t` prompts from the
//! current keeps and then a FIFO replay buffer of earlier survivors. Selected prompts receive
//! `n_commit` fresh rollouts and are trained on the union of their stored
//! pilot rewards and the commit rewards. Buffer entries older than `d`
//! steps are dropped. With binding enabled, the pilot consumed at step `t`
//! is sampled under the policy of step `t - 1`.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Population, PromptId, METHOD_STREAM_BASE};
use crate::grpo::Reward;
use crate::metrics::BudgetLedger;
use crate::step::{
    train, Allocator, ConsumedEntry, Method, PilotRecord, StepError, StepEvent, TrainedGroup,
};
use crate::traversal::EpochTraversal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferOrder {
    /// Oldest entry first.
    #[default]
    Fifo,
    /// Uniform over buffered entries, seeded per run.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub n_pilot: usize,
    pub n_commit: usize,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_solve: f64,
    pub max_age_d: u64,
    pub b_t: usize,
    pub oversample_s: usize,
    pub binding_enabled: bool,
    pub eviction_enabled: bool,
    pub buffer_order: BufferOrder,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            n_pilot: 16,
            n_commit: 48,
            p_lower: 0.125,
            p_upper: 0.75,
            p_solve: 1.0,
            max_age_d: 4,
            b_t: 128,
            oversample_s: 3,
            binding_enabled: true,
            eviction_enabled: true,
            buffer_order: BufferOrder::Fifo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scheduler config `{field}`: {reason}")]
pub struct SchedulerConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl SchedulerConfig {
    /// Sampling batch size `s * b_t`.
    pub fn b_g(&self) -> usize {
        self.oversample_s * self.b_t
    }

    /// Rollouts sampled in a step that needs no extra pilot round.
    pub fn sampled_per_step(&self) -> u64 {
        (self.b_g() * self.n_pilot + self.b_t * self.n_commit) as u64
    }

    pub fn trained_per_step(&self) -> u64 {
        (self.b_t * (self.n_pilot + self.n_commit)) as u64
    }

    pub fn validate(&self) -> Result<(), SchedulerConfigError> {
        let err = |field: &'static str, reason: String| Err(SchedulerConfigError { field, reason });
        if self.n_pilot == 0 {
            return err("n_pilot", "must be at least 1".into());
        }
        if self.n_pilot + self.n_commit < 2 {
            return err("n_commit", "trained groups need at least 2 rollouts".into());
        }
        if self.b_t == 0 {
            return err("b_t", "must be at least 1".into());
        }
        if self.oversample_s == 0 {
            return err("oversample_s", "must be at least 1".into());
        }
        for (field, p) in [("p_lower", self.p_lower), ("p_upper", self.p_upper)] {
            if !(0.0..=1.0).contains(&p) {
                return err(field, format!("{p} not in [0, 1]"));
            }
        }
        if !(self.p_solve > 0.0 && self.p_solve <= 1.0) {
            return err("p_solve", format!("{} not in (0, 1]", self.p_solve));
        }
        if self.p_lower > self.p_upper {
            return err(
                "p_lower",
                format!("{} exceeds p_upper {}", self.p_lower, self.p_upper),
            );
        }
        if self.p_upper > self.p_solve {
            return err(
                "p_upper",
                format!("{} exceeds p_solve {}", self.p_upper, self.p_solve),
            );
        }
        Ok(())
    }
}

/// Pilot outcome for one prompt. `p_hat` is the rational `successes / trials`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    pub prompt_id: PromptId,
    pub successes: u32,
    pub trials: u32,
    pub pilot_rewards: Vec<Reward>,
    pub pilot_step: u64,
}

impl PilotEstimate {
    pub fn from_rewards(prompt_id: PromptId, pilot_rewards: Vec<Reward>, pilot_step: u64) -> Self {
        let successes = pilot_rewards.iter().map(|&r| u32::from(r)).sum();
        Self {
            prompt_id,
            successes,
            trials: pilot_rewards.len() as u32,
            pilot_rewards,
            pilot_step,
        }
    }

    /// The correctly rounded quotient `successes / trials`. Comparing it with
    /// a threshold is exact for dyadic thresholds such as 0.125 or 0.75, and
    /// a decimal threshold equal to `k/n` after rounding compares as equal.
    pub fn p_hat(&self) -> f64 {
        f64::from(self.successes) / f64::from(self.trials)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    DeferHard,
    SkipEasy,
}

/// Inclusive keep band `p_lower <= p_hat <= p_upper`.
pub fn classify(estimate: &PilotEstimate, config: &SchedulerConfig) -> Verdict {
    let p = estimate.p_hat();
    if p < config.p_lower {
        Verdict::DeferHard
    } else if p > config.p_upper {
        Verdict::SkipEasy
    } else {
        Verdict::Keep
    }
}

pub fn should_evict(estimate: &PilotEstimate, config: &SchedulerConfig) -> bool {
    estimate.p_hat() >= config.p_solve
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub estimate: PilotEstimate,
    pub created_step: u64,
}

impl BufferEntry {
    pub fn age(&self, current_step: u64) -> u64 {
        current_step.saturating_sub(self.created_step)
    }
}

/// Pilot survivors awaiting commit. Holds at most one entry per prompt.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<BufferEntry>,
    order: BufferOrder,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(order: BufferOrder, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(METHOD_STREAM_BASE + Method::Pc as u64);
        Self {
            entries: VecDeque::new(),
            order,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Appends at the back, replacing any older entry for the same prompt.
    pub fn push(&mut self, entry: BufferEntry) {
        self.remove(entry.estimate.prompt_id);
        self.entries.push_back(entry);
    }

    pub fn remove(&mut self, id: PromptId) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| e.estimate.prompt_id != id);
        before != self.entries.len()
    }

    /// Drops entries with `current_step - created_step > max_age`.
    pub fn expire(&mut self, current_step: u64, max_age: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.age(current_step) <= max_age);
        before - self.entries.len()
    }

    pub fn take_next(&mut self) -> Option<BufferEntry> {
        match self.order {
            BufferOrder::Fifo => self.entries.pop_front(),
            BufferOrder::Random => {
                if self.entries.is_empty() {
                    None
                } else {
                    let i = self.rng.random_range(0..self.entries.len());
                    self.entries.remove(i)
                }
            }
        }
    }
}

/// Selection for one training step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepPlan {
    pub selected: Vec<ConsumedEntry>,
    pub deferred_hard: Vec<PromptId>,
    pub skipped_easy: Vec<PromptId>,
    pub evicted: Vec<PromptId>,
    pub extra_pilot_rounds: u32,
    /// Prompt batches piloted while planning (extra rounds only).
    pub extra_batches: Vec<Vec<PromptId>>,
    /// Rewards of those extra pilots.
    pub extra_pilots: Vec<PilotRecord>,
}

impl PilotEstimate {
    pub fn record(&self) -> PilotRecord {
        PilotRecord {
            prompt_id: self.prompt_id,
            pilot_step: self.pilot_step,
            rewards: self.pilot_rewards.clone(),
        }
    }
}

/// Samples `n_pilot` rollouts for each prompt of `batch`.
///
/// `logits` selects the policy version to sample under (indexed by prompt
/// id); `None` samples under the current policy.
pub fn run_pilot(
    batch: &[PromptId],
    pop: &mut Population,
    config: &SchedulerConfig,
    ledger: &mut BudgetLedger,
    pilot_step: u64,
    logits: Option<&[f64]>,
) -> Result<Vec<PilotEstimate>, StepError> {
    for &id in batch {
        if !pop.get(id)?.is_active() {
            return Err(EnvError::Evicted(id).into());
        }
    }
    let mut estimates = Vec::with_capacity(batch.len());
    for &id in batch {
        let rewards = match logits {
            Some(l) => pop.sample_rollouts_at(id, config.n_pilot, l[id.index()])?,
            None => pop.sample_rollouts(id, config.n_pilot)?,
        };
        ledger.credit_sampled(config.n_pilot as u64);
        estimates.push(PilotEstimate::from_rewards(id, rewards, pilot_step));
    }
    Ok(estimates)
}

/// Classifies one pilot batch. Keeps are returned in batch order rather
/// than buffered so the caller can consume them ahead of the backlog.
fn triage(
    plan: &mut StepPlan,
    estimates: Vec<PilotEstimate>,
    buffer: &mut ReplayBuffer,
    current_step: u64,
    config: &SchedulerConfig,
    pop: &mut Population,
    selected: &HashSet<PromptId>,
) -> Result<Vec<BufferEntry>, StepError> {
    let mut keeps = Vec::new();
    for est in estimates {
        let id = est.prompt_id;
        if selected.contains(&id) {
            continue;
        }
        // the newest pilot supersedes anything recorded for this prompt
        buffer.remove(id);
        keeps.retain(|k: &BufferEntry| k.estimate.prompt_id != id);
        plan.deferred_hard.retain(|&d| d != id);
        plan.skipped_easy.retain(|&s| s != id);

        let verdict = classify(&est, config);
        if config.eviction_enabled && should_evict(&est, config) {
            pop.evict(id)?;
            plan.evicted.push(id);
            if verdict == Verdict::SkipEasy {
                plan.skipped_easy.push(id);
            }
            continue;
        }
        match verdict {
            Verdict::Keep => keeps.push(BufferEntry {
                estimate: est,
                created_step: current_step,
            }),
            Verdict::DeferHard => plan.deferred_hard.push(id),
            Verdict::SkipEasy => plan.skipped_easy.push(id),
        }
    }
    Ok(keeps)
}

fn consume(plan: &mut StepPlan, chosen: &mut HashSet<PromptId>, entry: BufferEntry) {
    let id = entry.estimate.prompt_id;
    if chosen.insert(id) {
        plan.selected.push(ConsumedEntry {
            prompt_id: id,
            pilot_step: entry.estimate.pilot_step,
            created_step: entry.created_step,
            pilot_rewards: entry.estimate.pilot_rewards,
        });
    }
}

/// Fills `b_t` slots: this step's keeps first in batch order, then the
/// replay buffer oldest first, then fresh pilot rounds under the current
/// policy if both run dry. Unused keeps join the back of the buffer.
/// Expects `buffer` to be already aged for `current_step`.
pub fn plan_step(
    estimates: Vec<PilotEstimate>,
    buffer: &mut ReplayBuffer,
    current_step: u64,
    config: &SchedulerConfig,
    pop: &mut Population,
    traversal: &mut EpochTraversal,
    ledger: &mut BudgetLedger,
) -> Result<StepPlan, StepError> {
    let mut plan = StepPlan::default();
    let mut chosen: HashSet<PromptId> = HashSet::new();
    let mut keeps = triage(&mut plan, estimates, buffer, current_step, config, pop, &chosen)?;

    let mut round_cap: Option<usize> = None;
    loop {
        let mut fresh = keeps.into_iter();
        while plan.selected.len() < config.b_t {
            match fresh.next() {
                Some(entry) => consume(&mut plan, &mut chosen, entry),
                None => break,
            }
        }
        for entry in fresh {
            buffer.push(entry);
        }
        while plan.selected.len() < config.b_t {
            match buffer.take_next() {
                Some(entry) => consume(&mut plan, &mut chosen, entry),
                None => break,
            }
        }
        if plan.selected.len() >= config.b_t {
            break;
        }
        let cap = *round_cap.get_or_insert_with(|| pop.active_count().div_ceil(config.b_g()));
        if plan.extra_pilot_rounds as usize >= cap {
            return Err(StepError::RoundCapReached { cap });
        }
        let batch = traversal.next_batch(pop, config.b_g())?;
        let estimates = run_pilot(&batch, pop, config, ledger, current_step, None)?;
        plan.extra_pilot_rounds += 1;
        ledger.record_extra_round();
        plan.extra_batches.push(batch);
        plan.extra_pilots.extend(estimates.iter().map(PilotEstimate::record));
        keeps = triage(&mut plan, estimates, buffer, current_step, config, pop, &chosen)?;
    }

    buffer.expire(current_step, config.max_age_d);
    Ok(plan)
}

/// Samples `n_commit` fresh rollouts per selected prompt under the current
/// policy and returns pilot-prefixed training groups.
pub fn run_commit(
    plan: &StepPlan,
    pop: &mut Population,
    config: &SchedulerConfig,
    ledger: &mut BudgetLedger,
) -> Result<Vec<TrainedGroup>, StepError> {
    let mut groups = Vec::with_capacity(plan.selected.len());
    for entry in &plan.selected {
        let mut rewards = entry.pilot_rewards.clone();
        if config.n_commit > 0 {
            rewards.extend(pop.sample_rollouts(entry.prompt_id, config.n_commit)?);
            ledger.credit_sampled(config.n_commit as u64);
        }
        ledger.credit_trained(rewards.len() as u64);
        groups.push(TrainedGroup {
            prompt_id: entry.prompt_id,
            rewards,
        });
    }
    Ok(groups)
}

/// Pilot-Commit state machine: traversal cursor, replay buffer and the
/// previous policy snapshot used by the pilot/commit binding.
#[derive(Debug, Clone)]
pub struct PilotCommit {
    config: SchedulerConfig,
    traversal: EpochTraversal,
    buffer: ReplayBuffer,
    previous_logits: Option<Vec<f64>>,
}

impl PilotCommit {
    pub fn new(config: SchedulerConfig, seed: u64) -> Result<Self, SchedulerConfigError> {
        config.validate()?;
        Ok(Self {
            traversal: EpochTraversal::new(seed),
            buffer: ReplayBuffer::new(config.buffer_order, seed),
            config,
            previous_logits: None,
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn traversal(&self) -> &EpochTraversal {
        &self.traversal
    }
}

impl Allocator for PilotCommit {
    fn method(&self) -> Method {
        Method::Pc
    }

    fn step(
        &mut self,
        pop: &mut Population,
        ledger: &mut BudgetLedger,
        step: u64,
    ) -> Result<StepEvent, StepError> {
        let config = self.config.clone();
        ledger.begin_step(step);
        self.buffer.expire(step, config.max_age_d);

        let current = pop.logits();
        let stale = if config.binding_enabled {
            self.previous_logits.take()
        } else {
            None
        };
        let pilot_step = if stale.is_some() { step - 1 } else { step };

        let batch = self.traversal.next_batch(pop, config.b_g())?;
        let estimates = run_pilot(&batch, pop, &config, ledger, pilot_step, stale.as_deref())?;
        let mut piloted: Vec<PilotRecord> = estimates.iter().map(PilotEstimate::record).collect();
        let plan = plan_step(
            estimates,
            &mut self.buffer,
            step,
            &config,
            pop,
            &mut self.traversal,
            ledger,
        )?;
        let trained = run_commit(&plan, pop, &config, ledger)?;
        train(pop, &trained)?;
        if config.binding_enabled {
            self.previous_logits = Some(current);
        }

        let mut sampled_batches = vec![batch];
        sampled_batches.extend(plan.extra_batches);
        piloted.extend(plan.extra_pilots);
        Ok(StepEvent {
            step,
            sampled_batches,
            piloted,
            consumed: plan.selected,
            deferred: plan.deferred_hard,
            skipped: plan.skipped_easy,
            evicted: plan.evicted,
            extra_rounds: plan.extra_pilot_rounds,
            buffer_size: self.buffer.len(),
            trained,
        })
    }

    fn buffer_len(&self) -> usize {
        self.buffer.len()
    }
}
