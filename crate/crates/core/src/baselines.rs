//! Uniform-allocation baselines sharing the environment, traversal and
//! ledger with Pilot-Commit.
//!
//! GRPO samples `n` rollouts for each of `b_t` prompts and trains on all of
//! them. DAPO samples `n` rollouts for each of `b_g = s * b_t` prompts,
//! drops zero-variance groups and trains on the first `b_t` survivors in
//! traversal order, resampling whole batches until the batch is full.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Population, PromptId};
use crate::grpo;
use crate::metrics::BudgetLedger;
use crate::step::{train, Allocator, Method, StepError, StepEvent, TrainedGroup};
use crate::traversal::EpochTraversal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Rollouts per prompt.
    pub n: usize,
    pub b_t: usize,
    /// DAPO oversampling factor.
    pub oversample_s: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n: 64,
            b_t: 128,
            oversample_s: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid baseline config `{field}`: {reason}")]
pub struct BaselineConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl BaselineConfig {
    pub fn b_g(&self) -> usize {
        self.oversample_s * self.b_t
    }

    pub fn validate(&self) -> Result<(), BaselineConfigError> {
        let err = |field, reason: &str| {
            Err(BaselineConfigError {
                field,
                reason: reason.to_owned(),
            })
        };
        if self.n < 2 {
            return err("n", "must be at least 2");
        }
        if self.b_t == 0 {
            return err("b_t", "must be at least 1");
        }
        if self.oversample_s == 0 {
            return err("oversample_s", "must be at least 1");
        }
        Ok(())
    }

    /// GRPO rollouts per step, sampled and trained alike.
    pub fn grpo_per_step(&self) -> u64 {
        (self.b_t * self.n) as u64
    }

    /// DAPO rollouts sampled per resampling round.
    pub fn dapo_per_round(&self) -> u64 {
        (self.b_g() * self.n) as u64
    }
}

fn sample_groups(
    batch: &[PromptId],
    n: usize,
    pop: &mut Population,
    ledger: &mut BudgetLedger,
) -> Result<Vec<TrainedGroup>, StepError> {
    let mut groups = Vec::with_capacity(batch.len());
    for &id in batch {
        let rewards = pop.sample_rollouts(id, n)?;
        ledger.credit_sampled(n as u64);
        groups.push(TrainedGroup {
            prompt_id: id,
            rewards,
        });
    }
    Ok(groups)
}

pub fn grpo_step(
    pop: &mut Population,
    traversal: &mut EpochTraversal,
    config: &BaselineConfig,
    ledger: &mut BudgetLedger,
    step: u64,
) -> Result<StepEvent, StepError> {
    ledger.begin_step(step);
    let batch = traversal.next_batch(pop, config.b_t)?;
    let trained = sample_groups(&batch, config.n, pop, ledger)?;
    for g in &trained {
        ledger.credit_trained(g.rewards.len() as u64);
    }
    train(pop, &trained)?;
    Ok(StepEvent {
        step,
        sampled_batches: vec![batch],
        trained,
        ..StepEvent::default()
    })
}

pub fn dapo_step(
    pop: &mut Population,
    traversal: &mut EpochTraversal,
    config: &BaselineConfig,
    ledger: &mut BudgetLedger,
    step: u64,
) -> Result<StepEvent, StepError> {
    ledger.begin_step(step);
    let cap = pop.active_count().div_ceil(config.b_g()).max(1);
    let mut event = StepEvent {
        step,
        ..StepEvent::default()
    };
    let mut kept: Vec<TrainedGroup> = Vec::with_capacity(config.b_t);
    let mut seen: HashSet<PromptId> = HashSet::new();
    let mut rounds = 0usize;

    while kept.len() < config.b_t {
        if rounds > cap {
            return Err(StepError::RoundCapReached { cap });
        }
        let batch = traversal.next_batch(pop, config.b_g())?;
        if rounds > 0 {
            ledger.record_extra_round();
            event.extra_rounds += 1;
        }
        rounds += 1;
        for g in sample_groups(&batch, config.n, pop, ledger)? {
            let informative = !grpo::group_stats(&g.rewards)
                .map_err(crate::env::EnvError::from)?
                .is_degenerate();
            if informative && kept.len() < config.b_t && seen.insert(g.prompt_id) {
                kept.push(g);
            }
        }
        event.sampled_batches.push(batch);
    }

    for g in &kept {
        ledger.credit_trained(g.rewards.len() as u64);
    }
    train(pop, &kept)?;
    event.trained = kept;
    Ok(event)
}

#[derive(Debug, Clone)]
pub struct Grpo {
    config: BaselineConfig,
    traversal: EpochTraversal,
}

impl Grpo {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self, BaselineConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            traversal: EpochTraversal::new(seed),
        })
    }
}

impl Allocator for Grpo {
    fn method(&self) -> Method {
        Method::Grpo
    }

    fn step(
        &mut self,
        pop: &mut Population,
        ledger: &mut BudgetLedger,
        step: u64,
    ) -> Result<StepEvent, StepError> {
        grpo_step(pop, &mut self.traversal, &self.config, ledger, step)
    }
}

#[derive(Debug, Clone)]
pub struct Dapo {
    config: BaselineConfig,
    traversal: EpochTraversal,
}

impl Dapo {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self, BaselineConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            traversal: EpochTraversal::new(seed),
        })
    }
}

impl Allocator for Dapo {
    fn method(&self) -> Method {
        Method::Dapo
    }

    fn step(
        &mut self,
        pop: &mut Population,
        ledger: &mut BudgetLedger,
        step: u64,
    ) -> Result<StepEvent, StepError> {
        dapo_step(pop, &mut self.traversal, &self.config, ledger, step)
    }
}
