//! Synthetic prompt population where each prompt is a one-parameter
//! Bernoulli policy `p = sigmoid(logit)`.
//!
//! The difficulty model is a stand-in: a mixture of hard, mid and easy
//! prompts plus a frozen "hopeless" slice. Every prompt owns its own
//! ChaCha stream keyed by `(seed, prompt id)`, so the order in which an
//! allocator visits prompts never changes what another prompt draws.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{self, logit, sigmoid, GroupError, Reward};

/// Stream ids above the prompt range are reserved for population setup
/// and epoch traversal.
pub(crate) const INIT_STREAM: u64 = u64::MAX;
pub(crate) const TRAVERSAL_STREAM: u64 = u64::MAX - 1;
pub(crate) const METHOD_STREAM_BASE: u64 = u64::MAX - 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

impl PromptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStatus {
    Active,
    Evicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    pub id: PromptId,
    pub logit: f64,
    pub status: PromptStatus,
    /// `false` freezes the logit (unsolvable prompt).
    pub learnable: bool,
    pub created_epoch: u64,
}

impl PromptState {
    pub fn success_probability(&self) -> f64 {
        sigmoid(self.logit)
    }

    pub fn is_active(&self) -> bool {
        self.status == PromptStatus::Active
    }
}

/// Initial difficulty mixture. Weights are relative and need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultyMixture {
    pub hard_weight: f64,
    pub mid_weight: f64,
    pub easy_weight: f64,
    pub hard_p: f64,
    pub mid_p_low: f64,
    pub mid_p_high: f64,
    pub easy_p: f64,
}

impl Default for DifficultyMixture {
    fn default() -> Self {
        Self {
            hard_weight: 0.45,
            mid_weight: 0.35,
            easy_weight: 0.20,
            hard_p: 0.02,
            mid_p_low: 0.2,
            mid_p_high: 0.8,
            easy_p: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub population_size: usize,
    pub mixture: DifficultyMixture,
    pub hopeless_fraction: f64,
    pub hopeless_p: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            population_size: 4096,
            mixture: DifficultyMixture::default(),
            hopeless_fraction: 0.1,
            hopeless_p: 0.001,
            learning_rate: 0.12,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let invalid = |field: &'static str, reason: String| EnvError::InvalidConfig { field, reason };
        if !(0.0..1.0).contains(&self.hopeless_fraction) {
            return Err(invalid(
                "hopeless_fraction",
                format!("{} not in [0, 1)", self.hopeless_fraction),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(
                "learning_rate",
                format!("{} must be finite and > 0", self.learning_rate),
            ));
        }
        if u32::try_from(self.population_size).is_err() {
            return Err(invalid(
                "population_size",
                format!("{} exceeds u32 range", self.population_size),
            ));
        }
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        let m = &self.mixture;
        for (field, p) in [
            ("hopeless_p", self.hopeless_p),
            ("mixture.hard_p", m.hard_p),
            ("mixture.easy_p", m.easy_p),
            ("mixture.mid_p_low", m.mid_p_low),
            ("mixture.mid_p_high", m.mid_p_high),
        ] {
            if !open_unit(p) {
                return Err(invalid(field, format!("{p} not in (0, 1)")));
            }
        }
        if m.mid_p_low > m.mid_p_high {
            return Err(invalid(
                "mixture.mid_p_low",
                format!("{} exceeds mid_p_high {}", m.mid_p_low, m.mid_p_high),
            ));
        }
        let weights = [
            ("mixture.hard_weight", m.hard_weight),
            ("mixture.mid_weight", m.mid_weight),
            ("mixture.easy_weight", m.easy_weight),
        ];
        for (field, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(field, format!("{w} must be finite and >= 0")));
            }
        }
        if weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
            return Err(invalid("mixture", "weights sum to zero".into()));
        }
        Ok(())
    }

    /// Number of frozen prompts: `floor(hopeless_fraction * population_size)`.
    pub fn hopeless_count(&self) -> usize {
        (self.hopeless_fraction * self.population_size as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid env config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("prompt {0} is evicted and cannot be sampled")]
    Evicted(PromptId),
    #[error("prompt {0} is not in the population")]
    UnknownPrompt(PromptId),
    #[error("rollout count must be at least 1")]
    ZeroCount,
    #[error("population is empty")]
    Empty,
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Owned prompt population plus the independent draw counter used to audit
/// allocator ledgers.
#[derive(Debug, Clone)]
pub struct Population {
    prompts: Vec<PromptState>,
    streams: Vec<ChaCha8Rng>,
    learning_rate: f64,
    seed: u64,
    draws: u64,
}

pub fn init_population(config: &EnvConfig) -> Result<Population, EnvError> {
    Population::new(config)
}

impl Population {
    pub fn new(config: &EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let n = config.population_size;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);

        let mut hopeless = vec![false; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in order.iter().take(config.hopeless_count()) {
            hopeless[i] = true;
        }

        let m = &config.mixture;
        let total = m.hard_weight + m.mid_weight + m.easy_weight;
        let mut prompts = Vec::with_capacity(n);
        let mut streams = Vec::with_capacity(n);
        for (i, &frozen) in hopeless.iter().enumerate() {
            // one draw for the component and one for the mid-range position,
            // consumed unconditionally so adding hopeless prompts does not
            // shift everyone else's difficulty
            let u: f64 = rng.random::<f64>() * total;
            let v: f64 = rng.random();
            let p = if frozen {
                config.hopeless_p
            } else if u < m.hard_weight {
                m.hard_p
            } else if u < m.hard_weight + m.mid_weight {
                m.mid_p_low + v * (m.mid_p_high - m.mid_p_low)
            } else {
                m.easy_p
            };
            prompts.push(PromptState {
                id: PromptId(i as u32),
                logit: logit(p),
                status: PromptStatus::Active,
                learnable: !frozen,
                created_epoch: 0,
            });
            let mut stream = ChaCha8Rng::seed_from_u64(config.seed);
            stream.set_stream(i as u64);
            streams.push(stream);
        }

        Ok(Self {
            prompts,
            streams,
            learning_rate: config.learning_rate,
            seed: config.seed,
            draws: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn prompts(&self) -> &[PromptState] {
        &self.prompts
    }

    pub fn get(&self, id: PromptId) -> Result<&PromptState, EnvError> {
        self.prompts.get(id.index()).ok_or(EnvError::UnknownPrompt(id))
    }

    pub fn active_ids(&self) -> impl Iterator<Item = PromptId> + '_ {
        self.prompts.iter().filter(|p| p.is_active()).map(|p| p.id)
    }

    pub fn active_count(&self) -> usize {
        self.prompts.iter().filter(|p| p.is_active()).count()
    }

    pub fn evicted_count(&self) -> usize {
        self.prompts.len() - self.active_count()
    }

    /// Total Bernoulli draws taken from all prompt streams so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    pub fn logits(&self) -> Vec<f64> {
        self.prompts.iter().map(|p| p.logit).collect()
    }

    /// Draws `count` rewards at the prompt's current success probability.
    pub fn sample_rollouts(&mut self, id: PromptId, count: usize) -> Result<Vec<Reward>, EnvError> {
        let logit = self.get(id)?.logit;
        self.sample_rollouts_at(id, count, logit)
    }

    /// Draws `count` rewards from the prompt's stream at an explicit logit,
    /// used to sample under an earlier policy version.
    pub fn sample_rollouts_at(
        &mut self,
        id: PromptId,
        count: usize,
        logit: f64,
    ) -> Result<Vec<Reward>, EnvError> {
        let prompt = self.get(id)?;
        if !prompt.is_active() {
            return Err(EnvError::Evicted(id));
        }
        if count == 0 {
            return Err(EnvError::ZeroCount);
        }
        let p = sigmoid(logit);
        let stream = &mut self.streams[id.index()];
        let rewards = (0..count)
            .map(|_| Reward::from(stream.random::<f64>() < p))
            .collect();
        self.draws += count as u64;
        Ok(rewards)
    }

    /// Applies one aggregate update and returns the logit change.
    pub fn apply_update(&mut self, id: PromptId, rewards: &[Reward]) -> Result<f64, EnvError> {
        let lr = self.learning_rate;
        let prompt = self
            .prompts
            .get_mut(id.index())
            .ok_or(EnvError::UnknownPrompt(id))?;
        if !prompt.is_active() {
            return Err(EnvError::Evicted(id));
        }
        let updated = apply_update(prompt, rewards, lr)?;
        let delta = updated.logit - prompt.logit;
        *prompt = updated;
        Ok(delta)
    }

    /// Removes the prompt from all future sampling. Idempotent.
    pub fn evict(&mut self, id: PromptId) -> Result<(), EnvError> {
        let prompt = self
            .prompts
            .get_mut(id.index())
            .ok_or(EnvError::UnknownPrompt(id))?;
        prompt.status = PromptStatus::Evicted;
        Ok(())
    }

    pub fn mean_success(&self) -> Result<f64, EnvError> {
        eval_mean_success(&self.prompts)
    }
}

/// `logit += learning_rate * surrogate_gradient(logit, rewards)` for
/// learnable prompts; degenerate groups leave the logit unchanged.
pub fn apply_update(
    prompt: &PromptState,
    rewards: &[Reward],
    learning_rate: f64,
) -> Result<PromptState, EnvError> {
    if rewards.is_empty() {
        return Err(GroupError::TooSmall { len: 0 }.into());
    }
    let mut next = prompt.clone();
    if !prompt.learnable {
        return Ok(next);
    }
    let grad = grpo::surrogate_gradient(prompt.logit, rewards)?;
    next.logit += learning_rate * grad;
    Ok(next)
}

/// Mean success probability over every prompt, evicted and frozen ones
/// included.
pub fn eval_mean_success(prompts: &[PromptState]) -> Result<f64, EnvError> {
    if prompts.is_empty() {
        return Err(EnvError::Empty);
    }
    Ok(prompts.iter().map(PromptState::success_probability).sum::<f64>() / prompts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> EnvConfig {
        EnvConfig {
            population_size: 64,
            seed,
            ..EnvConfig::default()
        }
    }

    fn prompt(logit: f64) -> PromptState {
        PromptState {
            id: PromptId(0),
            logit,
            status: PromptStatus::Active,
            learnable: true,
            created_epoch: 0,
        }
    }

    #[test]
    fn empty_population() {
        let pop = init_population(&EnvConfig {
            population_size: 0,
            ..EnvConfig::default()
        })
        .unwrap();
        assert!(pop.is_empty());
        assert_eq!(pop.mean_success(), Err(EnvError::Empty));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_population(&small(7)).unwrap();
        let b = init_population(&small(7)).unwrap();
        assert_eq!(a.prompts(), b.prompts());
        let c = init_population(&small(8)).unwrap();
        assert_ne!(a.prompts(), c.prompts());
    }

    #[test]
    fn hopeless_count_is_floored() {
        let cfg = EnvConfig {
            population_size: 1000,
            hopeless_fraction: 0.1,
            ..EnvConfig::default()
        };
        let pop = init_population(&cfg).unwrap();
        let frozen: Vec<_> = pop.prompts().iter().filter(|p| !p.learnable).collect();
        assert_eq!(frozen.len(), 100);
        for p in frozen {
            assert!((p.success_probability() - 0.001).abs() < 1e-12);
        }
        let cfg = EnvConfig {
            population_size: 15,
            hopeless_fraction: 0.1,
            ..EnvConfig::default()
        };
        assert_eq!(cfg.hopeless_count(), 1);
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let bad = EnvConfig {
            hopeless_fraction: 1.0,
            ..EnvConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(EnvError::InvalidConfig { field: "hopeless_fraction", .. })
        ));
        let bad = EnvConfig {
            learning_rate: 0.0,
            ..EnvConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(EnvError::InvalidConfig { field: "learning_rate", .. })
        ));
    }

    #[test]
    fn saturated_prompts_sample_constant_rewards() {
        let mut pop = init_population(&small(1)).unwrap();
        let id = PromptId(3);
        assert_eq!(pop.sample_rollouts_at(id, 16, -1e9).unwrap(), vec![0; 16]);
        assert_eq!(pop.sample_rollouts_at(id, 16, 1e9).unwrap(), vec![1; 16]);
        assert_eq!(pop.draw_count(), 32);
    }

    #[test]
    fn evicted_prompt_cannot_be_sampled() {
        let mut pop = init_population(&small(1)).unwrap();
        pop.evict(PromptId(5)).unwrap();
        assert_eq!(
            pop.sample_rollouts(PromptId(5), 4),
            Err(EnvError::Evicted(PromptId(5)))
        );
        assert_eq!(pop.sample_rollouts(PromptId(6), 0), Err(EnvError::ZeroCount));
        assert_eq!(
            pop.sample_rollouts(PromptId(999), 1),
            Err(EnvError::UnknownPrompt(PromptId(999)))
        );
        assert_eq!(pop.draw_count(), 0);
    }

    #[test]
    fn streams_are_independent_of_visit_order() {
        let mut a = init_population(&small(3)).unwrap();
        let mut b = init_population(&small(3)).unwrap();
        let a1 = a.sample_rollouts_at(PromptId(1), 32, 0.0).unwrap();
        let a2 = a.sample_rollouts_at(PromptId(2), 32, 0.0).unwrap();
        let b2 = b.sample_rollouts_at(PromptId(2), 32, 0.0).unwrap();
        let b1 = b.sample_rollouts_at(PromptId(1), 32, 0.0).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
    }

    #[test]
    fn update_examples() {
        let frozen = PromptState {
            learnable: false,
            ..prompt(0.0)
        };
        assert_eq!(apply_update(&frozen, &[1, 0, 0, 0], 1.0).unwrap().logit, 0.0);
        assert_eq!(apply_update(&prompt(0.3), &[1, 1, 1], 1.0).unwrap().logit, 0.3);
        let next = apply_update(&prompt(0.0), &[1, 1, 0, 0], 1.0).unwrap();
        assert!((next.logit - 0.5).abs() < 1e-12);
        assert!(apply_update(&prompt(0.0), &[], 1.0).is_err());
    }

    #[test]
    fn mean_success_examples() {
        let all_zero: Vec<_> = (0..4).map(|_| prompt(0.0)).collect();
        assert_eq!(eval_mean_success(&all_zero).unwrap(), 0.5);
        let split = vec![prompt(-1e300), prompt(1e300)];
        assert_eq!(eval_mean_success(&split).unwrap(), 0.5);
        let single = vec![prompt(3f64.ln())];
        assert!((eval_mean_success(&single).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mean_success_includes_evicted_prompts() {
        let mut pop = init_population(&small(2)).unwrap();
        let before = pop.mean_success().unwrap();
        pop.evict(PromptId(0)).unwrap();
        assert_eq!(pop.mean_success().unwrap(), before);
    }
}
