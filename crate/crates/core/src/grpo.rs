//! Group-relative advantage math for binary-reward groups.
//!
//! Everything here is a pure function of its inputs. The policy model is a
//! single-step Bernoulli policy `p = sigmoid(logit)`, so the per-sample score
//! `d/dlogit log pi(o)` is `1 - p` for a success and `-p` for a failure, and
//! the two-cluster gradient decomposition holds with equality.

use thiserror::Error;

/// A single binary reward, `0` or `1`.
pub type Reward = u8;

/// Tolerance used when deciding that two positive-mass values are tied.
pub const MASS_TIE_TOLERANCE: f64 = 1e-12;

/// Largest group size the exhaustive positive-mass enumeration accepts.
pub const MAX_ENUMERATED_GROUP: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("group too small: {len} rewards, need at least 2")]
    TooSmall { len: usize },
    #[error("non-binary reward {value} at index {index}")]
    NonBinary { index: usize, value: Reward },
    #[error("logit is not finite: {0}")]
    NonFiniteLogit(f64),
    #[error("degenerate group: all rewards equal, standard deviation is zero")]
    Degenerate,
    #[error("group size {0} outside supported range 2..={MAX_ENUMERATED_GROUP}")]
    GroupSizeOutOfRange(usize),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
}

/// Within-group mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    pub group_size: usize,
}

impl GroupStats {
    pub fn is_degenerate(&self) -> bool {
        self.std == 0.0
    }
}

/// Standardized rewards `(r_i - mean) / std`.
///
/// Zero-variance groups produce all-zero values with `degenerate` set, so
/// callers can run all-correct and all-wrong groups through the same path.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClusterDecomposition {
    /// Sum of advantages over rollouts with `r_i >= mean`.
    pub positive_mass: f64,
    /// Score of a successful rollout.
    pub g_plus: f64,
    /// Score of a failed rollout.
    pub g_minus: f64,
    /// `|positive_mass| / G * |g_plus - g_minus|`.
    pub gradient_magnitude: f64,
}

/// Result of enumerating every binary reward vector of one group size.
#[derive(Debug, Clone, PartialEq)]
pub struct MassBoundReport {
    pub group_size: usize,
    /// Number of non-degenerate vectors visited (`2^G - 2`).
    pub vectors_checked: usize,
    pub max_positive_mass: f64,
    /// Every vector whose positive mass ties the maximum.
    pub maximizers: Vec<Vec<Reward>>,
    /// `max_positive_mass <= G/2` (within [`MASS_TIE_TOLERANCE`]).
    pub bound_holds: bool,
    /// The bound is attained.
    pub tight: bool,
    /// For even `G`: the maximizers are exactly the balanced vectors.
    /// For odd `G`: no vector attains the bound. Either way this is the
    /// tightness condition of the bound.
    pub tightness_matches: bool,
}

fn validate(rewards: &[Reward]) -> Result<(), GroupError> {
    if rewards.len() < 2 {
        return Err(GroupError::TooSmall { len: rewards.len() });
    }
    if let Some((index, &value)) = rewards.iter().enumerate().find(|(_, &r)| r > 1) {
        return Err(GroupError::NonBinary { index, value });
    }
    Ok(())
}

fn check_logit(logit: f64) -> Result<(), GroupError> {
    if logit.is_finite() {
        Ok(())
    } else {
        Err(GroupError::NonFiniteLogit(logit))
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]. `p` must lie in `(0, 1)` for a finite result.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn group_stats(rewards: &[Reward]) -> Result<GroupStats, GroupError> {
    validate(rewards)?;
    let g = rewards.len() as f64;
    let mean = rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / g;
    let var = rewards
        .iter()
        .map(|&r| {
            let d = f64::from(r) - mean;
            d * d
        })
        .sum::<f64>()
        / g;
    Ok(GroupStats {
        mean,
        std: var.sqrt(),
        group_size: rewards.len(),
    })
}

pub fn advantages(rewards: &[Reward]) -> Result<AdvantageVector, GroupError> {
    let stats = group_stats(rewards)?;
    if stats.is_degenerate() {
        return Ok(AdvantageVector {
            values: vec![0.0; rewards.len()],
            degenerate: true,
        });
    }
    let values = rewards
        .iter()
        .map(|&r| (f64::from(r) - stats.mean) / stats.std)
        .collect();
    Ok(AdvantageVector {
        values,
        degenerate: false,
    })
}

/// Per-sample score `d/dlogit log pi(reward)` for a Bernoulli policy.
pub fn bernoulli_score(logit: f64, reward: Reward) -> Result<f64, GroupError> {
    check_logit(logit)?;
    let p = sigmoid(logit);
    match reward {
        1 => Ok(1.0 - p),
        0 => Ok(-p),
        value => Err(GroupError::NonBinary { index: 0, value }),
    }
}

/// Gradient of the unclipped per-prompt surrogate at the sampling policy:
/// `(1/G) * sum_i A_i * score_i`.
pub fn surrogate_gradient(logit: f64, rewards: &[Reward]) -> Result<f64, GroupError> {
    check_logit(logit)?;
    let adv = advantages(rewards)?;
    if adv.degenerate {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (&a, &r) in adv.values.iter().zip(rewards) {
        acc += a * bernoulli_score(logit, r)?;
    }
    Ok(acc / rewards.len() as f64)
}

/// Sum of advantages over the rollouts at or above the group mean.
fn positive_mass(rewards: &[Reward], adv: &AdvantageVector, mean: f64) -> f64 {
    rewards
        .iter()
        .zip(&adv.values)
        .filter(|(&r, _)| f64::from(r) >= mean)
        .map(|(_, &a)| a)
        .sum()
}

pub fn two_cluster_decompose(
    logit: f64,
    rewards: &[Reward],
) -> Result<TwoClusterDecomposition, GroupError> {
    check_logit(logit)?;
    let stats = group_stats(rewards)?;
    if stats.is_degenerate() {
        return Err(GroupError::Degenerate);
    }
    let adv = advantages(rewards)?;
    let positive_mass = positive_mass(rewards, &adv, stats.mean);
    let g_plus = bernoulli_score(logit, 1)?;
    let g_minus = bernoulli_score(logit, 0)?;
    let gradient_magnitude =
        positive_mass.abs() / stats.group_size as f64 * (g_plus - g_minus).abs();
    Ok(TwoClusterDecomposition {
        positive_mass,
        g_plus,
        g_minus,
        gradient_magnitude,
    })
}

/// Bit `i` of `mask` becomes reward `i`.
pub fn rewards_from_mask(mask: u32, group_size: usize) -> Vec<Reward> {
    (0..group_size).map(|i| ((mask >> i) & 1) as Reward).collect()
}

/// Enumerates all `2^G` binary reward vectors and checks the positive
/// advantage mass bound `S+ <= G/2` together with its tightness condition.
pub fn positive_mass_bound_check(group_size: usize) -> Result<MassBoundReport, GroupError> {
    if !(2..=MAX_ENUMERATED_GROUP).contains(&group_size) {
        return Err(GroupError::GroupSizeOutOfRange(group_size));
    }
    let half = group_size as f64 / 2.0;
    let mut max_mass = f64::NEG_INFINITY;
    let mut maximizers: Vec<Vec<Reward>> = Vec::new();
    let mut checked = 0usize;

    for mask in 0u32..(1u32 << group_size) {
        let rewards = rewards_from_mask(mask, group_size);
        let stats = group_stats(&rewards)?;
        if stats.is_degenerate() {
            continue;
        }
        checked += 1;
        let adv = advantages(&rewards)?;
        let mass = positive_mass(&rewards, &adv, stats.mean);
        if mass > max_mass + MASS_TIE_TOLERANCE {
            max_mass = mass;
            maximizers.clear();
            maximizers.push(rewards);
        } else if (mass - max_mass).abs() <= MASS_TIE_TOLERANCE {
            maximizers.push(rewards);
        }
    }

    let bound_holds = max_mass <= half + MASS_TIE_TOLERANCE;
    let tight = (max_mass - half).abs() <= MASS_TIE_TOLERANCE;
    let tightness_matches = if group_size.is_multiple_of(2) {
        let balanced = |v: &Vec<Reward>| v.iter().filter(|&&r| r == 1).count() * 2 == group_size;
        let expected = binomial(group_size, group_size / 2);
        tight && maximizers.len() == expected && maximizers.iter().all(balanced)
    } else {
        !tight
    };

    Ok(MassBoundReport {
        group_size,
        vectors_checked: checked,
        max_positive_mass: max_mass,
        maximizers,
        bound_holds,
        tight,
        tightness_matches,
    })
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Reward variance `p(1 - p)` of a Bernoulli outcome.
pub fn variance_proxy(p_hat: f64) -> Result<f64, GroupError> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(GroupError::ProbabilityOutOfRange(p_hat));
    }
    Ok(p_hat * (1.0 - p_hat))
}
