//! REINFORCE loss terms for learned routers.
//!
//! Terms use natural logarithms. The policy term is the REINFORCE surrogate
//! `mean(ln π_i · A_i)`, which training ascends; [`RlLossTerms::combined`] is
//! the quantity to minimize and therefore carries it with a minus sign.

use crate::math::exp;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RlWeights {
    pub policy: f64,
    /// Negative values favour concentrated policies.
    pub entropy: f64,
    pub value: f64,
}

impl RlWeights {
    /// Greedy REINFORCE.
    pub const GREEDY: RlWeights = RlWeights { policy: 1e-1, entropy: 0.0, value: 0.0 };
    /// Nucleus-sampled REINFORCE.
    pub const NUCLEUS: RlWeights = RlWeights { policy: 1e-1, entropy: 0.0, value: 0.0 };
    /// REINFORCE with a learned baseline.
    pub const BASELINE: RlWeights = RlWeights { policy: 1e-2, entropy: -5e-4, value: 1e-2 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RlLossTerms {
    /// `mean(ln π_i · A_i)` with `A_i = R_i - b_i` (or `R_i` without baselines).
    pub policy_gradient: f64,
    /// `mean(ln p_i · p_i)` over the selected-action probabilities.
    pub entropy: f64,
    /// Mean Huber loss of `R_i - b_i`; zero without baselines.
    pub value: f64,
    /// `-w_p·policy_gradient + w_e·entropy + w_v·value`.
    pub combined: f64,
    pub weights: RlWeights,
}

/// Huber loss with threshold `delta`.
pub fn huber(x: f64, delta: f64) -> f64 {
    let ax = x.abs();
    if ax <= delta {
        0.5 * x * x
    } else {
        delta * (ax - 0.5 * delta)
    }
}

/// Loss terms for one batch of routing decisions.
///
/// `log_probs[i]` is `ln π(a_i | x_i)` of the action actually taken.
pub fn rl_losses(
    log_probs: &[f64],
    rewards: &[f64],
    baselines: Option<&[f64]>,
    weights: RlWeights,
    delta: f64,
) -> Result<RlLossTerms> {
    let n = log_probs.len();
    if rewards.len() != n || baselines.is_some_and(|b| b.len() != n) {
        return Err(Error::Data("log_probs, rewards and baselines must have equal length".into()));
    }
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(alloc::format!("Huber delta must be positive, got {delta}")));
    }
    if rewards.iter().any(|r| r.is_nan()) || log_probs.iter().any(|l| l.is_nan()) {
        return Err(Error::Data("NaN reward or log probability".into()));
    }
    let nf = n as f64;
    let mut policy = 0.0;
    let mut entropy = 0.0;
    let mut value = 0.0;
    for i in 0..n {
        let advantage = rewards[i] - baselines.map_or(0.0, |b| b[i]);
        policy += log_probs[i] * advantage;
        entropy += log_probs[i] * exp(log_probs[i]);
        if baselines.is_some() {
            value += huber(advantage, delta);
        }
    }
    let (policy, entropy, value) = (policy / nf, entropy / nf, value / nf);
    Ok(RlLossTerms {
        policy_gradient: policy,
        entropy,
        value,
        combined: -weights.policy * policy + weights.entropy * entropy + weights.value * value,
        weights,
    })
}
