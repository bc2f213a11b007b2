//! Group-relative policy optimization at desk scale.
//!
//! For each prompt, a group of `N` rollouts is sampled from a snapshot of
//! the policy. Rewards are normalized *within the group* into advantages
//!
//! ```text
//! A_i = (R_i - mean(R)) / max(std(R), std_guard)        (population std)
//! ```
//!
//! and the policy is updated on the clipped surrogate with a KL penalty
//! toward a frozen reference policy:
//!
//! ```text
//! J = (1 / sum_i |t_i|) * sum_i sum_t min(r_it * A_i, clip(r_it, 1-e, 1+e) * A_i)
//!     - beta * KL[policy || reference]
//! ```
//!
//! where `r_it` is the per-token importance ratio between the current and
//! sampling policies, and the KL penalty uses the nonnegative per-token
//! estimator `exp(d) - d - 1` with `d = logp_ref - logp_new`, averaged over
//! every token in the group. `J` is maximized: [`grpo_loss`] returns its
//! value together with the analytic ascent gradient for a [`TablePolicy`],
//! and one update step adds `learning_rate * gradient` to the parameters.

mod policy;
mod toy;
mod trainer;

pub use policy::{TablePolicy, TokenId};
pub use toy::{generate_corpus, gold_output_tokens, render_tokens, ToyRequest, ToyVocab, TOY_WINDOW};
pub use trainer::{
    corpus_size_sweep, train_toy, write_curve_jsonl, StepRecord, SweepPoint, TrainingReport,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hyperparameters for rollout sampling and the update rule. Defaults are
/// tuned for the toy tabular policy; full-scale runs would use a far
/// smaller learning rate (around 1e-6).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    /// Rollouts sampled per prompt.
    pub group_size: usize,
    /// Clip range `e` for the importance ratio.
    pub clip_epsilon: f64,
    /// Weight `beta` of the KL penalty toward the reference policy.
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub rollout_temperature: f64,
    /// Lower bound on the reward std used when normalizing advantages, so
    /// an all-equal group yields zero advantages instead of dividing by 0.
    pub std_guard: f64,
    /// Hard cap on sampled tokens per rollout.
    pub max_rollout_tokens: usize,
    /// Prompt groups processed per update step.
    pub prompts_per_step: usize,
    pub train_steps: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: 0.1,
            rollout_temperature: 1.0,
            std_guard: 1e-8,
            max_rollout_tokens: 48,
            prompts_per_step: 224,
            train_steps: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rollout group is empty")]
    EmptyGroup,
    #[error("rollout group has no tokens")]
    NoTokens,
    #[error("{what} lengths differ: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("policy shape {policy:?} does not match reference shape {reference:?}")]
    ShapeMismatch {
        policy: (usize, usize),
        reference: (usize, usize),
    },
    #[error("rollout temperature must be positive to evaluate the loss")]
    ZeroTemperature,
    #[error("corpus is empty")]
    EmptyCorpus,
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let err = |msg: String| Err(GrpoError::InvalidConfig(msg));
        if self.group_size < 2 {
            return err(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return err(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            ));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return err(format!("kl_beta must be finite and >= 0, got {}", self.kl_beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return err(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.rollout_temperature >= 0.0 && self.rollout_temperature.is_finite()) {
            return err(format!(
                "rollout_temperature must be finite and >= 0, got {}",
                self.rollout_temperature
            ));
        }
        if !(self.std_guard > 0.0 && self.std_guard.is_finite()) {
            return err(format!("std_guard must be positive, got {}", self.std_guard));
        }
        if self.max_rollout_tokens == 0 {
            return err("max_rollout_tokens must be positive".to_string());
        }
        if self.prompts_per_step == 0 {
            return err("prompts_per_step must be positive".to_string());
        }
        Ok(())
    }
}

/// One sampled rollout: output tokens with their log-probabilities under
/// the sampling policy, and the scalar reward once scored.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub prompt_id: String,
    pub tokens: Vec<TokenId>,
    pub logp: Vec<f64>,
    pub reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// All rollouts for one prompt, plus group-normalized advantages once
/// computed.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub prompt_tokens: Vec<TokenId>,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }

    /// Fills `advantages` from the trajectory rewards.
    pub fn finalize_advantages(&mut self, std_guard: f64) {
        self.advantages = compute_advantages(&self.rewards(), std_guard);
    }
}

/// Group-normalizes rewards: subtract the mean, divide by the population
/// standard deviation floored at `std_guard`. An all-equal group maps to
/// all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_guard: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    // The mean of identical rewards is exactly that value, but a float
    // sum can drift an ulp and turn the zero deviations into guard-scaled
    // noise; short-circuit so constant groups carry no learning signal.
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_guard);
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Per-token importance ratios `exp(logp_new - logp_old)`.
pub fn importance_ratio(logp_new: &[f64], logp_old: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if logp_new.len() != logp_old.len() {
        return Err(GrpoError::LengthMismatch {
            what: "log-probability",
            left: logp_new.len(),
            right: logp_old.len(),
        });
    }
    Ok(logp_new
        .iter()
        .zip(logp_old)
        .map(|(n, o)| (n - o).exp())
        .collect())
}

/// One clipped surrogate term: `min(r * A, clip(r, 1-e, 1+e) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean of the per-token KL estimator `exp(d) - d - 1`, `d = logp_ref -
/// logp_new`. Nonnegative; zero for identical inputs; 0.0 on empty input.
pub fn kl_penalty(logp_new: &[f64], logp_ref: &[f64]) -> Result<f64, GrpoError> {
    if logp_new.len() != logp_ref.len() {
        return Err(GrpoError::LengthMismatch {
            what: "log-probability",
            left: logp_new.len(),
            right: logp_ref.len(),
        });
    }
    if logp_new.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logp_new
        .iter()
        .zip(logp_ref)
        .map(|(n, r)| {
            let d = r - n;
            d.exp() - d - 1.0
        })
        .sum();
    Ok(sum / logp_new.len() as f64)
}

/// Value and ascent gradient of the group objective.
#[derive(Clone, Debug)]
pub struct GrpoLoss {
    /// The maximized objective `J` (clipped surrogate minus the KL term).
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    /// Fraction of tokens whose surrogate term was clipped.
    pub clip_fraction: f64,
    /// `dJ/dtheta`, shaped like [`TablePolicy::params`].
    pub gradient: Vec<f64>,
}

/// Evaluates the group objective and its analytic gradient for a tabular
/// softmax policy. Token log-probabilities are evaluated at the rollout
/// temperature, matching how `logp` was recorded during sampling.
pub fn grpo_loss(
    group: &RolloutGroup,
    policy: &TablePolicy,
    reference: &TablePolicy,
    cfg: &GrpoConfig,
) -> Result<GrpoLoss, GrpoError> {
    cfg.validate()?;
    if cfg.rollout_temperature == 0.0 {
        return Err(GrpoError::ZeroTemperature);
    }
    if group.trajectories.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if group.advantages.len() != group.trajectories.len() {
        return Err(GrpoError::LengthMismatch {
            what: "advantage",
            left: group.advantages.len(),
            right: group.trajectories.len(),
        });
    }
    if policy.shape() != reference.shape() {
        return Err(GrpoError::ShapeMismatch {
            policy: policy.shape(),
            reference: reference.shape(),
        });
    }
    let vocab = policy.vocab_size();
    let total_tokens: usize = group.trajectories.iter().map(Trajectory::len).sum();
    if total_tokens == 0 {
        return Err(GrpoError::NoTokens);
    }
    for traj in &group.trajectories {
        if traj.logp.len() != traj.tokens.len() {
            return Err(GrpoError::LengthMismatch {
                what: "per-token logp",
                left: traj.logp.len(),
                right: traj.tokens.len(),
            });
        }
        for &tok in group.prompt_tokens.iter().chain(&traj.tokens) {
            if tok as usize >= vocab {
                return Err(GrpoError::TokenOutOfRange {
                    token: tok,
                    vocab_size: vocab,
                });
            }
        }
    }

    let temp = cfg.rollout_temperature;
    let scale = 1.0 / total_tokens as f64;
    let mut gradient = vec![0.0; policy.param_count()];
    let mut surrogate = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped_tokens = 0usize;

    let mut prefix: Vec<TokenId> = Vec::with_capacity(group.prompt_tokens.len() + 64);
    let mut logp_buf = vec![0.0; vocab];
    let mut ref_buf = vec![0.0; vocab];
    let mut probs_buf = vec![0.0; vocab];

    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        prefix.clear();
        prefix.extend_from_slice(&group.prompt_tokens);
        for (t, &tok) in traj.tokens.iter().enumerate() {
            policy.log_probs_into(&prefix, temp, &mut logp_buf);
            reference.log_probs_into(&prefix, temp, &mut ref_buf);
            let logp_new = logp_buf[tok as usize];
            let logp_ref = ref_buf[tok as usize];
            let logp_old = traj.logp[t];

            let ratio = (logp_new - logp_old).exp();
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
            surrogate += unclipped.min(clipped);
            // d(min)/d(logp_new): the unclipped branch contributes
            // ratio * adv; when the clipped branch is strictly smaller the
            // ratio sits outside the clip band and the gradient vanishes.
            let surr_coeff = if unclipped <= clipped {
                ratio * adv
            } else {
                clipped_tokens += 1;
                0.0
            };

            let d = logp_ref - logp_new;
            kl_sum += d.exp() - d - 1.0;
            let kl_coeff = cfg.kl_beta * (1.0 - d.exp());

            // dJ/dlogit(c) = coeff * (1[c = tok] - p(c)) / temp
            let coeff = scale * (surr_coeff - kl_coeff) / temp;
            if coeff != 0.0 {
                for (p, lp) in probs_buf.iter_mut().zip(&logp_buf) {
                    *p = lp.exp();
                }
                policy.accumulate_logit_grad(&prefix, &probs_buf, tok, coeff, &mut gradient);
            }
            prefix.push(tok);
        }
    }

    let kl = kl_sum * scale;
    let surrogate = surrogate * scale;
    Ok(GrpoLoss {
        loss: surrogate - cfg.kl_beta * kl,
        surrogate,
        kl,
        clip_fraction: clipped_tokens as f64 / total_tokens as f64,
        gradient,
    })
}

/// Samples `group_size` rollouts for one prompt from `policy` (the frozen
/// snapshot for this step). Rewards are left at zero and advantages empty
/// until the trajectories are scored.
pub fn sample_group(
    policy: &TablePolicy,
    prompt_id: &str,
    prompt_tokens: &[TokenId],
    eos: TokenId,
    cfg: &GrpoConfig,
    rng: &mut ChaCha8Rng,
) -> RolloutGroup {
    let mut trajectories = Vec::with_capacity(cfg.group_size);
    let mut prefix: Vec<TokenId> = Vec::with_capacity(prompt_tokens.len() + cfg.max_rollout_tokens);
    for _ in 0..cfg.group_size {
        prefix.clear();
        prefix.extend_from_slice(prompt_tokens);
        let mut tokens = Vec::new();
        let mut logp = Vec::new();
        while tokens.len() < cfg.max_rollout_tokens {
            let (tok, lp) = policy.sample_token(&prefix, cfg.rollout_temperature, rng);
            tokens.push(tok);
            logp.push(lp);
            prefix.push(tok);
            if tok == eos {
                break;
            }
        }
        trajectories.push(Trajectory {
            prompt_id: prompt_id.to_string(),
            tokens,
            logp,
            reward: 0.0,
        });
    }
    RolloutGroup {
        prompt_id: prompt_id.to_string(),
        prompt_tokens: prompt_tokens.to_vec(),
        trajectories,
        advantages: Vec::new(),
    }
}
