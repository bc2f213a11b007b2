//! Rewards over decomposition outputs.
//!
//! A model sample earns a binary format reward for emitting the four-tag
//! structure, plus one set-F1 score per slot (actions, subjects, goals)
//! against a gold decomposition. Terms match exactly after
//! [`normalize_term`]; there is no partial string credit. The total is a
//! weighted sum of the four components, and malformed output zeroes every
//! F1 component.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{parse_tagged_output, Decomposition, TermSet};

/// Weights for combining the reward components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w_format: f64,
    pub w_action: f64,
    pub w_subject: f64,
    pub w_goal: f64,
    /// When set, a malformed sample scores a total of zero regardless of
    /// the format weight.
    pub gate_on_format: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_format: 1.0,
            w_action: 1.0,
            w_subject: 1.0,
            w_goal: 1.0,
            gate_on_format: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward weights must be finite and non-negative, got {0}")]
    NonFiniteOrNegativeWeight(f64),
    #[error("at least one reward weight must be positive")]
    AllWeightsZero,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let weights = [self.w_format, self.w_action, self.w_subject, self.w_goal];
        for w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(RewardError::NonFiniteOrNegativeWeight(w));
            }
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(RewardError::AllWeightsZero);
        }
        Ok(())
    }

    /// Ablation helper: same weights with the goal component switched off.
    pub fn without_goal(mut self) -> Self {
        self.w_goal = 0.0;
        self
    }
}

/// Per-component reward values for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub action_f1: f64,
    pub subject_f1: f64,
    pub goal_f1: f64,
    pub total: f64,
}

/// 1.0 when `output` is well-formed tagged output, else 0.0.
pub fn format_reward(output: &str) -> f64 {
    if parse_tagged_output(output).well_formed {
        1.0
    } else {
        0.0
    }
}

/// Balanced F1 between two sets of already-normalized terms. Both empty
/// scores 1.0 (correctly predicting "nothing"); exactly one empty scores
/// 0.0. Inputs are deduplicated defensively.
pub fn set_f1<'a, P, G>(predicted: P, gold: G) -> f64
where
    P: IntoIterator<Item = &'a str>,
    G: IntoIterator<Item = &'a str>,
{
    let predicted: HashSet<&str> = predicted.into_iter().collect();
    let gold: HashSet<&str> = gold.into_iter().collect();
    match (predicted.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let overlap = predicted.intersection(&gold).count() as f64;
            if overlap == 0.0 {
                return 0.0;
            }
            let precision = overlap / predicted.len() as f64;
            let recall = overlap / gold.len() as f64;
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Set-F1 between two term sets, compared in normal form.
pub fn term_set_f1(predicted: &TermSet, gold: &TermSet) -> f64 {
    let p = predicted.normalized();
    let g = gold.normalized();
    set_f1(p.iter().map(String::as_str), g.iter().map(String::as_str))
}

/// Scores raw model output against a gold decomposition.
pub fn decomposition_reward(
    output: &str,
    gold: &Decomposition,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let outcome = parse_tagged_output(output);
    let mut breakdown = RewardBreakdown::default();
    if let Some(d) = &outcome.decomposition {
        breakdown.format = 1.0;
        breakdown.action_f1 = term_set_f1(&d.actions, &gold.actions);
        breakdown.subject_f1 = term_set_f1(&d.subjects, &gold.subjects);
        breakdown.goal_f1 = term_set_f1(&d.goals, &gold.goals);
    }
    breakdown.total = cfg.w_format * breakdown.format
        + cfg.w_action * breakdown.action_f1
        + cfg.w_subject * breakdown.subject_f1
        + cfg.w_goal * breakdown.goal_f1;
    if cfg.gate_on_format && breakdown.format == 0.0 {
        breakdown.total = 0.0;
    }
    breakdown
}
