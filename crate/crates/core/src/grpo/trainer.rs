//! Toy training loop over the synthetic decomposition task.
//!
//! Each update step takes `prompts_per_step` prompts from the (epoch-
//! shuffled) corpus, samples a rollout group per prompt from the step's
//! starting parameters, scores every rollout with the decomposition
//! reward, normalizes advantages within each group, and applies a single
//! ascent step using the *sum* of the per-group gradients. The reference
//! policy for the KL penalty is the warm starting policy, frozen for the
//! whole run.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{decomposition_reward, RewardConfig, RewardError};

use super::toy::{generate_corpus, render_tokens, ToyRequest, ToyVocab};
use super::{grpo_loss, sample_group, GrpoConfig, GrpoError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Aggregates for one update step, averaged over the step's rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mean_format: f64,
    pub mean_action: f64,
    pub mean_subject: f64,
    pub mean_goal: f64,
    pub mean_total: f64,
    /// Mean group objective (maximized).
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub corpus_size: usize,
    pub steps: Vec<StepRecord>,
}

impl TrainingReport {
    /// Means of `f` over consecutive step windows of `width` (the last
    /// window may be shorter). Useful for per-epoch reward curves.
    pub fn window_means<F: Fn(&StepRecord) -> f64>(&self, width: usize, f: F) -> Vec<f64> {
        assert!(width > 0);
        self.steps
            .chunks(width)
            .map(|w| w.iter().map(&f).sum::<f64>() / w.len() as f64)
            .collect()
    }
}

/// Runs GRPO over the toy task and returns the per-step reward curves.
pub fn train_toy(
    corpus: &[ToyRequest],
    cfg: &GrpoConfig,
    reward_cfg: &RewardConfig,
) -> Result<TrainingReport, TrainError> {
    cfg.validate()?;
    reward_cfg.validate()?;
    if corpus.is_empty() {
        return Err(GrpoError::EmptyCorpus.into());
    }

    let vocab = ToyVocab::standard();
    let mut policy = vocab.warm_policy();
    let reference = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut report = TrainingReport {
        corpus_size: corpus.len(),
        steps: Vec::with_capacity(cfg.train_steps),
    };
    let mut grad_sum = vec![0.0f64; policy.param_count()];

    for step in 0..cfg.train_steps {
        grad_sum.fill(0.0);
        let mut sums = [0.0f64; 5]; // format, action, subject, goal, total
        let mut rollouts = 0usize;
        let mut objective = 0.0;
        let mut kl = 0.0;
        let mut clip_fraction = 0.0;

        for _ in 0..cfg.prompts_per_step {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let request = &corpus[order[cursor]];
            cursor += 1;

            let mut group = sample_group(
                &policy,
                &request.id,
                &request.prompt_tokens,
                ToyVocab::EOS,
                cfg,
                &mut rng,
            );
            for traj in &mut group.trajectories {
                let text = render_tokens(&vocab, &traj.tokens);
                let bd = decomposition_reward(&text, &request.gold, reward_cfg);
                traj.reward = bd.total;
                sums[0] += bd.format;
                sums[1] += bd.action_f1;
                sums[2] += bd.subject_f1;
                sums[3] += bd.goal_f1;
                sums[4] += bd.total;
                rollouts += 1;
            }
            group.finalize_advantages(cfg.std_guard);

            let out = grpo_loss(&group, &policy, &reference, cfg)?;
            for (g, d) in grad_sum.iter_mut().zip(&out.gradient) {
                *g += d;
            }
            objective += out.loss;
            kl += out.kl;
            clip_fraction += out.clip_fraction;
        }

        policy.apply_ascent(&grad_sum, cfg.learning_rate);

        let groups = cfg.prompts_per_step as f64;
        let n = rollouts as f64;
        report.steps.push(StepRecord {
            step,
            mean_format: sums[0] / n,
            mean_action: sums[1] / n,
            mean_subject: sums[2] / n,
            mean_goal: sums[3] / n,
            mean_total: sums[4] / n,
            objective: objective / groups,
            kl: kl / groups,
            clip_fraction: clip_fraction / groups,
        });
    }
    Ok(report)
}

/// Writes the curve as one JSON object per line.
pub fn write_curve_jsonl<W: Write>(report: &TrainingReport, mut out: W) -> io::Result<()> {
    for step in &report.steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Final reward for a range of corpus sizes at a fixed epoch budget: each
/// size trains for `ceil(size * epochs / prompts_per_step)` steps, and the
/// reported value is the mean total reward over the final epoch of steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub corpus_size: usize,
    pub steps: usize,
    pub final_total: f64,
}

pub fn corpus_size_sweep(
    sizes: &[usize],
    epochs: usize,
    cfg: &GrpoConfig,
    reward_cfg: &RewardConfig,
) -> Result<Vec<SweepPoint>, TrainError> {
    let vocab = ToyVocab::standard();
    sizes
        .iter()
        .map(|&size| {
            let corpus = generate_corpus(&vocab, size, cfg.seed);
            let steps_per_epoch = size.div_ceil(cfg.prompts_per_step).max(1);
            let run_cfg = GrpoConfig {
                train_steps: steps_per_epoch * epochs,
                ..cfg.clone()
            };
            let report = train_toy(&corpus, &run_cfg, reward_cfg)?;
            let tail = &report.steps[report.steps.len().saturating_sub(steps_per_epoch)..];
            let final_total =
                tail.iter().map(|s| s.mean_total).sum::<f64>() / tail.len().max(1) as f64;
            Ok(SweepPoint {
                corpus_size: size,
                steps: run_cfg.train_steps,
                final_total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GrpoConfig {
        GrpoConfig {
            group_size: 4,
            prompts_per_step: 4,
            train_steps: 3,
            max_rollout_tokens: 24,
            seed: 5,
            ..GrpoConfig::default()
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = train_toy(&[], &GrpoConfig::default(), &RewardConfig::default());
        assert!(matches!(err, Err(TrainError::Grpo(GrpoError::EmptyCorpus))));
    }

    #[test]
    fn zero_steps_yield_an_empty_curve() {
        let vocab = ToyVocab::standard();
        let corpus = generate_corpus(&vocab, 8, 1);
        let cfg = GrpoConfig {
            train_steps: 0,
            ..small_cfg()
        };
        let report = train_toy(&corpus, &cfg, &RewardConfig::default()).unwrap();
        assert_eq!(report.corpus_size, 8);
        assert!(report.steps.is_empty());
    }

    #[test]
    fn short_run_is_deterministic_per_seed() {
        let vocab = ToyVocab::standard();
        let corpus = generate_corpus(&vocab, 8, 1);
        let cfg = small_cfg();
        let a = train_toy(&corpus, &cfg, &RewardConfig::default()).unwrap();
        let b = train_toy(&corpus, &cfg, &RewardConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 3);
        let other_seed = GrpoConfig { seed: 6, ..cfg };
        let c = train_toy(&corpus, &other_seed, &RewardConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn curve_serializes_line_per_step() {
        let vocab = ToyVocab::standard();
        let corpus = generate_corpus(&vocab, 8, 1);
        let report = train_toy(&corpus, &small_cfg(), &RewardConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_curve_jsonl(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let first: StepRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.step, 0);
    }

    #[test]
    fn window_means_chunk_the_curve() {
        let report = TrainingReport {
            corpus_size: 0,
            steps: (0..5)
                .map(|i| StepRecord {
                    step: i,
                    mean_format: 0.0,
                    mean_action: 0.0,
                    mean_subject: 0.0,
                    mean_goal: i as f64,
                    mean_total: 0.0,
                    objective: 0.0,
                    kl: 0.0,
                    clip_fraction: 0.0,
                })
                .collect(),
        };
        let means = report.window_means(2, |s| s.mean_goal);
        assert_eq!(means, vec![0.5, 2.5, 4.0]);
    }
}
