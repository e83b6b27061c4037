//! Adaptation to a new task from one demonstration, then evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::networks::{TaskEncoder, TaskPolicy};
use super::train::{rollout_pool, POLICY_SEED_SALT};
use crate::data::{ContextBatch, Trajectory};
use crate::envs::{run_episode, TaskFamily, TaskSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub successes: usize,
    pub n_rollouts: usize,
}

impl RolloutReport {
    /// Zero rollouts report a rate of zero.
    pub fn success_rate(&self) -> f64 {
        if self.n_rollouts == 0 {
            0.0
        } else {
            self.successes as f64 / self.n_rollouts as f64
        }
    }
}

/// Embedding of a whole demonstration.
pub fn infer_embedding(encoder: &TaskEncoder, demo: &Trajectory) -> Result<Vec<f64>> {
    encoder.encode(&ContextBatch::from_trajectory(demo))
}

/// `n_rollouts` deterministic episodes of `policy` conditioned on `z`.
/// Observations are perturbed by Gaussian noise of standard deviation
/// `obs_noise` before the policy sees them.
pub fn evaluate_policy(
    policy: &TaskPolicy,
    z: &[f64],
    family: &TaskFamily,
    spec: &TaskSpec,
    n_rollouts: usize,
    seed: u64,
    obs_noise: f64,
) -> Result<RolloutReport> {
    let noise = Normal::new(0.0, obs_noise)
        .map_err(|_| Error::Config(format!("observation noise must be non-negative, got {obs_noise}")))?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n_rollouts).map(|_| seeder.random()).collect();
    let pool = rollout_pool()?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s ^ POLICY_SEED_SALT);
                let ep = run_episode(family, spec, s, |_, obs| {
                    if obs_noise > 0.0 {
                        let noisy: Vec<f64> = obs.iter().map(|v| v + noise.sample(&mut rng)).collect();
                        policy.act_deterministic(&noisy, z)
                    } else {
                        policy.act_deterministic(obs, z)
                    }
                })?;
                Ok(ep.success)
            })
            .collect()
    });
    let mut successes = 0;
    for o in outcomes {
        successes += usize::from(o?);
    }
    Ok(RolloutReport {
        successes,
        n_rollouts,
    })
}

/// Infers `z` once from `demo` and evaluates without any parameter update.
#[allow(clippy::too_many_arguments)]
pub fn adapt_and_rollout(
    encoder: &TaskEncoder,
    policy: &TaskPolicy,
    demo: &Trajectory,
    family: &TaskFamily,
    spec: &TaskSpec,
    n_rollouts: usize,
    seed: u64,
    obs_noise: f64,
) -> Result<RolloutReport> {
    let z = infer_embedding(encoder, demo)?;
    evaluate_policy(policy, &z, family, spec, n_rollouts, seed, obs_noise)
}
