//! Behavioral-cloning baselines.
//!
//! PEARL-BC trains SQUIRL's encoder and policy with the BC objective alone,
//! for as many steps as SQUIRL's warm-up plus joint BC would take, and never
//! touches the environment. Standard-BC fits one unconditioned policy per
//! task from that task's demonstration.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Algo, RunConfig};
use crate::data::{DemoSet, Trajectory};
use crate::envs::TaskFamily;
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, Metrics};
use crate::nn::AdamState;
use crate::data::ReplayBuffer;
use crate::squirl::{
    bc_loss, bc_step, check_demos, choose_tasks, finite, rollout_pool, warm_up, Models, Optimizers, PolicyHead, TaskPolicy, TrainOutput,
};

pub fn train_pearl_bc(cfg: &RunConfig, demos: &DemoSet) -> Result<TrainOutput> {
    train_pearl_bc_with(cfg, demos, |_, _| Ok(()))
}

/// [`train_pearl_bc`], calling `on_epoch` after every epoch's metrics row.
pub fn train_pearl_bc_with<F>(cfg: &RunConfig, demos: &DemoSet, mut on_epoch: F) -> Result<TrainOutput>
where
    F: FnMut(&EpochMetrics, &Models) -> Result<()>,
{
    cfg.validate()?;
    let family = cfg.task_family();
    let task_ids = check_demos(&family, demos)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models = Models::init(cfg, &family, &mut rng)?;
    let mut opt = Optimizers::new(cfg, &models);
    warm_up(cfg, &mut models, &mut opt, demos, &task_ids, &mut rng)?;

    let mut metrics = Metrics::new();
    let start = Instant::now();
    // After the shared warm-up the step size decays so the fit converges.
    let total = cfg.epochs * cfg.policy_updates;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.policy_updates {
            opt.policy_bc.learning_rate = cosine_decay(cfg.lr_policy, step, total);
            opt.encoder.learning_rate = cosine_decay(cfg.lr_encoder, step, total);
            step += 1;
            let tasks = choose_tasks(&task_ids, cfg.meta_batch, &mut rng);
            sum += bc_step(cfg, &mut models, &mut opt, demos, &tasks, epoch, &mut rng)?.loss;
        }
        metrics.push(EpochMetrics {
            epoch,
            irl_loss: None,
            rl_loss: None,
            bc_loss: (cfg.policy_updates > 0).then(|| sum / cfg.policy_updates as f64),
            alpha: None,
            train_success: None,
            robot_trials: 0,
            wall_clock_s: start.elapsed().as_secs_f64(),
        })?;
        on_epoch(metrics.rows().last().expect("row just pushed"), &models)?;
    }
    Ok(TrainOutput {
        models,
        metrics,
        robot_trials: 0,
        buffer: ReplayBuffer::new(),
    })
}

/// One unconditioned policy per task.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardBcModels {
    pub policies: BTreeMap<usize, TaskPolicy>,
}

/// Fits an unconditioned policy to a single demonstration. Returns the
/// policy and its per-step loss.
pub fn train_standard_bc_task(cfg: &RunConfig, family: &TaskFamily, demo: &Trajectory, seed: u64) -> Result<(TaskPolicy, Vec<f64>)> {
    if demo.is_empty() {
        return Err(Error::Config(format!("demo for task {} is empty", demo.task_id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = if family.is_discrete() {
        PolicyHead::Categorical
    } else {
        PolicyHead::TanhGaussian
    };
    let (s, a) = (family.obs_dim(), family.action_dim());
    let mut policy = TaskPolicy::new(head, s, 0, a, cfg.hidden_width, cfg.hidden_layers, cfg.activation, &mut rng)?;
    policy.log_std_min = cfg.log_std_min;
    policy.log_std_max = cfg.log_std_max;
    policy.set_initial_log_std(cfg.log_std_init);
    let mut adam = AdamState::new(policy.net.param_count(), cfg.lr_policy);
    let mut losses = Vec::with_capacity(cfg.standard_bc_steps);
    let none = BTreeMap::new();
    // A demo that fits in one batch is used whole, and the step size follows
    // a cosine decay so the fit settles instead of orbiting the minimum.
    let whole: Vec<_> = (0..demo.len()).map(|t| demo.timestep(t)).collect();
    let n = cfg.standard_bc_steps;
    for step in 0..n {
        let batch: Vec<_> = if demo.len() <= cfg.batch_size {
            whole.clone()
        } else {
            (0..cfg.batch_size).map(|_| demo.timestep(rng.random_range(0..demo.len()))).collect()
        };
        adam.learning_rate = cosine_decay(cfg.lr_policy, step, n);
        let bc = bc_loss(&policy, None, &batch, &none)?;
        losses.push(finite(bc.loss, step, "bc")?);
        adam.step("policy", policy.net.params_mut(), &bc.grad_policy)?;
    }
    Ok((policy, losses))
}

/// Cosine schedule from `lr` at step 0 down to 1% of it at the last step.
pub fn cosine_decay(lr: f64, step: usize, steps: usize) -> f64 {
    let frac = step as f64 / steps.max(1) as f64;
    lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Seed for a task's standard-BC run, independent of the order tasks are
/// trained in.
pub fn standard_bc_seed(run_seed: u64, task_id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(task_id as u64 + 1);
    rng.random()
}

/// Fits every training task independently. Metrics split the step budget
/// into `epochs` equal chunks and report the task-averaged loss per chunk.
pub fn train_standard_bc(cfg: &RunConfig, demos: &DemoSet) -> Result<(StandardBcModels, Metrics)> {
    cfg.validate()?;
    let family = cfg.task_family();
    let task_ids = check_demos(&family, demos)?;
    let pool = rollout_pool()?;
    let start = Instant::now();
    let fitted: Vec<Result<(TaskPolicy, Vec<f64>)>> = pool.install(|| {
        task_ids
            .par_iter()
            .map(|&t| train_standard_bc_task(cfg, &family, demos.get(t)?, standard_bc_seed(cfg.seed, t)))
            .collect()
    });
    let mut policies = BTreeMap::new();
    let mut all_losses = Vec::new();
    for (&t, f) in task_ids.iter().zip(fitted) {
        let (p, l) = f?;
        policies.insert(t, p);
        all_losses.push(l);
    }
    let wall = start.elapsed().as_secs_f64();
    let mut metrics = Metrics::new();
    let n = cfg.standard_bc_steps;
    for e in 0..cfg.epochs {
        let (lo, hi) = (e * n / cfg.epochs, (e + 1) * n / cfg.epochs);
        let bc_loss = (hi > lo).then(|| {
            all_losses
                .iter()
                .map(|l| l[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
                .sum::<f64>()
                / all_losses.len() as f64
        });
        metrics.push(EpochMetrics {
            epoch: e + 1,
            irl_loss: None,
            rl_loss: None,
            bc_loss,
            alpha: None,
            train_success: None,
            robot_trials: 0,
            wall_clock_s: wall,
        })?;
    }
    Ok((StandardBcModels { policies }, metrics))
}

/// Result of any training algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Meta(Models),
    PerTask(StandardBcModels),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trained: Trained,
    pub metrics: Metrics,
    pub robot_trials: usize,
}

/// Trains whichever algorithm `cfg.algo` names.
pub fn run(cfg: &RunConfig, demos: &DemoSet) -> Result<RunOutput> {
    let (trained, metrics, robot_trials) = match cfg.algo {
        Algo::Squirl | Algo::SquirlIrlOnly => {
            let out = crate::squirl::train(cfg, demos)?;
            (Trained::Meta(out.models), out.metrics, out.robot_trials)
        }
        Algo::PearlBc => {
            let out = train_pearl_bc(cfg, demos)?;
            (Trained::Meta(out.models), out.metrics, 0)
        }
        Algo::StandardBc => {
            let (m, metrics) = train_standard_bc(cfg, demos)?;
            (Trained::PerTask(m), metrics, 0)
        }
    };
    Ok(RunOutput {
        trained,
        metrics,
        robot_trials,
    })
}
