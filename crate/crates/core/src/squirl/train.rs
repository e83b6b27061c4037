//! Meta-training: BC warm-up, then alternating rollout collection,
//! discriminator updates and policy updates.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::alpha::EntropyTemp;
use super::losses::{bc_loss, irl_loss, rl_policy_loss, BcLoss, Embeddings};
use super::networks::{PolicyHead, SoftQ, TaskEncoder, TaskPolicy};
use crate::config::{Algo, RunConfig};
use crate::data::{sample_context, sample_expert_batch, sample_mixed_batch, DemoSet, ReplayBuffer, Source, Trajectory};
use crate::envs::{run_episode, Episode, TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, Metrics};
use crate::nn::AdamState;

/// Mixed into an episode seed to seed the policy's own sampling.
pub(crate) const POLICY_SEED_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Encoder, policy and soft Q-function of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub encoder: TaskEncoder,
    pub policy: TaskPolicy,
    pub q: SoftQ,
    pub log_alpha: f64,
    /// Optimizer steps applied so far, across all networks.
    pub updates: u64,
}

impl Models {
    /// Fresh networks sized for `family`. Discrete families get a
    /// categorical head.
    pub fn init<R: Rng + ?Sized>(cfg: &RunConfig, family: &TaskFamily, rng: &mut R) -> Result<Self> {
        let (s, a, z) = (family.obs_dim(), family.action_dim(), cfg.z_dim);
        let (w, l, act) = (cfg.hidden_width, cfg.hidden_layers, cfg.activation);
        let head = if family.is_discrete() {
            PolicyHead::Categorical
        } else {
            PolicyHead::TanhGaussian
        };
        let encoder = TaskEncoder::new(s, a, z, w, l, act, rng)?;
        let mut policy = TaskPolicy::new(head, s, z, a, w, l, act, rng)?;
        policy.log_std_min = cfg.log_std_min;
        policy.log_std_max = cfg.log_std_max;
        policy.set_initial_log_std(cfg.log_std_init);
        let q = SoftQ::new(s, a, z, w, l, act, rng)?;
        Ok(Self {
            encoder,
            policy,
            q,
            log_alpha: initial_alpha(cfg, family).ln(),
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// Discrete experts are soft-optimal at a known temperature; the learner
/// uses that temperature, fixed, so its policy can match them exactly.
fn initial_alpha(cfg: &RunConfig, family: &TaskFamily) -> f64 {
    if family.is_discrete() {
        cfg.expert_alpha
    } else {
        cfg.alpha_init
    }
}

/// The policy keeps separate moment estimates for its BC and RL gradients,
/// so the larger RL gradients do not shrink the BC steps.
pub(crate) struct Optimizers {
    pub(crate) encoder: AdamState,
    pub(crate) policy_bc: AdamState,
    policy_rl: AdamState,
    q: AdamState,
}

impl Optimizers {
    pub(crate) fn new(cfg: &RunConfig, m: &Models) -> Self {
        Self {
            encoder: AdamState::new(m.encoder.net.param_count(), cfg.lr_encoder),
            policy_bc: AdamState::new(m.policy.net.param_count(), cfg.lr_policy),
            policy_rl: AdamState::new(m.policy.net.param_count(), cfg.lr_policy_rl),
            q: AdamState::new(m.q.net.param_count(), cfg.lr_q),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub models: Models,
    pub metrics: Metrics,
    pub robot_trials: usize,
    pub buffer: ReplayBuffer,
}

/// Checks that `demos` holds exactly one demo of the right widths per
/// training task.
pub fn check_demos(family: &TaskFamily, demos: &DemoSet) -> Result<Vec<usize>> {
    if demos.state_dim != family.obs_dim() || demos.action_dim != family.action_dim() {
        return Err(Error::Config(format!(
            "demos have widths S={} A={}, the {} family needs S={} A={}",
            demos.state_dim,
            demos.action_dim,
            family.kind.name(),
            family.obs_dim(),
            family.action_dim()
        )));
    }
    let ids: Vec<usize> = family.train_tasks().iter().map(|t| t.task_id).collect();
    for &id in &ids {
        if demos.get(id)?.is_empty() {
            return Err(Error::Config(format!("demo for task {id} is empty")));
        }
    }
    Ok(ids)
}

/// `m` distinct tasks in sampled order.
pub(crate) fn choose_tasks<R: Rng + ?Sized>(pool: &[usize], m: usize, rng: &mut R) -> Vec<usize> {
    sample_indices(rng, pool.len(), m.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

pub(crate) fn finite(loss: f64, epoch: usize, name: &'static str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Diverged { epoch, loss: name })
    }
}

/// Embeddings of `tasks`, each from a fresh context drawn from its demo.
fn infer_embeddings<R: Rng + ?Sized>(
    encoder: &TaskEncoder,
    demos: &DemoSet,
    tasks: &[usize],
    context_size: usize,
    rng: &mut R,
) -> Result<Embeddings> {
    let mut z = Embeddings::new();
    for &t in tasks {
        z.insert(t, encoder.encode(&sample_context(demos, t, context_size, rng)?)?);
    }
    Ok(z)
}

/// One joint policy/encoder BC step over `m` sampled tasks.
pub(crate) fn bc_step<R: Rng + ?Sized>(
    cfg: &RunConfig,
    models: &mut Models,
    opt: &mut Optimizers,
    demos: &DemoSet,
    tasks: &[usize],
    epoch: usize,
    rng: &mut R,
) -> Result<BcLoss> {
    let mut contexts = BTreeMap::new();
    for &t in tasks {
        contexts.insert(t, sample_context(demos, t, cfg.context_size, rng)?);
    }
    let batch = sample_expert_batch(demos, tasks, cfg.batch_size, rng)?;
    let bc = bc_loss(&models.policy, Some(&models.encoder), &batch, &contexts)?;
    finite(bc.loss, epoch, "bc")?;
    opt.policy_bc.step("policy", models.policy.net.params_mut(), &bc.grad_policy)?;
    opt.encoder.step("encoder", models.encoder.net.params_mut(), &bc.grad_encoder)?;
    models.updates += 2;
    Ok(bc)
}

/// BC warm-up of policy and encoder.
pub(crate) fn warm_up<R: Rng + ?Sized>(
    cfg: &RunConfig,
    models: &mut Models,
    opt: &mut Optimizers,
    demos: &DemoSet,
    task_ids: &[usize],
    rng: &mut R,
) -> Result<()> {
    for _ in 0..cfg.warmup_steps {
        let tasks = choose_tasks(task_ids, cfg.meta_batch, rng);
        bc_step(cfg, models, opt, demos, &tasks, 0, rng)?;
    }
    Ok(())
}

/// Thread pool for rollouts, capped by `SQUIRL_THREADS` when set.
pub fn rollout_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("SQUIRL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("SQUIRL_THREADS must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build rollout pool: {e}")))
}

/// One stochastic training rollout. The result depends only on the
/// arguments, so rollouts can run in any order.
pub fn training_rollout(policy: &TaskPolicy, family: &TaskFamily, spec: &TaskSpec, z: &[f64], seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ POLICY_SEED_SALT);
    run_episode(family, spec, seed, |_, obs| Ok(policy.sample(obs, z, &mut rng)?.0))
}

/// Runs the SQUIRL variants selected by `cfg.algo`.
pub fn train(cfg: &RunConfig, demos: &DemoSet) -> Result<TrainOutput> {
    train_with(cfg, demos, |_, _| Ok(()))
}

/// [`train`], calling `on_epoch` after every epoch's metrics row.
pub fn train_with<F>(cfg: &RunConfig, demos: &DemoSet, mut on_epoch: F) -> Result<TrainOutput>
where
    F: FnMut(&EpochMetrics, &Models) -> Result<()>,
{
    if !matches!(cfg.algo, Algo::Squirl | Algo::SquirlIrlOnly) {
        return Err(Error::Config(format!("{} is not a SQUIRL variant", cfg.algo.name())));
    }
    cfg.validate()?;
    let family = cfg.task_family();
    let task_ids = check_demos(&family, demos)?;
    let specs: BTreeMap<usize, TaskSpec> = family.train_tasks().into_iter().map(|t| (t.task_id, t)).collect();
    let joint_bc = cfg.joint_bc && cfg.algo == Algo::Squirl;
    let bc_warmup = cfg.bc_warmup && cfg.algo == Algo::Squirl;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut models = Models::init(cfg, &family, &mut rng)?;
    let mut opt = Optimizers::new(cfg, &models);
    if bc_warmup {
        warm_up(cfg, &mut models, &mut opt, demos, &task_ids, &mut rng)?;
    }

    let mut temp = EntropyTemp::new(
        models.alpha(),
        cfg.target_entropy(family.action_dim()),
        cfg.alpha_auto && !family.is_discrete(),
        cfg.lr_alpha,
    );
    let pool = rollout_pool()?;
    let mut buffer = ReplayBuffer::new();
    let mut metrics = Metrics::new();
    let mut robot_trials = 0;
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        // Collect one rollout per sampled task, z from that task's demo.
        let tasks = choose_tasks(&task_ids, cfg.meta_batch, &mut rng);
        let mut jobs = Vec::with_capacity(tasks.len());
        for &t in &tasks {
            let ctx = sample_context(demos, t, cfg.context_size, &mut rng)?;
            let z = models.encoder.encode(&ctx)?;
            jobs.push((t, z, rng.random::<u64>()));
        }
        let episodes: Vec<Result<Episode>> = pool.install(|| {
            jobs.par_iter()
                .map(|(t, z, seed)| training_rollout(&models.policy, &family, &specs[t], z, *seed))
                .collect()
        });
        let mut successes = 0;
        for ((t, _, _), ep) in jobs.iter().zip(episodes) {
            let ep = ep?;
            successes += usize::from(ep.success);
            let traj = Trajectory::from_episode(*t, Source::Robot, ep);
            buffer.push(traj)?;
            robot_trials += 1;
        }

        // Every update draws its own tasks. Discriminator and RL batches mix
        // both sources, so they draw from tasks with robot data; BC draws
        // from every training task.
        let visited = buffer.task_ids();
        let mut irl_sum = 0.0;
        for _ in 0..cfg.irl_updates {
            let step_tasks = choose_tasks(&visited, cfg.meta_batch, &mut rng);
            let z = infer_embeddings(&models.encoder, demos, &step_tasks, cfg.context_size, &mut rng)?;
            let batch = sample_mixed_batch(demos, &buffer, &step_tasks, cfg.batch_size, &mut rng)?;
            let irl = irl_loss(&models.q, &models.policy, &batch, &z, None)?;
            irl_sum += finite(irl.loss, epoch, "irl")?;
            opt.q.step("q", models.q.net.params_mut(), &irl.grad_q)?;
            models.updates += 1;
        }

        let (mut rl_sum, mut bc_sum) = (0.0, 0.0);
        for _ in 0..cfg.policy_updates {
            if joint_bc {
                let bc_tasks = choose_tasks(&task_ids, cfg.meta_batch, &mut rng);
                bc_sum += bc_step(cfg, &mut models, &mut opt, demos, &bc_tasks, epoch, &mut rng)?.loss;
            }
            let step_tasks = choose_tasks(&visited, cfg.meta_batch, &mut rng);
            let z = infer_embeddings(&models.encoder, demos, &step_tasks, cfg.context_size, &mut rng)?;
            let batch = sample_mixed_batch(demos, &buffer, &step_tasks, cfg.batch_size, &mut rng)?;
            let rl = rl_policy_loss(&models.q, &models.policy, &batch, &z, temp.alpha(), &mut rng)?;
            rl_sum += finite(rl.loss, epoch, "rl")?;
            opt.policy_rl.step("policy", models.policy.net.params_mut(), &rl.grad_policy)?;
            temp.update(rl.entropy)?;
            models.updates += 1;
        }
        models.log_alpha = temp.log_alpha;

        let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
        metrics.push(EpochMetrics {
            epoch,
            irl_loss: mean(irl_sum, cfg.irl_updates),
            rl_loss: mean(rl_sum, cfg.policy_updates),
            bc_loss: if joint_bc { mean(bc_sum, cfg.policy_updates) } else { None },
            alpha: Some(temp.alpha()),
            train_success: Some(successes as f64 / tasks.len() as f64),
            robot_trials,
            wall_clock_s: start.elapsed().as_secs_f64(),
        })?;
        on_epoch(metrics.rows().last().expect("row just pushed"), &models)?;
    }
    Ok(TrainOutput {
        models,
        metrics,
        robot_trials,
        buffer,
    })
}

