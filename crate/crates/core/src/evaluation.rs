//! Demonstration generation and success-rate evaluation on seen or unseen
//! tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{standard_bc_seed, train_standard_bc_task, Trained};
use crate::config::RunConfig;
use crate::data::{DemoSet, Source, Trajectory};
use crate::envs::{expert_episode, TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::squirl::{adapt_and_rollout, evaluate_policy, RolloutReport};

/// Ids given to sampled test tasks start here, clear of training ids.
pub const UNSEEN_TASK_ID_BASE: usize = 1_000_000;

/// Per-task seed for the expert's demonstration episode.
pub fn demo_seed(seed: u64, task_id: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_id as u64);
    rng.random()
}

/// One expert demonstration per task, and whether each one succeeded.
pub fn generate_demos(family: &TaskFamily, tasks: &[TaskSpec], seed: u64) -> Result<(DemoSet, Vec<bool>)> {
    let mut demos = DemoSet::new(family.obs_dim(), family.action_dim());
    let mut success = Vec::with_capacity(tasks.len());
    for spec in tasks {
        let ep = expert_episode(family, spec, demo_seed(seed, spec.task_id))?;
        success.push(ep.success);
        demos.insert(Trajectory::from_episode(spec.task_id, Source::Expert, ep))?;
    }
    Ok((demos, success))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seen" => Some(Split::Seen),
            "unseen" => Some(Split::Unseen),
            _ => None,
        }
    }
}

/// A task to evaluate, with the single demonstration the learner gets.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub spec: TaskSpec,
    pub demo: Trajectory,
}

/// Tasks for a split. Seen tasks reuse the training demonstrations; unseen
/// tasks are drawn from the test distribution with fresh expert demos.
pub fn eval_tasks(family: &TaskFamily, split: Split, train_demos: &DemoSet, n_unseen: usize, seed: u64) -> Result<Vec<EvalTask>> {
    match split {
        Split::Seen => family
            .train_tasks()
            .into_iter()
            .map(|spec| {
                Ok(EvalTask {
                    demo: train_demos.get(spec.task_id)?.clone(),
                    spec,
                })
            })
            .collect(),
        Split::Unseen => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let specs = (0..n_unseen)
                .map(|i| family.sample_test_task(UNSEEN_TASK_ID_BASE + i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (demos, _) = generate_demos(family, &specs, seed)?;
            specs
                .into_iter()
                .map(|spec| {
                    Ok(EvalTask {
                        demo: demos.get(spec.task_id)?.clone(),
                        spec,
                    })
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task_id: usize,
    pub task_param: f64,
    pub report: RolloutReport,
}

/// Success of a trained learner on each task. Meta-learners adapt from the
/// task's demo; standard BC fits a new policy to it unless the task was
/// trained on.
pub fn evaluate(
    cfg: &RunConfig,
    trained: &Trained,
    tasks: &[EvalTask],
    n_rollouts: usize,
    seed: u64,
    obs_noise: f64,
) -> Result<Vec<TaskResult>> {
    let family = cfg.task_family();
    let mut out = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        if task.demo.task_id != task.spec.task_id {
            return Err(Error::Contract(format!(
                "demo of task {} paired with task {}",
                task.demo.task_id, task.spec.task_id
            )));
        }
        let rollout_seed = demo_seed(seed, i);
        let report = match trained {
            Trained::Meta(m) => adapt_and_rollout(
                &m.encoder,
                &m.policy,
                &task.demo,
                &family,
                &task.spec,
                n_rollouts,
                rollout_seed,
                obs_noise,
            )?,
            Trained::PerTask(models) => {
                let fitted;
                let policy = match models.policies.get(&task.spec.task_id) {
                    Some(p) => p,
                    None => {
                        fitted = train_standard_bc_task(cfg, &family, &task.demo, standard_bc_seed(cfg.seed, task.spec.task_id))?.0;
                        &fitted
                    }
                };
                evaluate_policy(policy, &[], &family, &task.spec, n_rollouts, rollout_seed, obs_noise)?
            }
        };
        out.push(TaskResult {
            task_id: task.spec.task_id,
            task_param: task.spec.task_param,
            report,
        });
    }
    Ok(out)
}

/// Pooled success rate over all rollouts.
pub fn aggregate_success(results: &[TaskResult]) -> f64 {
    let (s, n) = results
        .iter()
        .fold((0, 0), |(s, n), r| (s + r.report.successes, n + r.report.n_rollouts));
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Sample mean and standard deviation (n - 1 denominator; zero for n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
