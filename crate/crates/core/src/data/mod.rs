//! Trajectories, per-task demonstrations, cumulative robot buffers and the
//! batch samplers used by training.

mod demo_io;

pub use demo_io::{load_demos, read_demos, save_demos, write_demos, DEMO_MAGIC, DEMO_VERSION};

use std::collections::BTreeMap;

use rand::Rng;

use crate::envs::Episode;
use crate::error::{check_width, Error, Result};

/// Default number of expert pairs per context batch.
pub const DEFAULT_CONTEXT_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Expert,
    Robot,
}

/// One labeled `(state, action)` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Timestep {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub task_id: usize,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: usize,
    pub source: Source,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn from_episode(task_id: usize, source: Source, episode: Episode) -> Self {
        Self {
            task_id,
            source,
            states: episode.states,
            actions: episode.actions,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn timestep(&self, t: usize) -> Timestep {
        Timestep {
            state: self.states[t].clone(),
            action: self.actions[t].clone(),
            task_id: self.task_id,
            source: self.source,
        }
    }

    fn check(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        if self.is_empty() || self.states.len() != self.actions.len() {
            return Err(Error::Contract(format!(
                "trajectory for task {} is empty or ragged",
                self.task_id
            )));
        }
        for (s, a) in self.states.iter().zip(&self.actions) {
            check_width("trajectory state", state_dim, s.len())?;
            check_width("trajectory action", action_dim, a.len())?;
            if s.iter().chain(a).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("trajectory for task {}", self.task_id)));
            }
        }
        Ok(())
    }
}

/// Exactly one expert demonstration per task.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub state_dim: usize,
    pub action_dim: usize,
    demos: BTreeMap<usize, Trajectory>,
}

impl DemoSet {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            demos: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, demo: Trajectory) -> Result<()> {
        if demo.source != Source::Expert {
            return Err(Error::Contract("demonstrations must be expert data".into()));
        }
        demo.check(self.state_dim, self.action_dim)?;
        if self.demos.contains_key(&demo.task_id) {
            return Err(Error::Contract(format!(
                "task {} already has a demonstration",
                demo.task_id
            )));
        }
        self.demos.insert(demo.task_id, demo);
        Ok(())
    }

    pub fn get(&self, task_id: usize) -> Result<&Trajectory> {
        self.demos.get(&task_id).ok_or(Error::UnknownTask(task_id))
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.demos.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.demos.values()
    }
}

/// Append-only, per-task store of robot trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    per_task: BTreeMap<usize, Vec<Trajectory>>,
    per_task_steps: BTreeMap<usize, usize>,
    total_timesteps: usize,
    n_trajectories: usize,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.source != Source::Robot {
            return Err(Error::Contract("replay buffers only hold robot data".into()));
        }
        if traj.is_empty() {
            return Err(Error::Contract("cannot store an empty trajectory".into()));
        }
        self.total_timesteps += traj.len();
        self.n_trajectories += 1;
        *self.per_task_steps.entry(traj.task_id).or_default() += traj.len();
        self.per_task.entry(traj.task_id).or_default().push(traj);
        Ok(())
    }

    pub fn total_timesteps(&self) -> usize {
        self.total_timesteps
    }

    pub fn n_trajectories(&self) -> usize {
        self.n_trajectories
    }

    /// Tasks holding at least one trajectory, ascending.
    pub fn task_ids(&self) -> Vec<usize> {
        self.per_task.keys().copied().collect()
    }

    pub fn task(&self, task_id: usize) -> &[Trajectory] {
        self.per_task.get(&task_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn task_timesteps(&self, task_id: usize) -> usize {
        self.per_task_steps.get(&task_id).copied().unwrap_or(0)
    }

    /// Uniform timestep from every robot step recorded for `task_id`.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, task_id: usize, rng: &mut R) -> Option<Timestep> {
        let n = self.task_timesteps(task_id);
        if n == 0 {
            return None;
        }
        let mut k = rng.random_range(0..n);
        for traj in self.task(task_id) {
            if k < traj.len() {
                return Some(traj.timestep(k));
            }
            k -= traj.len();
        }
        unreachable!("step counter matches stored trajectories")
    }
}

/// `C` expert pairs from one task's demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    pub task_id: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl ContextBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Context made of every step of a demonstration, in order.
    pub fn from_trajectory(demo: &Trajectory) -> Self {
        Self {
            task_id: demo.task_id,
            states: demo.states.clone(),
            actions: demo.actions.clone(),
        }
    }
}

/// Draws `c` pairs uniformly with replacement from the task's demonstration.
pub fn sample_context<R: Rng + ?Sized>(demos: &DemoSet, task_id: usize, c: usize, rng: &mut R) -> Result<ContextBatch> {
    if c == 0 {
        return Err(Error::Contract("context size must be at least 1".into()));
    }
    let demo = demos.get(task_id)?;
    Ok(sample_context_from(demo, c, rng))
}

pub fn sample_context_from<R: Rng + ?Sized>(demo: &Trajectory, c: usize, rng: &mut R) -> ContextBatch {
    let mut states = Vec::with_capacity(c);
    let mut actions = Vec::with_capacity(c);
    for _ in 0..c {
        let t = rng.random_range(0..demo.len());
        states.push(demo.states[t].clone());
        actions.push(demo.actions[t].clone());
    }
    ContextBatch {
        task_id: demo.task_id,
        states,
        actions,
    }
}

/// `b` expert timesteps drawn from the demonstrations of `task_ids`.
pub fn sample_expert_batch<R: Rng + ?Sized>(
    demos: &DemoSet,
    task_ids: &[usize],
    b: usize,
    rng: &mut R,
) -> Result<Vec<Timestep>> {
    if task_ids.is_empty() {
        return Err(Error::Contract("no tasks requested".into()));
    }
    (0..b)
        .map(|_| {
            let task = task_ids[rng.random_range(0..task_ids.len())];
            let demo = demos.get(task)?;
            Ok(demo.timestep(rng.random_range(0..demo.len())))
        })
        .collect()
}

/// `b` timesteps pooled over `task_ids`; each draw is expert or robot with
/// probability one half.
pub fn sample_mixed_batch<R: Rng + ?Sized>(
    demos: &DemoSet,
    buffer: &ReplayBuffer,
    task_ids: &[usize],
    b: usize,
    rng: &mut R,
) -> Result<Vec<Timestep>> {
    for &t in task_ids {
        demos.get(t)?;
    }
    let robot_tasks: Vec<usize> = task_ids
        .iter()
        .copied()
        .filter(|&t| buffer.task_timesteps(t) > 0)
        .collect();
    if robot_tasks.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut batch = Vec::with_capacity(b);
    for _ in 0..b {
        if rng.random_bool(0.5) {
            let task = task_ids[rng.random_range(0..task_ids.len())];
            let demo = demos.get(task)?;
            batch.push(demo.timestep(rng.random_range(0..demo.len())));
        } else {
            let task = robot_tasks[rng.random_range(0..robot_tasks.len())];
            batch.push(buffer.sample_timestep(task, rng).expect("task has robot data"));
        }
    }
    Ok(batch)
}
