//! Multi-task environment families and their scripted experts.
//!
//! * `point_pcd`: continuous point-mass pick-carry-drop with a hidden drop location.
//! * `gridworld`: `n x n` grid with a hidden goal cell.
//! * `bandit`: single state, `k` arms, hidden best arm.
//!
//! Observations never contain the task parameter.

pub mod point_pcd;
pub mod tabular;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_finite, check_width, Error, Result};
use crate::oracle;
pub use point_pcd::{PointState, Stage};
pub use tabular::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    PointPcd,
    Gridworld,
    Bandit,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::PointPcd => "point_pcd",
            FamilyKind::Gridworld => "gridworld",
            FamilyKind::Bandit => "bandit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "point_pcd" => Some(FamilyKind::PointPcd),
            "gridworld" => Some(FamilyKind::Gridworld),
            "bandit" => Some(FamilyKind::Bandit),
            _ => None,
        }
    }
}

/// Drop locations of the training tasks are `-0.15, -0.14, ..., 0.14`.
pub const PCD_TRAIN_GRID: usize = 30;
pub const PCD_TRAIN_LOW_CENTI: i64 = -15;
/// Range of drop locations for unseen tasks.
pub const PCD_TEST_RANGE: (f64, f64) = (-0.25, 0.25);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub family: FamilyKind,
    /// Drop location for `point_pcd`; goal index for the discrete families.
    pub task_param: f64,
    pub horizon: usize,
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    Point(PointState),
    Discrete { cell: usize, t: usize },
}

impl EnvState {
    pub fn t(&self) -> usize {
        match self {
            EnvState::Point(s) => s.t,
            EnvState::Discrete { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub done: bool,
    pub success: bool,
}

/// A parameterized task distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub kind: FamilyKind,
    pub horizon: usize,
    pub n_train_tasks: usize,
    /// Gaussian jitter on scripted point-mass expert actions.
    pub expert_noise: f64,
    pub grid_size: usize,
    pub n_arms: usize,
    pub gamma: f64,
    /// Temperature of the soft-optimal tabular experts.
    pub expert_alpha: f64,
    pub reward_scale: f64,
}

impl TaskFamily {
    pub fn point_pcd(n_train_tasks: usize, horizon: usize) -> Self {
        Self {
            kind: FamilyKind::PointPcd,
            horizon,
            n_train_tasks,
            expert_noise: 0.01,
            grid_size: 3,
            n_arms: 3,
            gamma: 0.99,
            expert_alpha: 1.0,
            reward_scale: 1.0,
        }
    }

    pub fn gridworld(size: usize, n_train_tasks: usize, horizon: usize, gamma: f64) -> Self {
        Self {
            kind: FamilyKind::Gridworld,
            horizon,
            n_train_tasks,
            expert_noise: 0.0,
            grid_size: size,
            n_arms: 3,
            gamma,
            expert_alpha: 0.1,
            reward_scale: 1.0,
        }
    }

    pub fn bandit(n_arms: usize, n_train_tasks: usize, horizon: usize) -> Self {
        Self {
            kind: FamilyKind::Bandit,
            horizon,
            n_train_tasks,
            expert_noise: 0.0,
            grid_size: 3,
            n_arms,
            gamma: 0.0,
            expert_alpha: 1.0,
            reward_scale: 1.0,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.kind != FamilyKind::PointPcd
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            FamilyKind::PointPcd => point_pcd::OBS_DIM,
            FamilyKind::Gridworld => self.grid_size * self.grid_size,
            FamilyKind::Bandit => 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            FamilyKind::PointPcd => point_pcd::ACTION_DIM,
            FamilyKind::Gridworld => tabular::GRID_ACTIONS,
            FamilyKind::Bandit => self.n_arms,
        }
    }

    fn n_goals(&self) -> usize {
        match self.kind {
            FamilyKind::PointPcd => PCD_TRAIN_GRID,
            FamilyKind::Gridworld => self.grid_size * self.grid_size,
            FamilyKind::Bandit => self.n_arms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_train_tasks == 0 || self.n_train_tasks > self.n_goals() {
            return Err(Error::Config(format!(
                "{} supports between 1 and {} training tasks, got {}",
                self.kind.name(),
                self.n_goals(),
                self.n_train_tasks
            )));
        }
        if self.is_discrete() && (self.grid_size < 2 || self.n_arms < 2) {
            return Err(Error::Config("discrete families need at least 2 cells/arms".into()));
        }
        Ok(())
    }

    fn train_goal_index(&self, i: usize) -> usize {
        match self.kind {
            // spread a subset evenly over the 30-point grid
            FamilyKind::PointPcd => i * PCD_TRAIN_GRID / self.n_train_tasks,
            _ => i,
        }
    }

    /// The fixed training tasks, with ids `0..n_train_tasks`.
    pub fn train_tasks(&self) -> Vec<TaskSpec> {
        (0..self.n_train_tasks)
            .map(|i| {
                let idx = self.train_goal_index(i);
                let task_param = match self.kind {
                    FamilyKind::PointPcd => (PCD_TRAIN_LOW_CENTI + idx as i64) as f64 / 100.0,
                    _ => idx as f64,
                };
                TaskSpec {
                    family: self.kind,
                    task_param,
                    horizon: self.horizon,
                    task_id: i,
                }
            })
            .collect()
    }

    /// Draws a task from the test distribution.
    ///
    /// For `point_pcd` the drop location is uniform over the full valid range.
    /// Discrete families draw a goal that no training task uses.
    pub fn sample_test_task<R: Rng + ?Sized>(&self, task_id: usize, rng: &mut R) -> Result<TaskSpec> {
        let task_param = match self.kind {
            FamilyKind::PointPcd => rng.random_range(PCD_TEST_RANGE.0..=PCD_TEST_RANGE.1),
            _ => {
                let unseen = self.n_goals() - self.n_train_tasks;
                if unseen == 0 {
                    return Err(Error::InvalidTask(
                        "every goal is a training task; no unseen tasks remain".into(),
                    ));
                }
                (self.n_train_tasks + rng.random_range(0..unseen)) as f64
            }
        };
        Ok(TaskSpec {
            family: self.kind,
            task_param,
            horizon: self.horizon,
            task_id,
        })
    }

    pub fn validate_spec(&self, spec: &TaskSpec) -> Result<()> {
        if spec.family != self.kind {
            return Err(Error::InvalidTask(format!(
                "task of family {} given to {}",
                spec.family.name(),
                self.kind.name()
            )));
        }
        if spec.horizon == 0 {
            return Err(Error::InvalidTask("horizon must be positive".into()));
        }
        let p = spec.task_param;
        let ok = match self.kind {
            FamilyKind::PointPcd => p.is_finite() && (PCD_TEST_RANGE.0..=PCD_TEST_RANGE.1).contains(&p),
            _ => p.fract() == 0.0 && p >= 0.0 && (p as usize) < self.n_goals(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTask(format!(
                "task parameter {p} outside the {} range",
                self.kind.name()
            )))
        }
    }

    pub fn reset(&self, spec: &TaskSpec, seed: u64) -> Result<EnvState> {
        self.validate_spec(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self.kind {
            FamilyKind::PointPcd => EnvState::Point(PointState::reset(&mut rng)),
            FamilyKind::Gridworld => EnvState::Discrete {
                cell: rng.random_range(0..self.obs_dim()),
                t: 0,
            },
            FamilyKind::Bandit => EnvState::Discrete { cell: 0, t: 0 },
        })
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        match state {
            EnvState::Point(s) => s.observe(),
            EnvState::Discrete { cell, .. } => {
                let mut obs = vec![0.0; self.obs_dim()];
                obs[*cell] = 1.0;
                obs
            }
        }
    }

    pub fn step(&self, state: &EnvState, action: &[f64], spec: &TaskSpec) -> Result<StepResult> {
        check_width("env action", self.action_dim(), action.len())?;
        check_finite("env action", action)?;
        match state {
            EnvState::Point(s) => {
                let mut next = s.clone();
                let success = next.step(action, spec.task_param);
                let done = success || next.t >= spec.horizon;
                Ok(StepResult {
                    next_state: EnvState::Point(next),
                    done,
                    success,
                })
            }
            EnvState::Discrete { cell, t } => {
                let a = argmax(action);
                let next_cell = match self.kind {
                    FamilyKind::Gridworld => tabular::grid_move(self.grid_size, *cell, a),
                    _ => 0,
                };
                let t = t + 1;
                let done = t >= spec.horizon;
                let success = done
                    && self.kind == FamilyKind::Gridworld
                    && next_cell == spec.task_param as usize;
                Ok(StepResult {
                    next_state: EnvState::Discrete { cell: next_cell, t },
                    done,
                    success,
                })
            }
        }
    }

    pub fn tabular_mdp(&self, spec: &TaskSpec) -> Result<TabularMdp> {
        self.validate_spec(spec)?;
        let goal = spec.task_param as usize;
        match self.kind {
            FamilyKind::PointPcd => Err(Error::InvalidTask(
                "point_pcd is continuous and has no tabular form".into(),
            )),
            FamilyKind::Gridworld => Ok(tabular::gridworld(self.grid_size, goal, self.reward_scale)),
            FamilyKind::Bandit => Ok(tabular::bandit(self.n_arms, goal, self.reward_scale)),
        }
    }

    /// The expert for a task; it sees the task parameter.
    pub fn expert(&self, spec: &TaskSpec) -> Result<Expert> {
        self.validate_spec(spec)?;
        match self.kind {
            FamilyKind::PointPcd => Ok(Expert::Point {
                drop_x: spec.task_param,
                jitter: self.expert_noise,
            }),
            _ => {
                let mdp = self.tabular_mdp(spec)?;
                let sol = oracle::soft_value_iteration(&mdp, self.expert_alpha, self.gamma, 1e-12)?;
                Ok(Expert::Tabular { policy: sol.policy })
            }
        }
    }
}

/// Scripted (point-mass) or soft-optimal (tabular) expert.
#[derive(Debug, Clone, PartialEq)]
pub enum Expert {
    Point { drop_x: f64, jitter: f64 },
    Tabular { policy: Vec<Vec<f64>> },
}

impl Expert {
    pub fn act<R: Rng + ?Sized>(&self, state: &EnvState, rng: &mut R) -> Vec<f64> {
        match (self, state) {
            (Expert::Point { drop_x, jitter }, EnvState::Point(s)) => {
                point_pcd::expert_action(s, *drop_x, *jitter, rng)
            }
            (Expert::Tabular { policy }, EnvState::Discrete { cell, .. }) => {
                let probs = &policy[*cell];
                let a = sample_categorical(probs, rng);
                one_hot(probs.len(), a)
            }
            _ => panic!("expert and state belong to different families"),
        }
    }
}

/// Observation-action record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Runs one episode from `reset(spec, seed)`. `act` sees the full state and
/// the observation and returns the action to execute; the observation and
/// that action are recorded.
pub fn run_episode<F>(family: &TaskFamily, spec: &TaskSpec, seed: u64, mut act: F) -> Result<Episode>
where
    F: FnMut(&EnvState, &[f64]) -> Result<Vec<f64>>,
{
    let mut state = family.reset(spec, seed)?;
    let mut episode = Episode {
        states: Vec::new(),
        actions: Vec::new(),
        success: false,
    };
    loop {
        let obs = family.observe(&state);
        let action = act(&state, &obs)?;
        let res = family.step(&state, &action, spec)?;
        episode.states.push(obs);
        episode.actions.push(action);
        state = res.next_state;
        if res.done {
            episode.success = res.success;
            return Ok(episode);
        }
    }
}

/// Rolls out the task's expert.
pub fn expert_episode(family: &TaskFamily, spec: &TaskSpec, seed: u64) -> Result<Episode> {
    let expert = family.expert(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    run_episode(family, spec, seed, |state, _| Ok(expert.act(state, &mut rng)))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
