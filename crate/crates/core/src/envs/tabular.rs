//! Explicit finite MDPs for the discrete families.

use crate::error::{Error, Result};

/// Dense tables of a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[(s * n_actions + a) * n_states + s2]`.
    pub transitions: Vec<f64>,
    /// `reward[s * n_actions + a]`.
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
}

impl TabularMdp {
    pub fn transition(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.n_actions + a) * self.n_states;
        &self.transitions[off..off + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Checks every table is a proper distribution.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-9;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > tol {
                    return Err(Error::Contract(format!(
                        "transition row ({s}, {a}) is not a distribution"
                    )));
                }
            }
        }
        let init: f64 = self.initial.iter().sum();
        if self.initial.iter().any(|p| *p < 0.0) || (init - 1.0).abs() > tol {
            return Err(Error::Contract("initial distribution is not normalized".into()));
        }
        Ok(())
    }
}

pub const GRID_ACTIONS: usize = 4;

/// Deterministic move on an `n x n` grid; cells are indexed `y * n + x`.
/// Actions: 0 right (+x), 1 left (-x), 2 up (+y), 3 down (-y). Walls block.
pub fn grid_move(n: usize, cell: usize, action: usize) -> usize {
    let (x, y) = (cell % n, cell / n);
    let (x, y) = match action {
        0 => ((x + 1).min(n - 1), y),
        1 => (x.saturating_sub(1), y),
        2 => (x, (y + 1).min(n - 1)),
        _ => (x, y.saturating_sub(1)),
    };
    y * n + x
}

/// Gridworld with reward `reward_scale` in the goal cell and a uniform start.
pub fn gridworld(n: usize, goal: usize, reward_scale: f64) -> TabularMdp {
    let ns = n * n;
    let mut transitions = vec![0.0; ns * GRID_ACTIONS * ns];
    let mut reward = vec![0.0; ns * GRID_ACTIONS];
    for s in 0..ns {
        for a in 0..GRID_ACTIONS {
            transitions[(s * GRID_ACTIONS + a) * ns + grid_move(n, s, a)] = 1.0;
            if s == goal {
                reward[s * GRID_ACTIONS + a] = reward_scale;
            }
        }
    }
    TabularMdp {
        n_states: ns,
        n_actions: GRID_ACTIONS,
        transitions,
        reward,
        initial: vec![1.0 / ns as f64; ns],
    }
}

/// Single-state bandit with `k` arms; arm `goal` pays `reward_scale`.
pub fn bandit(k: usize, goal: usize, reward_scale: f64) -> TabularMdp {
    let mut reward = vec![0.0; k];
    reward[goal] = reward_scale;
    TabularMdp {
        n_states: 1,
        n_actions: k,
        transitions: vec![1.0; k],
        reward,
        initial: vec![1.0],
    }
}
