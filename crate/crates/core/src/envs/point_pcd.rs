//! Continuous 2D point-mass pick-carry-drop.
//!
//! The agent starts somewhere in the upper half of the arena, has to reach the
//! box, grasp it, carry it down to the drop zone and release it above a hidden
//! drop location `x*`. Only the expert knows `x*`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.9;
pub const ARENA_HALF_WIDTH: f64 = 0.5;
pub const GRASP_RADIUS: f64 = 0.05;
pub const DROP_TOLERANCE: f64 = 0.04;
/// Releasing is only permitted below this height.
pub const DROP_ZONE_Y: f64 = -0.35;

pub const AGENT_RESET_X: (f64, f64) = (-0.3, 0.3);
pub const AGENT_RESET_Y: (f64, f64) = (0.0, 0.3);
pub const BOX_RESET_X: (f64, f64) = (-0.3, 0.3);
pub const BOX_RESET_Y: (f64, f64) = (0.1, 0.3);

pub const OBS_DIM: usize = 10;
pub const ACTION_DIM: usize = 3;

/// Largest magnitude the scripted expert ever commands on any action component.
pub const EXPERT_ACTION_LIMIT: f64 = 0.99;
const EXPERT_KP: f64 = 16.0;
const EXPERT_KD: f64 = 7.0;
const EXPERT_CARRY_Y: f64 = -0.42;
const EXPERT_GRASP_DIST: f64 = 0.03;
const EXPERT_RELEASE_DIST: f64 = 0.01;
const EXPERT_RELEASE_Y: f64 = -0.38;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Approach,
    Carry,
    Done,
}

impl Stage {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Stage::Approach => [1.0, 0.0, 0.0],
            Stage::Carry => [0.0, 1.0, 0.0],
            Stage::Done => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub agent_pos: [f64; 2],
    pub agent_vel: [f64; 2],
    pub box_pos: [f64; 2],
    pub carrying: bool,
    pub stage: Stage,
    pub t: usize,
}

impl PointState {
    pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let agent_pos = [
            rng.random_range(AGENT_RESET_X.0..AGENT_RESET_X.1),
            rng.random_range(AGENT_RESET_Y.0..AGENT_RESET_Y.1),
        ];
        let box_pos = [
            rng.random_range(BOX_RESET_X.0..BOX_RESET_X.1),
            rng.random_range(BOX_RESET_Y.0..BOX_RESET_Y.1),
        ];
        Self {
            agent_pos,
            agent_vel: [0.0; 2],
            box_pos,
            carrying: false,
            stage: Stage::Approach,
            t: 0,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let stage = self.stage.one_hot();
        vec![
            self.agent_pos[0],
            self.agent_pos[1],
            self.agent_vel[0],
            self.agent_vel[1],
            self.box_pos[0],
            self.box_pos[1],
            if self.carrying { 1.0 } else { 0.0 },
            stage[0],
            stage[1],
            stage[2],
        ]
    }

    /// Success predicate: the box has been released over the drop location.
    pub fn is_success(&self, drop_x: f64) -> bool {
        self.stage == Stage::Done
            && !self.carrying
            && (self.box_pos[0] - drop_x).abs() < DROP_TOLERANCE
            && self.box_pos[1] < DROP_ZONE_Y
    }

    /// Advances one step. Returns whether the box was dropped successfully.
    /// `action` must already be finite.
    pub fn step(&mut self, action: &[f64], drop_x: f64) -> bool {
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        for k in 0..2 {
            self.agent_vel[k] = DAMPING * self.agent_vel[k] + DT * a[k];
            let p = self.agent_pos[k] + DT * self.agent_vel[k];
            if p.abs() > ARENA_HALF_WIDTH {
                self.agent_pos[k] = p.clamp(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
                self.agent_vel[k] = 0.0;
            } else {
                self.agent_pos[k] = p;
            }
        }
        if self.carrying {
            self.box_pos = self.agent_pos;
        }
        self.t += 1;

        let grip = a[2] > 0.0;
        if !grip {
            return false;
        }
        if !self.carrying {
            if dist(self.agent_pos, self.box_pos) < GRASP_RADIUS {
                self.carrying = true;
                self.box_pos = self.agent_pos;
                self.stage = Stage::Carry;
            }
            false
        } else if self.agent_pos[1] < DROP_ZONE_Y {
            self.carrying = false;
            if (self.box_pos[0] - drop_x).abs() < DROP_TOLERANCE {
                self.stage = Stage::Done;
                true
            } else {
                self.stage = Stage::Approach;
                false
            }
        } else {
            false
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Proportional-derivative controller that knows the drop location.
pub fn expert_action<R: Rng + ?Sized>(
    state: &PointState,
    drop_x: f64,
    jitter: f64,
    rng: &mut R,
) -> Vec<f64> {
    let (target, release) = if state.carrying {
        let target = [drop_x, EXPERT_CARRY_Y];
        let release = (state.agent_pos[0] - drop_x).abs() < EXPERT_RELEASE_DIST
            && state.agent_pos[1] < EXPERT_RELEASE_Y;
        (target, release)
    } else {
        let release = dist(state.agent_pos, state.box_pos) < EXPERT_GRASP_DIST;
        (state.box_pos, release)
    };
    let mut action = vec![0.0; ACTION_DIM];
    for k in 0..2 {
        action[k] = EXPERT_KP * (target[k] - state.agent_pos[k]) - EXPERT_KD * state.agent_vel[k];
    }
    // Hold still while gripping so the grasp happens where it was decided.
    if release {
        action[0] = -EXPERT_KD * state.agent_vel[0];
        action[1] = -EXPERT_KD * state.agent_vel[1];
    }
    action[2] = if release { 1.0 } else { -1.0 };
    if jitter > 0.0 {
        let noise = Normal::new(0.0, jitter).expect("positive jitter");
        for a in &mut action {
            *a += noise.sample(rng);
        }
    }
    for a in &mut action {
        *a = a.clamp(-EXPERT_ACTION_LIMIT, EXPERT_ACTION_LIMIT);
    }
    action
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still_state() -> PointState {
        PointState {
            agent_pos: [0.1, 0.2],
            agent_vel: [0.0, 0.0],
            box_pos: [-0.2, 0.15],
            carrying: false,
            stage: Stage::Approach,
            t: 0,
        }
    }

    #[test]
    fn zero_action_keeps_position() {
        let mut s = still_state();
        s.step(&[0.0, 0.0, 0.0], 0.0);
        assert_eq!(s.agent_pos, [0.1, 0.2]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn grasp_requires_proximity() {
        let mut s = still_state();
        s.step(&[0.0, 0.0, 1.0], 0.0);
        assert!(!s.carrying);
        s.box_pos = [0.12, 0.2];
        s.step(&[0.0, 0.0, 1.0], 0.0);
        assert!(s.carrying);
        assert_eq!(s.box_pos, s.agent_pos);
        assert_eq!(s.stage, Stage::Carry);
    }

    #[test]
    fn release_outside_drop_zone_is_ignored() {
        let mut s = still_state();
        s.carrying = true;
        s.box_pos = s.agent_pos;
        s.stage = Stage::Carry;
        s.step(&[0.0, 0.0, 1.0], 0.1);
        assert!(s.carrying);
    }

    #[test]
    fn release_over_target_succeeds_and_elsewhere_fails() {
        let mut s = still_state();
        s.agent_pos = [0.13, -0.4];
        s.box_pos = s.agent_pos;
        s.carrying = true;
        s.stage = Stage::Carry;
        let mut miss = s.clone();
        assert!(s.step(&[0.0, 0.0, 1.0], 0.1));
        assert!(s.is_success(0.1));
        assert!(!miss.step(&[0.0, 0.0, 1.0], 0.2));
        assert!(!miss.carrying);
        assert_eq!(miss.stage, Stage::Approach);
    }

    #[test]
    fn arena_clips_position() {
        let mut s = still_state();
        s.agent_pos = [0.499, 0.0];
        s.agent_vel = [1.0, 0.0];
        s.step(&[1.0, 0.0, 0.0], 0.0);
        assert_eq!(s.agent_pos[0], ARENA_HALF_WIDTH);
        assert_eq!(s.agent_vel[0], 0.0);
    }

    #[test]
    fn expert_grips_at_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = still_state();
        s.box_pos = s.agent_pos;
        let a = expert_action(&s, 0.0, 0.0, &mut rng);
        assert!(a[2] > 0.0);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }
}
