use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squirl_core::envs::point_pcd::{BOX_RESET_X, BOX_RESET_Y, EXPERT_ACTION_LIMIT};
use squirl_core::envs::{expert_episode, run_episode, EnvState, TaskFamily};
use squirl_core::TaskSpec;

fn pcd() -> TaskFamily {
    TaskFamily::point_pcd(30, 128)
}

fn with_param(spec: &TaskSpec, task_param: f64) -> TaskSpec {
    TaskSpec { task_param, ..*spec }
}

#[test]
fn observations_never_reveal_the_drop_location() {
    let family = pcd();
    let base = family.train_tasks()[0];
    for seed in 0..200 {
        let a = family.reset(&base, seed).unwrap();
        let b = family.reset(&with_param(&base, 0.21), seed).unwrap();
        assert_eq!(family.observe(&a), family.observe(&b));
        // The same action sequence keeps the observations equal until the drop.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut sa, mut sb) = (a, b);
        for _ in 0..64 {
            let act: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ra = family.step(&sa, &act, &base).unwrap();
            let rb = family.step(&sb, &act, &with_param(&base, 0.21)).unwrap();
            if ra.done || rb.done {
                break;
            }
            assert_eq!(family.observe(&ra.next_state), family.observe(&rb.next_state));
            (sa, sb) = (ra.next_state, rb.next_state);
        }
    }
}

#[test]
fn resets_stay_in_the_box_sampling_region_and_never_start_solved() {
    let family = pcd();
    let spec = family.train_tasks()[7];
    for seed in 0..10_000 {
        let EnvState::Point(s) = family.reset(&spec, seed).unwrap() else {
            panic!("point family gives point states")
        };
        assert!((BOX_RESET_X.0..BOX_RESET_X.1).contains(&s.box_pos[0]));
        assert!((BOX_RESET_Y.0..BOX_RESET_Y.1).contains(&s.box_pos[1]));
        assert!(!s.is_success(spec.task_param));
    }
    assert_eq!(family.reset(&spec, 5).unwrap(), family.reset(&spec, 5).unwrap());
}

#[test]
fn expert_solves_every_training_task_from_many_starts() {
    let family = pcd();
    for spec in family.train_tasks() {
        for seed in 0..20 {
            let ep = expert_episode(&family, &spec, seed).unwrap();
            assert!(ep.success, "task {} seed {seed}", spec.task_id);
            assert!(ep.len() <= spec.horizon);
            let peak = ep.actions.iter().flatten().fold(0.0_f64, |m, a| m.max(a.abs()));
            assert!(peak <= EXPERT_ACTION_LIMIT);
        }
    }
}

#[test]
fn random_policy_rarely_succeeds() {
    let family = pcd();
    let tasks = family.train_tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    let mut wins = 0;
    for i in 0..n {
        let ep = run_episode(&family, &tasks[i % tasks.len()], i as u64, |_, _| {
            Ok((0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .unwrap();
        wins += usize::from(ep.success);
    }
    assert!(wins * 100 < n, "{wins} of {n} random episodes succeeded");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every episode ends exactly once, at success or the horizon.
    #[test]
    fn episodes_end_once_within_the_horizon(seed in any::<u64>(), x in -0.25f64..=0.25, horizon in 1usize..160) {
        let family = TaskFamily::point_pcd(30, horizon);
        let spec = TaskSpec { task_param: x, horizon, ..family.train_tasks()[0] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = family.reset(&spec, seed).unwrap();
        let mut terminals = 0;
        for _ in 0..horizon + 5 {
            let act: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = family.step(&state, &act, &spec).unwrap();
            if let EnvState::Point(s) = &r.next_state {
                prop_assert!(s.agent_pos.iter().all(|p| p.abs() <= 0.5));
                if s.carrying {
                    prop_assert_eq!(s.box_pos, s.agent_pos);
                }
            }
            state = r.next_state;
            if r.done {
                terminals += 1;
                break;
            }
        }
        prop_assert_eq!(terminals, 1);
        prop_assert!(state.t() <= horizon);
    }

    #[test]
    fn discrete_episodes_last_the_horizon(seed in any::<u64>(), goal in 0usize..9, horizon in 1usize..30) {
        let family = TaskFamily::gridworld(3, 5, horizon, 0.9);
        let spec = TaskSpec { task_param: goal as f64, horizon, ..family.train_tasks()[0] };
        let ep = expert_episode(&family, &spec, seed).unwrap();
        prop_assert_eq!(ep.len(), horizon);
    }
}
