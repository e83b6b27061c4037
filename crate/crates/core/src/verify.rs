//! Self-check suite behind `squirl oracle-check`.
//!
//! Every analytic gradient is compared with central differences on small
//! networks, the policy objective is compared with the adversarial generator
//! objective, the discriminator's optimum is compared with the expert policy
//! and the tabular solvers are checked against closed forms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ContextBatch, Source, Timestep};
use crate::envs::{one_hot, tabular, TabularMdp};
use crate::error::Result;
use crate::nn::gradcheck::{central_difference, norm, relative_vector_difference};
use crate::nn::{Activation, AdamState};
use crate::oracle::{exact_kl, soft_value_iteration, softmax};
use crate::squirl::losses::{discriminator_logit, irl_loss_signed, log_discriminator, Embeddings};
use crate::squirl::{bc_loss, gan_generator_loss, irl_loss, rl_policy_loss, PolicyHead, SoftQ, TaskEncoder, TaskPolicy};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_TRIALS: usize = 20;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    /// `value < bound`, with both in the detail line.
    fn below(name: &'static str, value: f64, bound: f64) -> Self {
        Self::new(name, value < bound, format!("{value:.3e} < {bound:.0e}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Flips the sign of the discriminator gradient, to show the suite
    /// catches it.
    pub inject_irl_sign_flip: bool,
    pub seed: u64,
}

/// Small networks used by the gradient checks; each has under 200 weights.
pub struct TinyProblem {
    pub encoder: TaskEncoder,
    pub policy: TaskPolicy,
    pub q: SoftQ,
    pub z: Embeddings,
    pub contexts: BTreeMap<usize, ContextBatch>,
    pub expert: Vec<Timestep>,
    pub mixed: Vec<Timestep>,
}

const TINY_STATE: usize = 2;
const TINY_Z: usize = 2;
const TINY_TASKS: usize = 2;

fn random_action<R: Rng + ?Sized>(head: PolicyHead, a_dim: usize, rng: &mut R) -> Vec<f64> {
    match head {
        PolicyHead::TanhGaussian => (0..a_dim).map(|_| rng.random_range(-0.9..0.9)).collect(),
        PolicyHead::Categorical => one_hot(a_dim, rng.random_range(0..a_dim)),
    }
}

fn random_timestep<R: Rng + ?Sized>(head: PolicyHead, a_dim: usize, source: Source, rng: &mut R) -> Timestep {
    Timestep {
        state: (0..TINY_STATE).map(|_| rng.random_range(-1.0..1.0)).collect(),
        action: random_action(head, a_dim, rng),
        task_id: rng.random_range(0..TINY_TASKS),
        source,
    }
}

impl TinyProblem {
    pub fn new<R: Rng + ?Sized>(head: PolicyHead, rng: &mut R) -> Result<Self> {
        let a_dim = match head {
            PolicyHead::TanhGaussian => 1,
            PolicyHead::Categorical => 3,
        };
        let act = Activation::Tanh;
        let encoder = TaskEncoder::new(TINY_STATE, a_dim, TINY_Z, 6, 1, act, rng)?;
        let policy = TaskPolicy::new(head, TINY_STATE, TINY_Z, a_dim, 6, 1, act, rng)?;
        let q = SoftQ::new(TINY_STATE, a_dim, TINY_Z, 6, 1, act, rng)?;
        let z = (0..TINY_TASKS)
            .map(|t| (t, (0..TINY_Z).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let contexts = (0..TINY_TASKS)
            .map(|t| {
                let steps: Vec<Timestep> = (0..4).map(|_| random_timestep(head, a_dim, Source::Expert, rng)).collect();
                (
                    t,
                    ContextBatch {
                        task_id: t,
                        states: steps.iter().map(|s| s.state.clone()).collect(),
                        actions: steps.iter().map(|s| s.action.clone()).collect(),
                    },
                )
            })
            .collect();
        let expert = (0..6).map(|_| random_timestep(head, a_dim, Source::Expert, rng)).collect();
        let mut mixed: Vec<Timestep> = (0..8)
            .map(|i| {
                let src = if i % 2 == 0 { Source::Expert } else { Source::Robot };
                random_timestep(head, a_dim, src, rng)
            })
            .collect();
        mixed.rotate_left(rng.random_range(0..8));
        Ok(Self {
            encoder,
            policy,
            q,
            z,
            contexts,
            expert,
            mixed,
        })
    }
}

fn with_params<T: Clone>(net: &T, params: &[f64], get: impl Fn(&mut T) -> &mut [f64]) -> T {
    let mut n = net.clone();
    get(&mut n).copy_from_slice(params);
    n
}

/// Worst relative gradient error of the discriminator loss over `trials`.
pub fn irl_gradient_error(trials: usize, seed: u64, grad_sign: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let head = if trial % 2 == 0 { PolicyHead::TanhGaussian } else { PolicyHead::Categorical };
        let p = TinyProblem::new(head, &mut rng)?;
        let analytic = irl_loss_signed(&p.q, &p.policy, &p.mixed, &p.z, None, grad_sign)?.grad_q;
        let numeric = central_difference(p.q.net.params(), FD_STEP, |x| {
            let q = with_params(&p.q, x, |q| q.net.params_mut());
            irl_loss(&q, &p.policy, &p.mixed, &p.z, None).map_or(f64::NAN, |l| l.loss)
        });
        worst = worst.max(relative_vector_difference(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative gradient error of the policy objective; the sampling
/// noise is fixed by reseeding for every evaluation.
pub fn rl_gradient_error(head: PolicyHead, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = TinyProblem::new(head, &mut rng)?;
        let alpha = rng.random_range(0.05..1.0);
        let noise_seed: u64 = rng.random();
        let loss = |pol: &TaskPolicy| {
            let mut r = ChaCha8Rng::seed_from_u64(noise_seed);
            rl_policy_loss(&p.q, pol, &p.mixed, &p.z, alpha, &mut r)
        };
        let analytic = loss(&p.policy)?.grad_policy;
        let numeric = central_difference(p.policy.net.params(), FD_STEP, |x| {
            let pol = with_params(&p.policy, x, |q| q.net.params_mut());
            loss(&pol).map_or(f64::NAN, |l| l.loss)
        });
        worst = worst.max(relative_vector_difference(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative gradient error of the BC loss over policy and encoder
/// weights jointly.
pub fn bc_gradient_error(head: PolicyHead, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = TinyProblem::new(head, &mut rng)?;
        let bc = bc_loss(&p.policy, Some(&p.encoder), &p.expert, &p.contexts)?;
        let analytic: Vec<f64> = bc.grad_policy.iter().chain(&bc.grad_encoder).copied().collect();
        let n_pol = p.policy.net.param_count();
        let params: Vec<f64> = p.policy.net.params().iter().chain(p.encoder.net.params()).copied().collect();
        let numeric = central_difference(&params, FD_STEP, |x| {
            let pol = with_params(&p.policy, &x[..n_pol], |q| q.net.params_mut());
            let enc = with_params(&p.encoder, &x[n_pol..], |e| e.net.params_mut());
            bc_loss(&pol, Some(&enc), &p.expert, &p.contexts).map_or(f64::NAN, |l| l.loss)
        });
        worst = worst.max(relative_vector_difference(&analytic, &numeric));
    }
    Ok(worst)
}

/// Worst relative difference between the soft policy objective's gradient
/// (temperature one) and the generator objective's gradient.
pub fn generator_equivalence_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = TinyProblem::new(PolicyHead::Categorical, &mut rng)?;
        let kl = rl_policy_loss(&p.q, &p.policy, &p.mixed, &p.z, 1.0, &mut rng)?.grad_policy;
        let (_, gan) = gan_generator_loss(&p.q, &p.policy, &p.mixed, &p.z)?;
        worst = worst.max(relative_vector_difference(&kl, &gan));
    }
    Ok(worst)
}

/// Largest `|logit(D) - (Q - ln pi)|` over random inputs, with `logit(D)`
/// recomputed from `ln D` and `ln(1 - D)`.
pub fn discriminator_identity_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let q = rng.random_range(-20.0..20.0);
            let lp = rng.random_range(-20.0..20.0);
            let log_d = log_discriminator(q, lp);
            let log_not_d = log_discriminator(lp, q);
            ((log_d - log_not_d) - discriminator_logit(q, lp)).abs()
        })
        .fold(0.0, f64::max)
}

/// Trains a per-action discriminator on a single-state bandit against a
/// frozen robot policy, using exact expectations over actions, and returns
/// `KL(pi_E || softmax f)`.
pub fn discriminator_recovery_kl(n_arms: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = tabular::bandit(n_arms, rng.random_range(0..n_arms), 1.0);
    let expert = soft_value_iteration(&mdp, 1.0, 0.0, 1e-13)?.policy[0].clone();

    // No hidden layer, so f is an unconstrained table over actions.
    let mut q = SoftQ::new(1, n_arms, 0, 1, 0, Activation::Tanh, &mut rng)?;
    let robot = TaskPolicy::new(PolicyHead::Categorical, 1, 0, n_arms, 1, 0, Activation::Tanh, &mut rng)?;
    let robot_probs = robot.mean_action_batch(ndarray::Array2::ones((1, 1)).view())?;

    let mut batch = Vec::new();
    let mut weights = Vec::new();
    for a in 0..n_arms {
        for (source, p) in [(Source::Expert, expert[a]), (Source::Robot, robot_probs[(0, a)])] {
            batch.push(Timestep {
                state: vec![1.0],
                action: one_hot(n_arms, a),
                task_id: 0,
                source,
            });
            weights.push(p / 2.0);
        }
    }
    let z: Embeddings = [(0, Vec::new())].into_iter().collect();
    let mut adam = AdamState::new(q.net.param_count(), 0.05);
    for _ in 0..20_000 {
        let g = irl_loss(&q, &robot, &batch, &z, Some(&weights))?.grad_q;
        if norm(&g) < 1e-12 {
            break;
        }
        adam.step("q", q.net.params_mut(), &g)?;
    }
    let f: Vec<f64> = (0..n_arms).map(|a| q.value(&[1.0], &one_hot(n_arms, a), &[])).collect::<Result<_>>()?;
    exact_kl(&expert, &softmax(&f))
}

/// Policy-gradient norm at the analytic optimum `pi = softmax(Q / alpha)`
/// on a single-state categorical problem.
pub fn optimum_gradient_norm(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 4;
    let alpha = rng.random_range(0.2..2.0);
    let q = SoftQ::new(1, k, 0, 1, 0, Activation::Tanh, &mut rng)?;
    let qv: Vec<f64> = (0..k).map(|a| q.value(&[1.0], &one_hot(k, a), &[])).collect::<Result<_>>()?;
    // Logits = W * 1 + b; put ln softmax(Q / alpha) in the bias.
    let mut pol = TaskPolicy::new(PolicyHead::Categorical, 1, 0, k, 1, 0, Activation::Tanh, &mut rng)?;
    let target: Vec<f64> = qv.iter().map(|v| v / alpha).collect();
    let params = pol.net.params_mut();
    params[..k].iter_mut().for_each(|w| *w = 0.0);
    params[k..].copy_from_slice(&target);
    let states = vec![Timestep {
        state: vec![1.0],
        action: one_hot(k, 0),
        task_id: 0,
        source: Source::Robot,
    }];
    let z: Embeddings = [(0, Vec::new())].into_iter().collect();
    Ok(norm(&rl_policy_loss(&q, &pol, &states, &z, alpha, &mut rng)?.grad_policy))
}

/// Fraction of random context permutations that leave `z` bitwise equal.
pub fn encoder_permutation_failures(trials: usize, seed: u64) -> Result<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = TaskEncoder::new(3, 2, 8, 16, 2, Activation::Relu, &mut rng)?;
    let mut failures = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..40);
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|_| {
                (
                    (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let ctx = |p: &[(Vec<f64>, Vec<f64>)]| ContextBatch {
            task_id: 0,
            states: p.iter().map(|x| x.0.clone()).collect(),
            actions: p.iter().map(|x| x.1.clone()).collect(),
        };
        let z0 = enc.encode(&ctx(&pairs))?;
        pairs.shuffle(&mut rng);
        let z1 = enc.encode(&ctx(&pairs))?;
        if z0.iter().zip(&z1).any(|(a, b)| a.to_bits() != b.to_bits()) {
            failures += 1;
        }
    }
    Ok(failures)
}

fn single_state(r: [f64; 2]) -> TabularMdp {
    TabularMdp {
        n_states: 1,
        n_actions: 2,
        transitions: vec![1.0, 1.0],
        reward: r.to_vec(),
        initial: vec![1.0],
    }
}

/// Largest deviation from the single-state closed forms.
pub fn soft_vi_closed_form_error() -> Result<f64> {
    let a = soft_value_iteration(&single_state([0.0, 0.0]), 1.0, 0.0, 1e-12)?;
    let b = soft_value_iteration(&single_state([1.0, 0.0]), 1.0, 0.0, 1e-12)?;
    let e = std::f64::consts::E;
    let errs = [
        a.q[0][0].abs(),
        a.q[0][1].abs(),
        (a.v[0] - std::f64::consts::LN_2).abs(),
        (a.policy[0][0] - 0.5).abs(),
        (b.policy[0][0] - e / (1.0 + e)).abs(),
        (b.policy[0][1] - 1.0 / (1.0 + e)).abs(),
    ];
    Ok(errs.into_iter().fold(0.0, f64::max))
}

/// Largest Bellman residual over every goal of a 3x3 gridworld.
pub fn gridworld_residual() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for goal in 0..9 {
        let mdp = tabular::gridworld(3, goal, 1.0);
        let sol = soft_value_iteration(&mdp, 1.0, 0.9, 1e-11)?;
        worst = worst.max(crate::oracle::bellman_residual(&mdp, &sol.q, 1.0, 0.9));
    }
    Ok(worst)
}

/// Runs every check.
pub fn run_all(opts: VerifyOptions) -> Result<Vec<CheckResult>> {
    let s = opts.seed;
    let sign = if opts.inject_irl_sign_flip { -1.0 } else { 1.0 };
    let t = GRADIENT_TRIALS;
    let tol = GRADIENT_TOLERANCE;
    let mut out = vec![
        CheckResult::below("irl_gradient_matches_finite_differences", irl_gradient_error(t, s, sign)?, tol),
        CheckResult::below(
            "rl_gradient_matches_finite_differences_gaussian",
            rl_gradient_error(PolicyHead::TanhGaussian, t, s + 1)?,
            tol,
        ),
        CheckResult::below(
            "rl_gradient_matches_finite_differences_categorical",
            rl_gradient_error(PolicyHead::Categorical, t, s + 2)?,
            tol,
        ),
        CheckResult::below(
            "bc_gradient_matches_finite_differences_gaussian",
            bc_gradient_error(PolicyHead::TanhGaussian, t, s + 3)?,
            tol,
        ),
        CheckResult::below(
            "bc_gradient_matches_finite_differences_categorical",
            bc_gradient_error(PolicyHead::Categorical, t, s + 4)?,
            tol,
        ),
        CheckResult::below("policy_objective_matches_generator_objective", generator_equivalence_error(100, s + 5)?, 1e-6),
        CheckResult::below("discriminator_logit_identity", discriminator_identity_error(1000, s + 6), 1e-12),
        CheckResult::below("discriminator_optimum_recovers_expert", discriminator_recovery_kl(4, s + 7)?, 1e-2),
        CheckResult::below("policy_gradient_vanishes_at_soft_optimum", optimum_gradient_norm(s + 8)?, 1e-8),
        CheckResult::below("soft_value_iteration_closed_forms", soft_vi_closed_form_error()?, 1e-10),
        CheckResult::below("soft_value_iteration_gridworld_residual", gridworld_residual()?, 1e-10),
    ];
    let failures = encoder_permutation_failures(1000, s + 9)?;
    out.push(CheckResult::new(
        "encoder_permutation_invariance",
        failures == 0,
        format!("{failures} of 1000 permutations changed z"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in run_all(VerifyOptions::default()).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let results = run_all(VerifyOptions {
            inject_irl_sign_flip: true,
            seed: 0,
        })
        .unwrap();
        let irl = results.iter().find(|r| r.name == "irl_gradient_matches_finite_differences").unwrap();
        assert!(!irl.passed);
        assert_eq!(results.iter().filter(|r| !r.passed).count(), 1);
    }
}
