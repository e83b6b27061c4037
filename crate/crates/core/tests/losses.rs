use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squirl_core::data::{ContextBatch, Source, Timestep};
use squirl_core::envs::one_hot;
use squirl_core::nn::gradcheck::norm;
use squirl_core::nn::Activation;
use squirl_core::squirl::losses::{discriminator_logit, log_discriminator};
use squirl_core::squirl::{bc_loss, discriminator_prob, irl_loss, rl_policy_loss, Embeddings, PolicyHead, SoftQ, TaskEncoder, TaskPolicy};

const K: usize = 3;

fn step(state: Vec<f64>, action: Vec<f64>, source: Source) -> Timestep {
    Timestep {
        state,
        action,
        task_id: 0,
        source,
    }
}

/// Categorical policy with zero weights, hence uniform over `K` actions.
fn uniform_policy(rng: &mut ChaCha8Rng) -> TaskPolicy {
    let mut p = TaskPolicy::new(PolicyHead::Categorical, 2, 0, K, 4, 1, Activation::Tanh, rng).unwrap();
    p.net.params_mut().iter_mut().for_each(|w| *w = 0.0);
    p
}

/// Q that ignores its input and returns `c`.
fn constant_q(c: f64, rng: &mut ChaCha8Rng) -> SoftQ {
    let mut q = SoftQ::new(2, K, 0, 4, 1, Activation::Tanh, rng).unwrap();
    let p = q.net.params_mut();
    p.iter_mut().for_each(|w| *w = 0.0);
    *p.last_mut().unwrap() = c;
    q
}

fn no_z() -> Embeddings {
    [(0, vec![])].into_iter().collect()
}

fn mixed_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Timestep> {
    (0..n)
        .map(|i| {
            let src = if i % 2 == 0 { Source::Expert } else { Source::Robot };
            step(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], one_hot(K, rng.random_range(0..K)), src)
        })
        .collect()
}

#[test]
fn q_equal_to_log_pi_gives_even_odds_and_ln2_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pol = uniform_policy(&mut rng);
    let q = constant_q(-(K as f64).ln(), &mut rng);
    let batch = mixed_batch(&mut rng, 10);
    for t in &batch {
        assert_eq!(discriminator_prob(&q, &pol, &t.state, &t.action, &[]).unwrap(), 0.5);
    }
    let loss = irl_loss(&q, &pol, &batch, &no_z(), None).unwrap();
    assert!((loss.loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn large_q_drives_discriminator_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pol = uniform_policy(&mut rng);
    let q = constant_q(40.0, &mut rng);
    let d = discriminator_prob(&q, &pol, &[0.2, 0.1], &one_hot(K, 0), &[]).unwrap();
    assert!(d > 1.0 - 1e-15);
}

#[test]
fn perfect_separation_drives_irl_loss_to_zero() {
    // Expert always takes action 0, robot always action 1; Q is linear in
    // the action one-hot, so a large weight on action 0 separates them.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pol = uniform_policy(&mut rng);
    let mut q = SoftQ::new(2, K, 0, 1, 0, Activation::Tanh, &mut rng).unwrap();
    let batch: Vec<Timestep> = (0..8)
        .map(|i| if i % 2 == 0 { step(vec![0.0, 0.0], one_hot(K, 0), Source::Expert) } else { step(vec![0.0, 0.0], one_hot(K, 1), Source::Robot) })
        .collect();
    let mut last = f64::INFINITY;
    for scale in [1.0, 10.0, 40.0] {
        let p = q.net.params_mut();
        p.iter_mut().for_each(|w| *w = 0.0);
        p[2] = scale; // weight on action 0
        p[3] = -scale; // weight on action 1
        let loss = irl_loss(&q, &pol, &batch, &no_z(), None).unwrap().loss;
        assert!(loss < last);
        last = loss;
    }
    assert!(last < 1e-15);
}

#[test]
fn irl_loss_needs_both_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pol = uniform_policy(&mut rng);
    let q = constant_q(0.0, &mut rng);
    let experts: Vec<_> = mixed_batch(&mut rng, 6).into_iter().filter(|t| t.source == Source::Expert).collect();
    assert!(irl_loss(&q, &pol, &experts, &no_z(), None).is_err());
}

#[test]
fn constant_q_reduces_rl_loss_to_negative_entropy_and_raises_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pol = TaskPolicy::new(PolicyHead::Categorical, 2, 0, K, 4, 1, Activation::Tanh, &mut rng).unwrap();
    let c = 0.7;
    let alpha = 0.3;
    let q = constant_q(c, &mut rng);
    let batch = mixed_batch(&mut rng, 12);
    let rl = rl_policy_loss(&q, &pol, &batch, &no_z(), alpha, &mut rng).unwrap();
    assert!((rl.loss - (-alpha * rl.entropy - c)).abs() < 1e-12);
    let lr = 1e-2;
    for (w, g) in pol.net.params_mut().iter_mut().zip(&rl.grad_policy) {
        *w -= lr * g;
    }
    let after = rl_policy_loss(&q, &pol, &batch, &no_z(), alpha, &mut rng).unwrap();
    assert!(after.entropy > rl.entropy);
}

#[test]
fn bc_loss_vanishes_when_policy_matches_expert() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let none = BTreeMap::new();
    for head in [PolicyHead::Categorical, PolicyHead::TanhGaussian] {
        let a_dim = if head == PolicyHead::Categorical { K } else { 2 };
        let pol = TaskPolicy::new(head, 2, 0, a_dim, 4, 1, Activation::Tanh, &mut rng).unwrap();
        let batch: Vec<Timestep> = (0..5)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a = pol.act_deterministic(&s, &[]).unwrap();
                let a = match head {
                    // Categorical BC targets the probability vector.
                    PolicyHead::Categorical => (0..K).map(|i| pol.log_prob(&s, &[], &one_hot(K, i)).unwrap().exp()).collect(),
                    PolicyHead::TanhGaussian => a,
                };
                step(s, a, Source::Expert)
            })
            .collect();
        let bc = bc_loss(&pol, None, &batch, &none).unwrap();
        assert!(bc.loss < 1e-25, "{head:?}: {}", bc.loss);
        assert!(norm(&bc.grad_policy) < 1e-12);
    }
}

/// Robot states never enter the BC objective, while the policy objective
/// does produce a gradient on them.
#[test]
fn bc_ignores_robot_states_that_rl_learns_from() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pol = TaskPolicy::new(PolicyHead::Categorical, 2, 0, K, 4, 1, Activation::Tanh, &mut rng).unwrap();
    let q = SoftQ::new(2, K, 0, 4, 1, Activation::Tanh, &mut rng).unwrap();
    let batch = mixed_batch(&mut rng, 10);
    let robot: Vec<_> = batch.iter().filter(|t| t.source == Source::Robot).cloned().collect();
    let expert: Vec<_> = batch.iter().filter(|t| t.source == Source::Expert).cloned().collect();
    assert!(bc_loss(&pol, None, &batch, &BTreeMap::new()).is_err());
    assert!(bc_loss(&pol, None, &expert, &BTreeMap::new()).is_ok());
    let rl = rl_policy_loss(&q, &pol, &robot, &no_z(), 0.1, &mut rng).unwrap();
    assert!(norm(&rl.grad_policy) > 1e-6);
}

#[test]
fn bc_loss_is_invariant_to_context_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let enc = TaskEncoder::new(2, 2, 3, 5, 1, Activation::Relu, &mut rng).unwrap();
    let pol = TaskPolicy::new(PolicyHead::TanhGaussian, 2, 3, 2, 5, 1, Activation::Relu, &mut rng).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..9)
        .map(|_| ((0..2).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..2).map(|_| rng.random_range(-0.9..0.9)).collect()))
        .collect();
    let batch: Vec<Timestep> = pairs.iter().map(|(s, a)| step(s.clone(), a.clone(), Source::Expert)).collect();
    let ctx = |p: &[(Vec<f64>, Vec<f64>)]| -> BTreeMap<usize, ContextBatch> {
        let c = ContextBatch {
            task_id: 0,
            states: p.iter().map(|x| x.0.clone()).collect(),
            actions: p.iter().map(|x| x.1.clone()).collect(),
        };
        [(0, c)].into_iter().collect()
    };
    let a = bc_loss(&pol, Some(&enc), &batch, &ctx(&pairs)).unwrap();
    let mut shuffled = pairs.clone();
    shuffled.shuffle(&mut rng);
    let b = bc_loss(&pol, Some(&enc), &batch, &ctx(&shuffled)).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.grad_encoder, b.grad_encoder);
}

#[test]
fn rl_loss_rejects_bad_temperature_and_empty_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pol = uniform_policy(&mut rng);
    let q = constant_q(0.0, &mut rng);
    let batch = mixed_batch(&mut rng, 4);
    assert!(rl_policy_loss(&q, &pol, &batch, &no_z(), 0.0, &mut rng).is_err());
    assert!(rl_policy_loss(&q, &pol, &[], &no_z(), 1.0, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn logit_of_discriminator_is_q_minus_log_pi(q in -30.0f64..30.0, log_pi in -30.0f64..0.0) {
        let log_d = log_discriminator(q, log_pi);
        let log_1md = log_discriminator(log_pi, q);
        prop_assert!(((log_d - log_1md) - (q - log_pi)).abs() < 1e-12);
        prop_assert_eq!(discriminator_logit(q, log_pi), q - log_pi);
        prop_assert!((log_d.exp() + log_1md.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encoder_ignores_context_order(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = TaskEncoder::new(3, 2, 4, 8, 2, Activation::Relu, &mut rng).unwrap();
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|_| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let encode = |p: &[(Vec<f64>, Vec<f64>)]| enc.encode(&ContextBatch {
            task_id: 0,
            states: p.iter().map(|x| x.0.clone()).collect(),
            actions: p.iter().map(|x| x.1.clone()).collect(),
        }).unwrap();
        let z0 = encode(&pairs);
        pairs.shuffle(&mut rng);
        let z1 = encode(&pairs);
        prop_assert!(z0.iter().zip(&z1).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn forward_is_a_pure_function(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = SoftQ::new(2, K, 0, 6, 2, Activation::Relu, &mut rng).unwrap();
        let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = one_hot(K, rng.random_range(0..K));
        let v0 = q.value(&s, &a, &[]).unwrap();
        let other = q.value(&[0.3, -0.3], &one_hot(K, 0), &[]).unwrap();
        prop_assert!(other.is_finite());
        prop_assert_eq!(v0.to_bits(), q.value(&s, &a, &[]).unwrap().to_bits());
    }
}
