use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squirl_core::nn::gradcheck::{central_difference, relative_vector_difference};
use squirl_core::nn::{Activation, AdamState, Mlp};
use squirl_core::squirl::{PolicyHead, TaskPolicy};

/// Smallest |pre-activation| over the hidden layers, recomputed from the
/// row-major `W` then `b` parameter layout.
fn smallest_preactivation(net: &Mlp, x: &[f64]) -> f64 {
    let sizes = net.layer_sizes();
    let p = net.params();
    let mut a = x.to_vec();
    let mut off = 0;
    let mut smallest = f64::INFINITY;
    for l in 0..sizes.len() - 2 {
        let (fi, fo) = (sizes[l], sizes[l + 1]);
        let z: Vec<f64> = (0..fo)
            .map(|o| (0..fi).map(|i| p[off + o * fi + i] * a[i]).sum::<f64>() + p[off + fi * fo + o])
            .collect();
        smallest = z.iter().fold(smallest, |m, v| m.min(v.abs()));
        a = z.iter().map(|v| v.max(0.0)).collect();
        off += fi * fo + fo;
    }
    smallest
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Parameter and input gradients of a random three-layer net agree with
    /// central differences.
    #[test]
    fn mlp_backward_matches_finite_differences(
        seed in any::<u64>(),
        width in 2usize..7,
        act in prop::sample::select(vec![Activation::Tanh, Activation::Relu]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[3, width, width, 2], act, &mut rng).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |y: Vec<f64>| y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();

        let (_, tape) = net.forward(&x).unwrap();
        let (dp, dx) = net.backward(&tape, &g).unwrap();
        let h = 1e-5;
        let np = central_difference(net.params(), h, |p| {
            let n = Mlp::from_params(net.layer_sizes(), act, p.to_vec()).unwrap();
            dot(n.predict(&x).unwrap())
        });
        let nx = central_difference(&x, h, |xi| dot(net.predict(xi).unwrap()));
        // A ReLU unit sitting on its kink makes central differences
        // meaningless; such draws are discarded.
        prop_assume!(act == Activation::Tanh || smallest_preactivation(&net, &x) > 1e-3);
        prop_assert!(relative_vector_difference(&dp, &np) < 1e-4);
        prop_assert!(relative_vector_difference(&dx, &nx) < 1e-4);
    }

    #[test]
    fn adam_is_deterministic(seed in any::<u64>(), n in 1usize..20, steps in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let run = || {
            let mut p = p0.clone();
            let mut adam = AdamState::new(n, 1e-2);
            for g in &grads {
                adam.step("p", &mut p, g).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

/// The tanh-Gaussian density over a single action integrates to one.
#[test]
fn tanh_gaussian_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut pol = TaskPolicy::new(PolicyHead::TanhGaussian, 2, 0, 1, 6, 1, Activation::Tanh, &mut rng).unwrap();
        pol.set_initial_log_std(rng.random_range(-1.5..0.5));
        let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = 200_000;
        let du = 2.0 / n as f64;
        let grid: Vec<f64> = (0..n).map(|i| -1.0 + (i as f64 + 0.5) * du).collect();
        let inputs = Array2::from_shape_fn((n, 2), |(_, j)| s[j]);
        let actions = Array2::from_shape_vec((n, 1), grid).unwrap();
        let lp = pol.log_prob_batch(inputs.view(), actions.view()).unwrap();
        let mass: f64 = lp.iter().map(|l| l.exp() * du).sum();
        assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    }
}
