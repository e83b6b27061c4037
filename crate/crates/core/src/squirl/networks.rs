//! Task encoder, task-conditioned policy and task-conditioned soft Q-function.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ContextBatch;
use crate::envs::{argmax, one_hot, sample_categorical};
use crate::error::{check_width, Error, Result};
use crate::nn::{Activation, Mlp, Tape};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Actions are pulled this far inside the open interval before inverting tanh.
const ACTION_EDGE: f64 = 1e-7;

/// The Gaussian mean is `MEAN_BOUND * tanh(raw / MEAN_BOUND)`. Without a
/// bound, BC drives saturated means arbitrarily far out, where tanh hides
/// them from the BC loss but the log-density of expert actions collapses.
pub const MEAN_BOUND: f64 = 3.0;

pub(crate) fn bounded_mean(raw: f64) -> f64 {
    MEAN_BOUND * (raw / MEAN_BOUND).tanh()
}

/// Derivative of [`bounded_mean`].
pub(crate) fn bounded_mean_slope(raw: f64) -> f64 {
    let t = (raw / MEAN_BOUND).tanh();
    1.0 - t * t
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation.
pub(crate) fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub(crate) fn hidden_sizes(input: usize, width: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(width, layers));
    sizes.push(output);
    sizes
}

/// Stacks `(a || b || ...)` rows into a matrix.
pub(crate) fn stack_rows(rows: &[Vec<&[f64]>]) -> Array2<f64> {
    let width = rows.first().map_or(0, |r| r.iter().map(|p| p.len()).sum());
    let mut data = Vec::with_capacity(rows.len() * width);
    for parts in rows {
        for p in parts {
            data.extend_from_slice(p);
        }
    }
    Array2::from_shape_vec((rows.len(), width), data).expect("rows share a width")
}

/// Maps one `(state || action)` pair to an embedding; a context batch is
/// summarized by the mean embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEncoder {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub z_dim: usize,
}

/// Forward state of [`TaskEncoder::encode_with_tape`].
#[derive(Debug)]
pub struct EncoderTape {
    tape: Tape,
    rows: usize,
}

impl TaskEncoder {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        z_dim: usize,
        width: usize,
        layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::new(&hidden_sizes(state_dim + action_dim, width, layers, z_dim), activation, rng)?;
        Ok(Self {
            net,
            state_dim,
            action_dim,
            z_dim,
        })
    }

    /// Pairs in a canonical (bitwise lexicographic) order, so the result does
    /// not depend on how the context was shuffled.
    fn canonical_input(&self, ctx: &ContextBatch) -> Result<Array2<f64>> {
        if ctx.is_empty() {
            return Err(Error::Contract("context batch is empty".into()));
        }
        let mut pairs: Vec<Vec<f64>> = Vec::with_capacity(ctx.len());
        for (s, a) in ctx.states.iter().zip(&ctx.actions) {
            check_width("context state", self.state_dim, s.len())?;
            check_width("context action", self.action_dim, a.len())?;
            pairs.push(s.iter().chain(a).copied().collect());
        }
        pairs.sort_by(|x, y| {
            x.iter()
                .zip(y)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let rows: Vec<Vec<&[f64]>> = pairs.iter().map(|p| vec![p.as_slice()]).collect();
        Ok(stack_rows(&rows))
    }

    fn mean_rows(out: &Array2<f64>) -> Vec<f64> {
        let n = out.nrows() as f64;
        out.sum_axis(Axis(0)).iter().map(|v| v / n).collect()
    }

    pub fn encode(&self, ctx: &ContextBatch) -> Result<Vec<f64>> {
        let x = self.canonical_input(ctx)?;
        Ok(Self::mean_rows(&self.net.predict_batch(x.view())?))
    }

    pub fn encode_with_tape(&self, ctx: &ContextBatch) -> Result<(Vec<f64>, EncoderTape)> {
        let x = self.canonical_input(ctx)?;
        let (out, tape) = self.net.forward_batch(x.view())?;
        let rows = out.nrows();
        Ok((Self::mean_rows(&out), EncoderTape { tape, rows }))
    }

    /// Adds the parameter gradient of `<z, z_grad>` into `param_grad`.
    pub fn backward(&self, tape: &EncoderTape, z_grad: &[f64], param_grad: &mut [f64]) -> Result<()> {
        check_width("embedding gradient", self.z_dim, z_grad.len())?;
        let scale = 1.0 / tape.rows as f64;
        let g = Array2::from_shape_fn((tape.rows, self.z_dim), |(_, j)| z_grad[j] * scale);
        self.net.backward_batch(&tape.tape, g.view(), param_grad)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyHead {
    /// Outputs a mean and log standard deviation per action dimension; actions
    /// are `tanh` of a Gaussian sample.
    TanhGaussian,
    /// Outputs one logit per discrete action; actions are one-hot vectors.
    Categorical,
}

impl PolicyHead {
    pub fn name(self) -> &'static str {
        match self {
            PolicyHead::TanhGaussian => "tanh_gaussian",
            PolicyHead::Categorical => "categorical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh_gaussian" => Some(PolicyHead::TanhGaussian),
            "categorical" => Some(PolicyHead::Categorical),
            _ => None,
        }
    }
}

/// `pi(a | s, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPolicy {
    pub net: Mlp,
    pub head: PolicyHead,
    pub state_dim: usize,
    /// Zero for unconditioned policies.
    pub z_dim: usize,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// A reparameterized batch of tanh-Gaussian samples with everything the
/// policy-gradient pass needs.
#[derive(Debug)]
pub struct GaussianSample {
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub eps: Array2<f64>,
    pub log_std: Array2<f64>,
    /// Derivative of each mean with respect to its raw network output.
    pub mean_slope: Array2<f64>,
    /// Whether the raw log-std output was inside the clamp range.
    pub log_std_active: Array2<bool>,
    pub tape: Tape,
}

impl TaskPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        head: PolicyHead,
        state_dim: usize,
        z_dim: usize,
        action_dim: usize,
        width: usize,
        layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let out = match head {
            PolicyHead::TanhGaussian => 2 * action_dim,
            PolicyHead::Categorical => action_dim,
        };
        let net = Mlp::new(&hidden_sizes(state_dim + z_dim, width, layers, out), activation, rng)?;
        Ok(Self {
            net,
            head,
            state_dim,
            z_dim,
            action_dim,
            log_std_min: -20.0,
            log_std_max: 2.0,
        })
    }

    /// Sets the log-std output bias, so the initial standard deviation is
    /// about `exp(log_std)`. No effect on categorical heads.
    pub fn set_initial_log_std(&mut self, log_std: f64) {
        if self.head == PolicyHead::TanhGaussian {
            let a = self.action_dim;
            let p = self.net.params_mut();
            let n = p.len();
            p[n - a..].iter_mut().for_each(|b| *b = log_std);
        }
    }

    /// One row `(state || z)` per example.
    pub fn input_matrix(&self, states: &[&[f64]], zs: &[&[f64]]) -> Result<Array2<f64>> {
        check_width("policy batch", states.len(), zs.len())?;
        let mut rows = Vec::with_capacity(states.len());
        for (s, z) in states.iter().zip(zs) {
            check_width("policy state", self.state_dim, s.len())?;
            check_width("policy embedding", self.z_dim, z.len())?;
            rows.push(vec![*s, *z]);
        }
        Ok(stack_rows(&rows))
    }

    fn split_gaussian(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
        let a = self.action_dim;
        let mu = out.slice(s![.., ..a]).mapv(bounded_mean);
        let raw = out.slice(s![.., a..]);
        let log_std = raw.mapv(|v| v.clamp(self.log_std_min, self.log_std_max));
        let active = raw.mapv(|v| v > self.log_std_min && v < self.log_std_max);
        (mu, log_std, active)
    }

    /// Reparameterized samples `a = tanh(mu + sigma * eps)` for a batch.
    pub fn sample_gaussian<R: Rng + ?Sized>(&self, inputs: ArrayView2<'_, f64>, rng: &mut R) -> Result<GaussianSample> {
        if self.head != PolicyHead::TanhGaussian {
            return Err(Error::Contract("reparameterized sampling needs a tanh-Gaussian head".into()));
        }
        let (out, tape) = self.net.forward_batch(inputs)?;
        let (mu, log_std, active) = self.split_gaussian(&out);
        let (n, a) = mu.dim();
        let mean_slope = out.slice(s![.., ..a]).mapv(bounded_mean_slope);
        let eps: Array2<f64> = Array2::from_shape_simple_fn((n, a), || StandardNormal.sample(rng));
        let mut actions = Array2::zeros((n, a));
        let mut log_probs = vec![0.0; n];
        for i in 0..n {
            let mut lp = 0.0;
            for j in 0..a {
                let u = mu[(i, j)] + log_std[(i, j)].exp() * eps[(i, j)];
                actions[(i, j)] = u.tanh();
                lp += -0.5 * eps[(i, j)] * eps[(i, j)] - log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
            log_probs[i] = lp;
        }
        Ok(GaussianSample {
            actions,
            log_probs,
            eps,
            log_std,
            mean_slope,
            log_std_active: active,
            tape,
        })
    }

    /// Logits to row-wise probabilities and log-probabilities.
    pub(crate) fn categorical(&self, logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut logp = logits.as_standard_layout().into_owned();
        for mut row in logp.rows_mut() {
            let lse = crate::oracle::logsumexp(row.as_slice().expect("contiguous row"));
            row.mapv_inplace(|v| v - lse);
        }
        (logp.mapv(f64::exp), logp)
    }

    /// Draws one action per row, with its log-probability.
    pub fn sample_batch<R: Rng + ?Sized>(&self, inputs: ArrayView2<'_, f64>, rng: &mut R) -> Result<(Array2<f64>, Vec<f64>)> {
        match self.head {
            PolicyHead::TanhGaussian => {
                let s = self.sample_gaussian(inputs, rng)?;
                Ok((s.actions, s.log_probs))
            }
            PolicyHead::Categorical => {
                let logits = self.net.predict_batch(inputs)?;
                let (probs, logp) = self.categorical(&logits);
                let mut actions = Array2::zeros(probs.dim());
                let mut lps = Vec::with_capacity(probs.nrows());
                for (i, row) in probs.rows().into_iter().enumerate() {
                    let k = sample_categorical(row.as_slice().expect("contiguous row"), rng);
                    actions[(i, k)] = 1.0;
                    lps.push(logp[(i, k)]);
                }
                Ok((actions, lps))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], z: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let x = self.input_matrix(&[state], &[z])?;
        let (a, lp) = self.sample_batch(x.view(), rng)?;
        Ok((a.into_raw_vec_and_offset().0, lp[0]))
    }

    /// `log pi(a | s, z)` for given actions. One-hot actions are read by argmax.
    pub fn log_prob_batch(&self, inputs: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        check_width("policy action", self.action_dim, actions.ncols())?;
        check_width("policy action rows", inputs.nrows(), actions.nrows())?;
        let out = self.net.predict_batch(inputs)?;
        match self.head {
            PolicyHead::TanhGaussian => {
                let (mu, log_std, _) = self.split_gaussian(&out);
                Ok((0..out.nrows())
                    .map(|i| {
                        (0..self.action_dim)
                            .map(|j| {
                                let a = actions[(i, j)].clamp(-1.0 + ACTION_EDGE, 1.0 - ACTION_EDGE);
                                let u = a.atanh();
                                let z = (u - mu[(i, j)]) / log_std[(i, j)].exp();
                                -0.5 * z * z - log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh_sq(u)
                            })
                            .sum()
                    })
                    .collect())
            }
            PolicyHead::Categorical => {
                let (_, logp) = self.categorical(&out);
                Ok(actions
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, a)| logp[(i, argmax(a.as_slice().expect("contiguous row")))])
                    .collect())
            }
        }
    }

    pub fn log_prob(&self, state: &[f64], z: &[f64], action: &[f64]) -> Result<f64> {
        let x = self.input_matrix(&[state], &[z])?;
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row vector");
        Ok(self.log_prob_batch(x.view(), a)?[0])
    }

    /// The regression output used by behavioral cloning: `tanh(mu)` for the
    /// Gaussian head, the probability vector for the categorical head.
    pub fn mean_action_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = self.net.predict_batch(inputs)?;
        Ok(match self.head {
            PolicyHead::TanhGaussian => out.slice(s![.., ..self.action_dim]).mapv(|v| bounded_mean(v).tanh()),
            PolicyHead::Categorical => self.categorical(&out).0,
        })
    }

    /// Deterministic action for evaluation: `tanh(mu)`, or the most likely
    /// discrete action as a one-hot vector.
    pub fn act_deterministic(&self, state: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let x = self.input_matrix(&[state], &[z])?;
        let m = self.mean_action_batch(x.view())?;
        let row = m.row(0);
        let row = row.as_slice().expect("contiguous row");
        Ok(match self.head {
            PolicyHead::TanhGaussian => row.to_vec(),
            PolicyHead::Categorical => one_hot(self.action_dim, argmax(row)),
        })
    }
}

/// `Q(s, a, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQ {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
    pub z_dim: usize,
}

impl SoftQ {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        z_dim: usize,
        width: usize,
        layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::new(&hidden_sizes(state_dim + action_dim + z_dim, width, layers, 1), activation, rng)?;
        Ok(Self {
            net,
            state_dim,
            action_dim,
            z_dim,
        })
    }

    pub fn input_matrix(&self, states: &[&[f64]], actions: &[&[f64]], zs: &[&[f64]]) -> Result<Array2<f64>> {
        check_width("q batch", states.len(), actions.len())?;
        check_width("q batch", states.len(), zs.len())?;
        let mut rows = Vec::with_capacity(states.len());
        for ((s, a), z) in states.iter().zip(actions).zip(zs) {
            check_width("q state", self.state_dim, s.len())?;
            check_width("q action", self.action_dim, a.len())?;
            check_width("q embedding", self.z_dim, z.len())?;
            rows.push(vec![*s, *a, *z]);
        }
        Ok(stack_rows(&rows))
    }

    pub fn value(&self, state: &[f64], action: &[f64], z: &[f64]) -> Result<f64> {
        let x = self.input_matrix(&[state], &[action], &[z])?;
        Ok(self.net.predict_batch(x.view())?[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounded_mean_stays_inside_and_has_the_right_slope() {
        for raw in [-1e6, -40.0, -3.0, -0.5, 0.0, 0.1, 2.0, 9.0, 1e6] {
            assert!(bounded_mean(raw).abs() <= MEAN_BOUND);
            let h = 1e-6;
            let fd = (bounded_mean(raw + h) - bounded_mean(raw - h)) / (2.0 * h);
            assert!((fd - bounded_mean_slope(raw)).abs() < 1e-8, "raw={raw}");
        }
        assert!((bounded_mean(1e-3) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn saturated_mean_keeps_edge_actions_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pol = TaskPolicy::new(PolicyHead::TanhGaussian, 1, 0, 1, 4, 1, Activation::Tanh, &mut rng).unwrap();
        pol.set_initial_log_std(-1.0);
        // Push the raw mean output far past saturation through its bias.
        let n = pol.net.param_count();
        pol.net.params_mut()[n - 2] = 1e4;
        let lp = pol.log_prob(&[0.3], &[], &[0.99]).unwrap();
        assert!(lp > -20.0, "log-density {lp}");
    }

    #[test]
    fn stable_log_one_minus_tanh_sq() {
        for u in [-30.0, -3.0, -0.2, 0.0, 0.7, 5.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_one_minus_tanh_sq(u);
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-9, "u={u}");
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn gaussian_actions_are_bounded_and_log_prob_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pol = TaskPolicy::new(PolicyHead::TanhGaussian, 3, 2, 2, 16, 2, Activation::Tanh, &mut rng).unwrap();
        for _ in 0..50 {
            let s = [rng.random::<f64>(), -0.3, 0.9];
            let z = [0.1, -0.1];
            let (a, lp) = pol.sample(&s, &z, &mut rng).unwrap();
            assert!(a.iter().all(|v| v.abs() < 1.0));
            assert!(lp.is_finite());
            let again = pol.log_prob(&s, &z, &a).unwrap();
            assert!((again - lp).abs() < 1e-6 * lp.abs().max(1.0), "{again} vs {lp}");
        }
    }

    #[test]
    fn tiny_sigma_collapses_to_tanh_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pol = TaskPolicy::new(PolicyHead::TanhGaussian, 2, 0, 1, 8, 1, Activation::Tanh, &mut rng).unwrap();
        // drive the log-std output far below the clamp
        let n = pol.net.param_count();
        pol.net.params_mut()[n - 1] = -100.0;
        let s = [0.4, -0.2];
        let det = pol.act_deterministic(&s, &[]).unwrap();
        let (a, _) = pol.sample(&s, &[], &mut rng).unwrap();
        assert!((a[0] - det[0]).abs() < 1e-7);
    }

    #[test]
    fn categorical_zero_logits() {
        let pol = TaskPolicy {
            net: Mlp::zeros(&[1, 2], Activation::Tanh).unwrap(),
            head: PolicyHead::Categorical,
            state_dim: 1,
            z_dim: 0,
            action_dim: 2,
            log_std_min: -20.0,
            log_std_max: 2.0,
        };
        for a in [[1.0, 0.0], [0.0, 1.0]] {
            let lp = pol.log_prob(&[1.0], &[], &a).unwrap();
            assert!((lp + 2f64.ln()).abs() < 1e-15);
        }
        let x = pol.input_matrix(&[&[1.0]], &[&[]]).unwrap();
        let p = pol.mean_action_batch(x.view()).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encoder_mean_of_identical_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TaskEncoder::new(2, 1, 4, 8, 2, Activation::Relu, &mut rng).unwrap();
        let ctx = ContextBatch {
            task_id: 0,
            states: vec![vec![0.3, -0.1]; 5],
            actions: vec![vec![0.7]; 5],
        };
        let single = enc.net.predict(&[0.3, -0.1, 0.7]).unwrap();
        let z = enc.encode(&ctx).unwrap();
        for (a, b) in z.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
