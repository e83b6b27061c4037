//! Training objectives.
//!
//! * [`irl_loss`]: binary cross-entropy of the discriminator
//!   `D = exp(Q) / (exp(Q) + pi(a|s))`, expert label 1. Gradients reach the
//!   soft Q-function only.
//! * [`rl_policy_loss`]: `E_s E_{a~pi}[alpha ln pi(a|s,z) - Q(s,a,z)]`.
//!   Gradients reach the policy only.
//! * [`bc_loss`]: `E ||pi(s, enc(c)) - a||^2` on expert data. Gradients reach
//!   the policy and the encoder.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::Rng;

use super::networks::{bounded_mean, bounded_mean_slope, sigmoid, softplus, EncoderTape, PolicyHead, SoftQ, TaskEncoder, TaskPolicy};
use crate::data::{ContextBatch, Source, Timestep};
use crate::envs::one_hot;
use crate::error::{Error, Result};
use crate::oracle::logsumexp;

/// Task embeddings keyed by task id.
pub type Embeddings = BTreeMap<usize, Vec<f64>>;

fn embedding(z: &Embeddings, task: usize) -> Result<&[f64]> {
    z.get(&task).map(Vec::as_slice).ok_or(Error::UnknownTask(task))
}

/// `logit(D) = Q - ln pi`.
pub fn discriminator_logit(q_value: f64, log_pi: f64) -> f64 {
    q_value - log_pi
}

/// `ln D = Q - logsumexp(Q, ln pi)`.
pub fn log_discriminator(q_value: f64, log_pi: f64) -> f64 {
    q_value - logsumexp(&[q_value, log_pi])
}

/// Probability that `(s, a)` came from the expert.
pub fn discriminator_prob(q: &SoftQ, pol: &TaskPolicy, state: &[f64], action: &[f64], z: &[f64]) -> Result<f64> {
    let q_value = q.value(state, action, z)?;
    let log_pi = pol.log_prob(state, z, action)?;
    Ok(log_discriminator(q_value, log_pi).exp())
}

#[derive(Debug, Clone)]
pub struct IrlLoss {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    /// Fraction of samples on the correct side of `D = 1/2`.
    pub accuracy: f64,
}

/// Mean (optionally weighted) binary cross-entropy over a labeled batch.
///
/// `ln pi` inside the discriminator is a fixed density here; only `Q`
/// receives gradient.
pub fn irl_loss(q: &SoftQ, pol: &TaskPolicy, batch: &[Timestep], z: &Embeddings, weights: Option<&[f64]>) -> Result<IrlLoss> {
    irl_loss_signed(q, pol, batch, z, weights, 1.0)
}

/// `grad_sign` exists so the verification suite can inject a sign error and
/// confirm the finite-difference check catches it.
pub(crate) fn irl_loss_signed(
    q: &SoftQ,
    pol: &TaskPolicy,
    batch: &[Timestep],
    z: &Embeddings,
    weights: Option<&[f64]>,
    grad_sign: f64,
) -> Result<IrlLoss> {
    let n = batch.len();
    let w: Vec<f64> = match weights {
        Some(w) => {
            crate::error::check_width("irl weights", n, w.len())?;
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let has = |src: Source| batch.iter().zip(&w).any(|(t, &wi)| t.source == src && wi > 0.0);
    if !has(Source::Expert) || !has(Source::Robot) {
        return Err(Error::Contract(
            "irl batch needs both expert and robot samples".into(),
        ));
    }
    let total_w: f64 = w.iter().sum();

    let zs = batch
        .iter()
        .map(|t| embedding(z, t.task_id))
        .collect::<Result<Vec<_>>>()?;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<&[f64]> = batch.iter().map(|t| t.action.as_slice()).collect();

    let pol_in = pol.input_matrix(&states, &zs)?;
    let act = stack(&actions, pol.action_dim);
    let log_pi = pol.log_prob_batch(pol_in.view(), act.view())?;

    let q_in = q.input_matrix(&states, &actions, &zs)?;
    let (q_out, tape) = q.net.forward_batch(q_in.view())?;

    let mut loss = 0.0;
    let mut correct = 0.0;
    let mut out_grad = Array2::zeros((n, 1));
    for i in 0..n {
        let logit = discriminator_logit(q_out[(i, 0)], log_pi[i]);
        let y = if batch[i].source == Source::Expert { 1.0 } else { 0.0 };
        let l = if y == 1.0 { softplus(-logit) } else { softplus(logit) };
        loss += w[i] * l;
        if (logit > 0.0) == (y == 1.0) {
            correct += w[i];
        }
        out_grad[(i, 0)] = grad_sign * w[i] * (sigmoid(logit) - y) / total_w;
    }
    let mut grad_q = vec![0.0; q.net.param_count()];
    q.net.backward_batch(&tape, out_grad.view(), &mut grad_q)?;
    Ok(IrlLoss {
        loss: loss / total_w,
        grad_q,
        accuracy: correct / total_w,
    })
}

fn stack(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
    }
    m
}

#[derive(Debug, Clone)]
pub struct RlLoss {
    pub loss: f64,
    pub grad_policy: Vec<f64>,
    /// `-E[ln pi]` over the batch; drives the temperature update.
    pub entropy: f64,
}

/// Soft policy objective with `Q` and the encoder frozen.
///
/// Tanh-Gaussian heads use one reparameterized sample per state; categorical
/// heads use the exact expectation over actions.
pub fn rl_policy_loss<R: Rng + ?Sized>(
    q: &SoftQ,
    pol: &TaskPolicy,
    states: &[Timestep],
    z: &Embeddings,
    alpha: f64,
    rng: &mut R,
) -> Result<RlLoss> {
    if states.is_empty() {
        return Err(Error::Contract("policy loss needs a non-empty batch".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Contract(format!("temperature must be positive, got {alpha}")));
    }
    let zs = states
        .iter()
        .map(|t| embedding(z, t.task_id))
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<&[f64]> = states.iter().map(|t| t.state.as_slice()).collect();
    match pol.head {
        PolicyHead::TanhGaussian => rl_gaussian(q, pol, &s, &zs, alpha, rng),
        PolicyHead::Categorical => rl_categorical(q, pol, &s, &zs, alpha),
    }
}

fn rl_gaussian<R: Rng + ?Sized>(
    q: &SoftQ,
    pol: &TaskPolicy,
    states: &[&[f64]],
    zs: &[&[f64]],
    alpha: f64,
    rng: &mut R,
) -> Result<RlLoss> {
    let n = states.len();
    let a_dim = pol.action_dim;
    let pol_in = pol.input_matrix(states, zs)?;
    let sample = pol.sample_gaussian(pol_in.view(), rng)?;

    let action_rows: Vec<&[f64]> = sample
        .actions
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("contiguous row"))
        .collect();
    let q_in = q.input_matrix(states, &action_rows, zs)?;
    let (q_out, q_tape) = q.net.forward_batch(q_in.view())?;
    let mut scratch = vec![0.0; q.net.param_count()];
    let q_in_grad = q.net.backward_batch(&q_tape, Array2::ones((n, 1)).view(), &mut scratch)?;
    let dq_da = q_in_grad.slice(s![.., q.state_dim..q.state_dim + a_dim]);

    let mut loss = 0.0;
    let mut entropy = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut out_grad = Array2::zeros((n, 2 * a_dim));
    for i in 0..n {
        loss += alpha * sample.log_probs[i] - q_out[(i, 0)];
        entropy -= sample.log_probs[i];
        for j in 0..a_dim {
            let a = sample.actions[(i, j)];
            let sigma = sample.log_std[(i, j)].exp();
            let eps = sample.eps[(i, j)];
            // d(ln pi)/du = 2 tanh(u) with eps held fixed
            let dl_du = alpha * 2.0 * a - dq_da[(i, j)] * (1.0 - a * a);
            out_grad[(i, j)] = dl_du * sample.mean_slope[(i, j)] * inv_n;
            if sample.log_std_active[(i, j)] {
                out_grad[(i, a_dim + j)] = (dl_du * sigma * eps - alpha) * inv_n;
            }
        }
    }
    let mut grad_policy = vec![0.0; pol.net.param_count()];
    pol.net.backward_batch(&sample.tape, out_grad.view(), &mut grad_policy)?;
    Ok(RlLoss {
        loss: loss * inv_n,
        grad_policy,
        entropy: entropy * inv_n,
    })
}

/// `Q(s, a, z)` for every discrete action, one row per state.
fn q_table(q: &SoftQ, states: &[&[f64]], zs: &[&[f64]], k: usize) -> Result<Array2<f64>> {
    let actions: Vec<Vec<f64>> = (0..k).map(|a| one_hot(k, a)).collect();
    let mut s_rows = Vec::with_capacity(states.len() * k);
    let mut a_rows = Vec::with_capacity(states.len() * k);
    let mut z_rows = Vec::with_capacity(states.len() * k);
    for (s, z) in states.iter().zip(zs) {
        for a in &actions {
            s_rows.push(*s);
            a_rows.push(a.as_slice());
            z_rows.push(*z);
        }
    }
    let x = q.input_matrix(&s_rows, &a_rows, &z_rows)?;
    let out = q.net.predict_batch(x.view())?;
    Ok(out.into_shape_with_order((states.len(), k)).expect("k values per state"))
}

fn categorical_backward(pol: &TaskPolicy, tape: &crate::nn::Tape, probs: &Array2<f64>, per_action: &Array2<f64>, scale: f64) -> Result<Vec<f64>> {
    // d/dlogit_b sum_a p_a g_a = p_b (g_b - sum_a p_a g_a), for fixed g
    let mut out_grad = Array2::zeros(probs.dim());
    for i in 0..probs.nrows() {
        let mean: f64 = (0..probs.ncols()).map(|a| probs[(i, a)] * per_action[(i, a)]).sum();
        for b in 0..probs.ncols() {
            out_grad[(i, b)] = scale * probs[(i, b)] * (per_action[(i, b)] - mean);
        }
    }
    let mut grad = vec![0.0; pol.net.param_count()];
    pol.net.backward_batch(tape, out_grad.view(), &mut grad)?;
    Ok(grad)
}

fn rl_categorical(q: &SoftQ, pol: &TaskPolicy, states: &[&[f64]], zs: &[&[f64]], alpha: f64) -> Result<RlLoss> {
    let n = states.len();
    let k = pol.action_dim;
    let pol_in = pol.input_matrix(states, zs)?;
    let (logits, tape) = pol.net.forward_batch(pol_in.view())?;
    let (probs, logp) = pol.categorical(&logits);
    let qv = q_table(q, states, zs, k)?;
    let h = &logp * alpha - &qv;
    let inv_n = 1.0 / n as f64;
    let loss = (&probs * &h).sum() * inv_n;
    let entropy = -(&probs * &logp).sum() * inv_n;
    // the extra alpha from differentiating p ln p sums to zero over actions
    let grad_policy = categorical_backward(pol, &tape, &probs, &h, inv_n)?;
    Ok(RlLoss {
        loss,
        grad_policy,
        entropy,
    })
}

/// Generator objective `E_{a~pi}[ln(1 - D) - ln D]` for categorical heads,
/// with `D` evaluated through [`log_discriminator`] and held fixed.
pub fn gan_generator_loss(q: &SoftQ, pol: &TaskPolicy, states: &[Timestep], z: &Embeddings) -> Result<(f64, Vec<f64>)> {
    if pol.head != PolicyHead::Categorical {
        return Err(Error::Contract("the exact generator objective needs a categorical head".into()));
    }
    let zs = states
        .iter()
        .map(|t| embedding(z, t.task_id))
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<&[f64]> = states.iter().map(|t| t.state.as_slice()).collect();
    let n = s.len();
    let k = pol.action_dim;
    let pol_in = pol.input_matrix(&s, &zs)?;
    let (logits, tape) = pol.net.forward_batch(pol_in.view())?;
    let (probs, logp) = pol.categorical(&logits);
    let qv = q_table(q, &s, &zs, k)?;
    let g = Array2::from_shape_fn((n, k), |(i, a)| {
        let log_d = log_discriminator(qv[(i, a)], logp[(i, a)]);
        let log_one_minus_d = log_discriminator(logp[(i, a)], qv[(i, a)]);
        log_one_minus_d - log_d
    });
    let inv_n = 1.0 / n as f64;
    let loss = (&probs * &g).sum() * inv_n;
    let grad = categorical_backward(pol, &tape, &probs, &g, inv_n)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct BcLoss {
    pub loss: f64,
    pub grad_policy: Vec<f64>,
    /// Empty when no encoder was given.
    pub grad_encoder: Vec<f64>,
    /// Embeddings computed for the batch's tasks.
    pub embeddings: Embeddings,
}

/// Mean squared error between the policy's deterministic output and the
/// expert action. With an encoder, `z` for each task comes from its context
/// batch and the encoder is trained through it; without one the policy must
/// be unconditioned.
pub fn bc_loss(
    pol: &TaskPolicy,
    enc: Option<&TaskEncoder>,
    batch: &[Timestep],
    contexts: &BTreeMap<usize, ContextBatch>,
) -> Result<BcLoss> {
    if batch.is_empty() {
        return Err(Error::Contract("bc loss needs a non-empty batch".into()));
    }
    if let Some(t) = batch.iter().find(|t| t.source != Source::Expert) {
        return Err(Error::Contract(format!(
            "bc batch contains a robot sample from task {}",
            t.task_id
        )));
    }
    let mut embeddings = Embeddings::new();
    let mut tapes: BTreeMap<usize, EncoderTape> = BTreeMap::new();
    match enc {
        Some(enc) => {
            for t in batch {
                if embeddings.contains_key(&t.task_id) {
                    continue;
                }
                let ctx = contexts.get(&t.task_id).ok_or(Error::UnknownTask(t.task_id))?;
                let (z, tape) = enc.encode_with_tape(ctx)?;
                embeddings.insert(t.task_id, z);
                tapes.insert(t.task_id, tape);
            }
        }
        None => {
            if pol.z_dim != 0 {
                return Err(Error::Contract("task-conditioned policy needs an encoder".into()));
            }
            for t in batch {
                embeddings.entry(t.task_id).or_default();
            }
        }
    }

    let n = batch.len();
    let a_dim = pol.action_dim;
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let zs: Vec<&[f64]> = batch.iter().map(|t| embeddings[&t.task_id].as_slice()).collect();
    let x = pol.input_matrix(&states, &zs)?;
    let (out, tape) = pol.net.forward_batch(x.view())?;
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut out_grad = Array2::zeros(out.dim());
    match pol.head {
        PolicyHead::TanhGaussian => {
            for (i, t) in batch.iter().enumerate() {
                crate::error::check_width("bc action", a_dim, t.action.len())?;
                for j in 0..a_dim {
                    let d = bounded_mean(out[(i, j)]).tanh();
                    let diff = d - t.action[j];
                    loss += diff * diff;
                    out_grad[(i, j)] = 2.0 * diff * (1.0 - d * d) * bounded_mean_slope(out[(i, j)]) * inv_n;
                }
            }
        }
        PolicyHead::Categorical => {
            let (probs, _) = pol.categorical(&out);
            for (i, t) in batch.iter().enumerate() {
                crate::error::check_width("bc action", a_dim, t.action.len())?;
                let g: Vec<f64> = (0..a_dim).map(|j| 2.0 * (probs[(i, j)] - t.action[j]) * inv_n).collect();
                loss += (0..a_dim).map(|j| (probs[(i, j)] - t.action[j]).powi(2)).sum::<f64>();
                let mean: f64 = (0..a_dim).map(|j| probs[(i, j)] * g[j]).sum();
                for j in 0..a_dim {
                    out_grad[(i, j)] = probs[(i, j)] * (g[j] - mean);
                }
            }
        }
    }
    let mut grad_policy = vec![0.0; pol.net.param_count()];
    let in_grad = pol.net.backward_batch(&tape, out_grad.view(), &mut grad_policy)?;

    let mut grad_encoder = Vec::new();
    if let Some(enc) = enc {
        grad_encoder = vec![0.0; enc.net.param_count()];
        let mut dz: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (i, t) in batch.iter().enumerate() {
            let acc = dz.entry(t.task_id).or_insert_with(|| vec![0.0; pol.z_dim]);
            for (j, a) in acc.iter_mut().enumerate() {
                *a += in_grad[(i, pol.state_dim + j)];
            }
        }
        for (task, g) in &dz {
            enc.backward(&tapes[task], g, &mut grad_encoder)?;
        }
    }
    Ok(BcLoss {
        loss: loss * inv_n,
        grad_policy,
        grad_encoder,
        embeddings,
    })
}
