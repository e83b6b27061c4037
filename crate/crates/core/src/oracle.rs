//! Exact tabular machinery: soft value iteration, discounted occupancies,
//! entropy-regularized policy evaluation and KL divergences.
//!
//! These give ground truth for the distribution-matching properties of the
//! learned discriminator and policy on small discrete problems.

use nalgebra::{DMatrix, DVector};

use crate::envs::TabularMdp;
use crate::error::{check_width, Error, Result};

/// Fixed point of the soft Bellman operator.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftSolution {
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub policy: Vec<Vec<f64>>,
    pub alpha: f64,
    pub gamma: f64,
    pub iterations: usize,
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// `alpha * logsumexp(q / alpha)` and `softmax(q / alpha)` for one state.
pub fn soft_value_and_policy(q: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let scaled: Vec<f64> = q.iter().map(|x| x / alpha).collect();
    (alpha * logsumexp(&scaled), softmax(&scaled))
}

fn check_params(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Contract(format!("temperature must be positive, got {alpha}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Contract(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

fn soft_backup(mdp: &TabularMdp, v: &[f64], gamma: f64) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let next: f64 = mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(v)
                        .map(|(p, v)| p * v)
                        .sum();
                    mdp.reward(s, a) + gamma * next
                })
                .collect()
        })
        .collect()
}

/// Iterates `Q <- r + gamma * T V` with `V = alpha * logsumexp(Q / alpha)`
/// until the largest change falls below `tol`.
pub fn soft_value_iteration(mdp: &TabularMdp, alpha: f64, gamma: f64, tol: f64) -> Result<TabularSoftSolution> {
    check_params(alpha, gamma)?;
    if tol <= 0.0 {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    mdp.validate()?;
    let mut v = vec![0.0; mdp.n_states];
    let mut q = soft_backup(mdp, &v, gamma);
    let mut iterations = 1;
    loop {
        v = q.iter().map(|row| soft_value_and_policy(row, alpha).0).collect();
        let next = soft_backup(mdp, &v, gamma);
        let residual = q
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        iterations += 1;
        // the returned q then has residual at most gamma * tol
        if residual < tol || iterations > 10_000_000 {
            break;
        }
    }
    let (v, policy): (Vec<f64>, Vec<Vec<f64>>) = q.iter().map(|row| soft_value_and_policy(row, alpha)).unzip();
    Ok(TabularSoftSolution {
        q,
        v,
        policy,
        alpha,
        gamma,
        iterations,
    })
}

/// Largest absolute soft Bellman residual of `q`.
pub fn bellman_residual(mdp: &TabularMdp, q: &[Vec<f64>], alpha: f64, gamma: f64) -> f64 {
    let v: Vec<f64> = q.iter().map(|row| soft_value_and_policy(row, alpha).0).collect();
    let backup = soft_backup(mdp, &v, gamma);
    q.iter()
        .flatten()
        .zip(backup.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `sum p ln(p / q)`, with `0 ln 0 = 0`.
pub fn exact_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_width("kl support", p.len(), q.len())?;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 || !pi.is_finite() || !qi.is_finite() {
            return Err(Error::Contract(format!("entry {i} is not a probability")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Contract(format!(
                "support violation at {i}: q is zero where p is {pi}"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Discounted, normalized occupancy measures of a stationary policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub state: Vec<f64>,
    /// `state_action[s][a] = state[s] * policy[s][a]`.
    pub state_action: Vec<Vec<f64>>,
}

fn policy_transition(mdp: &TabularMdp, policy: &[Vec<f64>]) -> DMatrix<f64> {
    let n = mdp.n_states;
    DMatrix::from_fn(n, n, |s, s2| {
        (0..mdp.n_actions)
            .map(|a| policy[s][a] * mdp.transition(s, a, s2))
            .sum()
    })
}

fn check_policy(mdp: &TabularMdp, policy: &[Vec<f64>]) -> Result<()> {
    check_width("policy states", mdp.n_states, policy.len())?;
    for row in policy {
        check_width("policy actions", mdp.n_actions, row.len())?;
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
            return Err(Error::Contract("policy row is not a distribution".into()));
        }
    }
    Ok(())
}

/// Solves `d = (1 - gamma) mu0 + gamma P_pi^T d` exactly.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &[Vec<f64>], gamma: f64) -> Result<Occupancy> {
    check_params(1.0, gamma)?;
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let n = mdp.n_states;
    let p = policy_transition(mdp, policy);
    let lhs = DMatrix::<f64>::identity(n, n) - p.transpose() * gamma;
    let rhs = DVector::from_iterator(n, mdp.initial.iter().map(|m| (1.0 - gamma) * m));
    let d = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Contract("occupancy system is singular".into()))?;
    let total: f64 = d.iter().sum();
    let state: Vec<f64> = d.iter().map(|x| x / total).collect();
    let state_action = state
        .iter()
        .zip(policy)
        .map(|(ds, row)| row.iter().map(|p| ds * p).collect())
        .collect();
    Ok(Occupancy { state, state_action })
}

/// Entropy-regularized value of a policy:
/// `V(s) = sum_a pi(a|s) [r(s,a) - alpha ln pi(a|s) + gamma sum_s' T V(s')]`.
pub fn soft_policy_value(mdp: &TabularMdp, policy: &[Vec<f64>], alpha: f64, gamma: f64) -> Result<Vec<f64>> {
    check_params(alpha, gamma)?;
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let n = mdp.n_states;
    let p = policy_transition(mdp, policy);
    let lhs = DMatrix::<f64>::identity(n, n) - p * gamma;
    let rhs = DVector::from_iterator(
        n,
        (0..n).map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    let pa = policy[s][a];
                    if pa == 0.0 {
                        0.0
                    } else {
                        pa * (mdp.reward(s, a) - alpha * pa.ln())
                    }
                })
                .sum::<f64>()
        }),
    );
    let v = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Contract("policy evaluation system is singular".into()))?;
    Ok(v.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::tabular;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_arm(r: [f64; 2]) -> TabularMdp {
        TabularMdp {
            n_states: 1,
            n_actions: 2,
            transitions: vec![1.0, 1.0],
            reward: r.to_vec(),
            initial: vec![1.0],
        }
    }

    #[test]
    fn closed_form_zero_reward() {
        let sol = soft_value_iteration(&two_arm([0.0, 0.0]), 1.0, 0.0, 1e-12).unwrap();
        assert_eq!(sol.q, vec![vec![0.0, 0.0]]);
        assert!((sol.v[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sol.policy[0], vec![0.5, 0.5]);
    }

    #[test]
    fn closed_form_unit_reward() {
        let sol = soft_value_iteration(&two_arm([1.0, 0.0]), 1.0, 0.0, 1e-12).unwrap();
        let e = 1f64.exp();
        assert!((sol.policy[0][0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((sol.policy[0][1] - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn gridworld_residual_below_tolerance() {
        let mdp = tabular::gridworld(3, 8, 1.0);
        let sol = soft_value_iteration(&mdp, 0.5, 0.9, 1e-10).unwrap();
        assert!(bellman_residual(&mdp, &sol.q, 0.5, 0.9) < 1e-10);
        for (s, row) in sol.policy.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let (v, _) = soft_value_and_policy(&sol.q[s], 0.5);
            assert_eq!(v, sol.v[s]);
        }
    }

    #[test]
    fn non_stochastic_transitions_rejected() {
        let mut mdp = two_arm([0.0, 0.0]);
        mdp.transitions[0] = 0.5;
        assert!(soft_value_iteration(&mdp, 1.0, 0.5, 1e-8).is_err());
    }

    #[test]
    fn kl_matches_term_by_term_sum() {
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((exact_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap() - expected).abs() < 1e-15);
        assert_eq!(exact_kl(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(exact_kl(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn kl_is_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(2..6);
            let p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let q: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            let p: Vec<f64> = p.iter().map(|x| x / sp).collect();
            let q: Vec<f64> = q.iter().map(|x| x / sq).collect();
            assert!(exact_kl(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn bandit_occupancy_is_policy() {
        let mdp = tabular::bandit(3, 1, 1.0);
        let pi = vec![vec![0.2, 0.5, 0.3]];
        let occ = exact_occupancy(&mdp, &pi, 0.0).unwrap();
        assert_eq!(occ.state, vec![1.0]);
        assert_eq!(occ.state_action, pi);
    }

    #[test]
    fn occupancy_is_normalized() {
        let mdp = tabular::gridworld(3, 4, 1.0);
        let sol = soft_value_iteration(&mdp, 0.3, 0.9, 1e-10).unwrap();
        let occ = exact_occupancy(&mdp, &sol.policy, 0.9).unwrap();
        let total: f64 = occ.state_action.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
