//! Advantage estimation, the clipped surrogate with world reweighting, and the
//! KL term toward the lattice prior.

use crate::dynamics::ActionLattice;
use crate::nn::{log_softmax, softmax};
use crate::{Error, Result};

use super::config::Algorithm;

/// GAE over one contiguous segment of a single agent.
///
/// `terminal` means the last transition ended the episode (bootstrap 0);
/// otherwise `bootstrap` is V of the state after the last transition.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminal: bool,
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = if terminal { 0.0 } else { bootstrap };
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit (population) variance.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub algorithm: Algorithm,
    pub eps: f64,
    pub eps_c: f64,
}

/// Per-transition loss `-min(r A, clip(r, 1-eps, 1+eps) A)` and its derivative
/// with respect to the raw ratio. In dclamp mode the ratio is first clamped
/// into `[1/(1+eps_c), 1+eps_c]`.
pub fn surrogate(ratio: f64, adv: f64, p: &ClipParams) -> (f64, f64) {
    let (r, dr) = match p.algorithm {
        Algorithm::Ppo => (ratio, 1.0),
        Algorithm::Dclamp => {
            let lo = 1.0 / (1.0 + p.eps_c);
            let hi = 1.0 + p.eps_c;
            if ratio < lo {
                (lo, 0.0)
            } else if ratio > hi {
                (hi, 0.0)
            } else {
                (ratio, 1.0)
            }
        }
    };
    let unclipped = r * adv;
    let rc = r.clamp(1.0 - p.eps, 1.0 + p.eps);
    let clipped = rc * adv;
    if unclipped <= clipped {
        (-unclipped, -adv * dr)
    } else {
        let inside = (1.0 - p.eps..=1.0 + p.eps).contains(&r);
        (-clipped, if inside { -adv * dr } else { 0.0 })
    }
}

/// `sum_w (1 / N_w) sum_i L^(w,i)` with `n_w` given per transition.
pub fn reweighted_total(losses: &[f64], n_w: &[usize]) -> Result<f64> {
    if losses.len() != n_w.len() {
        return Err(Error::MisalignedBatch(format!("{} losses vs {} world sizes", losses.len(), n_w.len())));
    }
    Ok(losses.iter().zip(n_w).map(|(l, &n)| l / n.max(1) as f64).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    /// Reweighted sum normalized by the total weight.
    pub loss: f64,
    /// d loss / d new log-prob, per transition.
    pub grad_logp: Vec<f64>,
    pub clip_fraction: f64,
}

/// World-reweighted surrogate over a set of transitions.
pub fn policy_loss(
    new_logp: &[f64],
    old_logp: &[f64],
    adv: &[f64],
    n_w: &[usize],
    p: &ClipParams,
) -> Result<PolicyLoss> {
    let n = new_logp.len();
    if old_logp.len() != n || adv.len() != n || n_w.len() != n {
        return Err(Error::MisalignedBatch(format!(
            "lengths {} / {} / {} / {}",
            n,
            old_logp.len(),
            adv.len(),
            n_w.len()
        )));
    }
    let weight: f64 = n_w.iter().map(|&k| 1.0 / k.max(1) as f64).sum();
    let mut losses = Vec::with_capacity(n);
    let mut grad_logp = Vec::with_capacity(n);
    let mut clipped = 0usize;
    for i in 0..n {
        let ratio = (new_logp[i] - old_logp[i]).exp();
        let (l, d) = surrogate(ratio, adv[i], p);
        if d == 0.0 && adv[i] != 0.0 {
            clipped += 1;
        }
        losses.push(l);
        grad_logp.push(d * ratio / n_w[i].max(1) as f64 / weight.max(f64::MIN_POSITIVE));
    }
    let total = reweighted_total(&losses, n_w)?;
    Ok(PolicyLoss {
        loss: if n == 0 { 0.0 } else { total / weight },
        grad_logp,
        clip_fraction: if n == 0 { 0.0 } else { clipped as f64 / n as f64 },
    })
}

/// Log-probabilities of the discretized zero-mean Gaussian prior over tokens.
pub fn prior_log_probs(lattice: &ActionLattice, sigma: [f64; 2]) -> Vec<f64> {
    let mut energy = Vec::with_capacity(lattice.len());
    for &j in &lattice.jerk_values {
        for &s in &lattice.steer_rate_values {
            energy.push(-j * j / (2.0 * sigma[0] * sigma[0]) - s * s / (2.0 * sigma[1] * sigma[1]));
        }
    }
    log_softmax(&energy)
}

/// `KL(softmax(logits) || q)` and its gradient with respect to the logits.
pub fn kl_to_prior(logits: &[f64], log_q: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
    let terms: Vec<f64> = lp.iter().zip(log_q).map(|(a, b)| a - b).collect();
    let kl: f64 = p.iter().zip(&terms).map(|(pi, t)| if *pi > 0.0 { pi * t } else { 0.0 }).sum();
    let grad = p.iter().zip(&terms).map(|(pi, t)| if *pi > 0.0 { pi * (t - kl) } else { 0.0 }).collect();
    (kl, grad)
}

/// Mean KL to the prior over a batch of logit rows.
pub fn kl_action_regularizer(logits: &[Vec<f64>], lattice: &ActionLattice, sigma: [f64; 2]) -> f64 {
    if logits.is_empty() {
        return 0.0;
    }
    let log_q = prior_log_probs(lattice, sigma);
    logits.iter().map(|l| kl_to_prior(l, &log_q).0).sum::<f64>() / logits.len() as f64
}

/// Entropy of softmax(logits).
pub fn entropy(logits: &[f64]) -> f64 {
    softmax(logits).iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}
