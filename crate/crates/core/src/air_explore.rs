//! Identity-shaped action selection and the signed temperature.
//!
//! `q̃(u) = q(u) − α·log q_ζ(z_k | τ, u)`. Positive α favours actions the
//! classifier does not attribute to agent `k`; negative α favours actions
//! that confirm its identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_ALPHA_LR: f64 = 0.0005;

/// Shaped utilities of one agent; masked actions hold `−∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapedQ {
    pub q_tilde: Vec<f64>,
}

impl ShapedQ {
    pub fn is_available(&self, u: usize) -> bool {
        self.q_tilde[u] != f64::NEG_INFINITY
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (u, &v) in self.q_tilde.iter().enumerate() {
            if v != f64::NEG_INFINITY && best.map_or(true, |b| v > self.q_tilde[b]) {
                best = Some(u);
            }
        }
        best
    }
}

pub fn shaped_q(q: &[f64], log_q_row: &[f64], alpha: f64, mask: &[bool]) -> Result<ShapedQ> {
    if q.len() != log_q_row.len() || q.len() != mask.len() {
        return Err(contract(format!(
            "shaped_q length mismatch: q {}, log_q {}, mask {}",
            q.len(),
            log_q_row.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(contract("shaped_q needs at least one available action"));
    }
    if let Some(bad) = log_q_row.iter().find(|&&l| l > 0.0 || l.is_nan()) {
        return Err(contract(format!("log-probability {bad} is positive")));
    }
    let q_tilde = q
        .iter()
        .zip(log_q_row)
        .zip(mask)
        .map(|((&v, &l), &m)| if m { v - alpha * l } else { f64::NEG_INFINITY })
        .collect();
    Ok(ShapedQ { q_tilde })
}

/// ε-greedy over the shaped values. One uniform draw decides exploration; a
/// second picks the random action when exploring.
pub fn select_action<R: Rng + ?Sized>(shaped: &ShapedQ, epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(contract(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let greedy = shaped.greedy().ok_or_else(|| contract("no available action"))?;
    if rng.gen::<f64>() < epsilon {
        let avail: Vec<usize> = (0..shaped.q_tilde.len()).filter(|&u| shaped.is_available(u)).collect();
        return Ok(avail[rng.gen_range(0..avail.len())]);
    }
    Ok(greedy)
}

/// Signed temperature α with its running-mean target entropy H̄.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureState {
    pub alpha: f64,
    pub target_entropy_bar: f64,
    pub ema_decay: f64,
}

impl TemperatureState {
    /// α = 0, H̄ = ln n.
    pub fn new(n_agents: usize) -> Self {
        Self::with(0.0, (n_agents as f64).ln(), DEFAULT_EMA_DECAY)
    }

    pub fn with(alpha: f64, target_entropy_bar: f64, ema_decay: f64) -> Self {
        Self {
            alpha,
            target_entropy_bar,
            ema_decay,
        }
    }

    /// `H̄ ← d·H̄ + (1 − d)·stat`, where `stat` is a batch mean of `−log q_ζ`.
    pub fn update_target_entropy(&mut self, batch_neg_log_q: f64) -> Result<()> {
        if !batch_neg_log_q.is_finite() || batch_neg_log_q < 0.0 {
            return Err(contract(format!(
                "surprisal statistic must be finite and non-negative, got {batch_neg_log_q}"
            )));
        }
        let d = self.ema_decay;
        self.target_entropy_bar = d * self.target_entropy_bar + (1.0 - d) * batch_neg_log_q;
        Ok(())
    }

    /// `α ← α + lr·(mean log q + H̄)`; returns the gradient.
    pub fn temperature_step(&mut self, batch_log_q: &[f64], lr: f64) -> Result<f64> {
        if batch_log_q.is_empty() {
            return Err(contract("temperature step on an empty batch"));
        }
        if let Some(bad) = batch_log_q.iter().find(|&&l| !l.is_finite() || l > 0.0) {
            return Err(contract(format!("invalid log-probability {bad}")));
        }
        let mean = batch_log_q.iter().sum::<f64>() / batch_log_q.len() as f64;
        self.temperature_step_mean(mean, lr)
    }

    /// As [`Self::temperature_step`] with the batch mean precomputed.
    pub fn temperature_step_mean(&mut self, mean_log_q: f64, lr: f64) -> Result<f64> {
        if !mean_log_q.is_finite() || mean_log_q > 0.0 {
            return Err(contract(format!("invalid mean log-probability {mean_log_q}")));
        }
        let grad = mean_log_q + self.target_entropy_bar;
        self.alpha += lr * grad;
        Ok(grad)
    }
}
