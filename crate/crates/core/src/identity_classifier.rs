//! Recurrent identity discriminator `q_ζ(z | τ, u)`.
//!
//! For every candidate action the head emits one logit per agent, so a
//! single forward pass yields the full `|U| × n` identity table of a step.

use rand::Rng;

use crate::autodiff::{Adam, ParamStore, Tape, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::RecurrentNet;
use crate::replay::EpisodeBatch;

#[derive(Clone, Debug)]
pub struct ClassifierNet {
    pub net: RecurrentNet,
    /// Observation width without the agent-id suffix.
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
}

/// Per-batch diagnostics, measured before the parameter update.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierStats {
    /// Mean over valid `(t, k)` of `−log q_ζ(z_k | τ_t, u_t)`.
    pub mean_nll: f64,
    /// Fraction of valid `(t, k)` whose most likely identity is `k`.
    pub accuracy: f64,
    pub count: usize,
    /// `mean_nll` restricted to each agent's rows.
    pub per_agent_nll: Vec<f64>,
}

impl ClassifierStats {
    pub fn mean_log_q(&self) -> f64 {
        -self.mean_nll
    }
}

/// Drops the trailing `n_agents` id columns.
pub fn strip_ids(obs: &Tensor, n_agents: usize) -> Result<Tensor> {
    let (rows, cols) = (obs.rows(), obs.cols());
    if cols < n_agents {
        return Err(Error::Shape {
            op: "strip_ids",
            lhs: obs.shape().to_vec(),
            rhs: vec![n_agents],
        });
    }
    let width = cols - n_agents;
    let data = (0..rows).flat_map(|r| obs.row(r)[..width].iter().copied()).collect();
    Tensor::matrix(rows, width, data)
}

/// Log-softmax over each consecutive group of `n_agents` logits.
pub fn identity_log_probs(
    tape: &mut Tape,
    logits: Var,
    rows: usize,
    n_actions: usize,
    n_agents: usize,
) -> Result<Var> {
    let per_action = tape.reshape(logits, &[rows * n_actions, n_agents])?;
    let log_q = tape.log_softmax(per_action)?;
    tape.reshape(log_q, &[rows, n_actions * n_agents])
}

impl ClassifierNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        obs_dim: usize,
        n_actions: usize,
        n_agents: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_agents == 0 {
            return Err(contract("classifier needs at least one identity"));
        }
        let net = RecurrentNet::new(
            store,
            "classifier",
            obs_dim + n_actions,
            hidden,
            n_actions * n_agents,
            rng,
        )?;
        Ok(Self {
            net,
            obs_dim,
            n_actions,
            n_agents,
        })
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        self.net.initial_hidden(rows)
    }

    /// `rows × (|U|·n)` log-probabilities; columns `u·n .. u·n + n` hold
    /// `log q_ζ(· | τ, u)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &Tensor,
        prev_actions: &Tensor,
        hidden: Var,
    ) -> Result<(Var, Var)> {
        if obs.cols() != self.obs_dim || prev_actions.cols() != self.n_actions {
            return Err(Error::Shape {
                op: "classify",
                lhs: obs.shape().to_vec(),
                rhs: vec![self.obs_dim],
            });
        }
        let rows = obs.rows();
        let x = tape.constant(Tensor::concat_cols(&[obs, prev_actions])?);
        let (logits, h) = self.net.step(tape, store, x, hidden)?;
        Ok((identity_log_probs(tape, logits, rows, self.n_actions, self.n_agents)?, h))
    }

    pub fn evaluate(
        &self,
        store: &ParamStore,
        obs: &Tensor,
        prev_actions: &Tensor,
        hidden: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let h = tape.constant(hidden.clone());
        let (lq, h) = self.step(&mut tape, store, obs, prev_actions, h)?;
        Ok((tape.value(lq).clone(), tape.value(h).clone()))
    }

    /// Single trajectory step: returns the `|U| × n` table and the next hidden state.
    pub fn classify(
        &self,
        store: &ParamStore,
        obs: &[f64],
        prev_action: Option<usize>,
        hidden: &[f64],
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut onehot = vec![0.0; self.n_actions];
        if let Some(u) = prev_action {
            *onehot.get_mut(u).ok_or_else(|| contract(format!("action {u} out of range")))? = 1.0;
        }
        let (lq, h) = self.evaluate(
            store,
            &Tensor::matrix(1, obs.len(), obs.to_vec())?,
            &Tensor::matrix(1, self.n_actions, onehot)?,
            &Tensor::matrix(1, hidden.len(), hidden.to_vec())?,
        )?;
        let table = lq.data().chunks(self.n_agents).map(<[f64]>::to_vec).collect();
        Ok((table, h.into_data()))
    }

    /// Mean cross-entropy against the true agent labels over valid steps.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, batch: &EpisodeBatch) -> Result<(Var, ClassifierStats)> {
        let (b, n) = (batch.batch_size, batch.n_agents);
        if n != self.n_agents {
            return Err(contract(format!("batch has {} agents, classifier {}", n, self.n_agents)));
        }
        let count = batch.valid_steps() * n;
        if count == 0 {
            return Err(contract("classifier step on a batch without valid steps"));
        }
        let rows = b * n;
        let mut h = tape.constant(self.initial_hidden(rows));
        let mut picked = Vec::with_capacity(batch.max_len);
        let mut weights = Vec::with_capacity(batch.max_len * rows);
        let (mut nll, mut correct) = (0.0, 0usize);
        let mut per_agent = vec![0.0; n];
        for t in 0..batch.max_len {
            let obs = strip_ids(&batch.obs[t], n)?;
            let (lq, h2) = self.step(tape, store, &obs, &batch.prev_action_onehot(t), h)?;
            h = h2;
            let cols: Vec<usize> = (0..rows).map(|r| batch.actions[t][r] * n + r % n).collect();
            picked.push(tape.gather(lq, &cols)?);
            let values = tape.value(lq);
            for r in 0..rows {
                let valid = batch.valid[t][r / n];
                weights.push(if valid { 1.0 / count as f64 } else { 0.0 });
                if !valid {
                    continue;
                }
                let u = batch.actions[t][r];
                let row = &values.row(r)[u * n..(u + 1) * n];
                nll -= row[r % n];
                per_agent[r % n] -= row[r % n];
                let best = (0..n).fold(0, |best, k| if row[k] > row[best] { k } else { best });
                correct += usize::from(best == r % n);
            }
        }
        let stacked = tape.concat_rows(&picked)?;
        let total = tape.weighted_sum(stacked, &weights)?;
        let loss = tape.neg(total)?;
        Ok((
            loss,
            ClassifierStats {
                mean_nll: nll / count as f64,
                accuracy: correct as f64 / count as f64,
                count,
                per_agent_nll: per_agent.iter().map(|v| v * n as f64 / count as f64).collect(),
            },
        ))
    }
}

/// One Adam step on the identity cross-entropy. Returns pre-update statistics.
pub fn classifier_train_step(
    clf: &ClassifierNet,
    store: &mut ParamStore,
    optimizer: &mut Adam,
    batch: &EpisodeBatch,
    grad_clip: Option<f64>,
) -> Result<ClassifierStats> {
    let mut tape = Tape::new();
    let (loss, stats) = clf.loss(&mut tape, store, batch)?;
    store.zero_grad();
    tape.backward(loss, &mut [store])?;
    if let Some(max) = grad_clip {
        store.clip_grad_norm(max);
    }
    optimizer.step(store)?;
    Ok(stats)
}
