use super::ValueNets;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{contract, Result};
use crate::replay::EpisodeBatch;

pub const DEFAULT_GAMMA: f64 = 0.99;

/// Greedy action among available ones; ties go to the lowest index.
pub fn greedy_action(q: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (u, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.map_or(true, |b| v > q[b]) {
            best = Some(u);
        }
    }
    best
}

/// `max_{u available} q(u)`.
pub fn masked_max(q: &[f64], avail: &[bool]) -> Option<f64> {
    greedy_action(q, avail).map(|u| q[u])
}

#[derive(Clone, Copy, Debug)]
pub struct TdLoss {
    pub loss: Var,
    pub value: f64,
    pub valid_steps: usize,
}

/// Unrolls the agent network over the whole batch; returns per-step `B·n × |U|` utilities.
fn unroll(tape: &mut Tape, nets: &ValueNets, store: &ParamStore, batch: &EpisodeBatch, steps: usize) -> Result<Vec<Var>> {
    let rows = batch.batch_size * batch.n_agents;
    let mut h = tape.constant(nets.agent.initial_hidden(rows));
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let (q, h2) = nets.agent.step(tape, store, &batch.obs[t], &batch.prev_action_onehot(t), h)?;
        out.push(q);
        h = h2;
    }
    Ok(out)
}

/// `Q_tot⁻(τ_{t+1}, greedy)` for every `(t, b)`, time-major. `None` when no
/// valid step needs a bootstrap.
fn bootstrap_values(nets: &ValueNets, target: &ParamStore, batch: &EpisodeBatch) -> Result<Option<Vec<f64>>> {
    let needed = (0..batch.max_len)
        .any(|t| (0..batch.batch_size).any(|b| batch.valid[t][b] && !batch.terminated[t][b]));
    if !needed {
        return Ok(None);
    }
    let (b, n) = (batch.batch_size, batch.n_agents);
    let mut tape = Tape::new();
    let q = unroll(&mut tape, nets, target, batch, batch.max_len + 1)?;
    let mut chosen = Vec::with_capacity(batch.max_len * b * n);
    for t in 1..=batch.max_len {
        let qt = tape.value(q[t]);
        for r in 0..b * n {
            chosen.push(masked_max(qt.row(r), batch.avail_row(t, r)).ok_or_else(|| contract("no available action"))?);
        }
    }
    let states: Vec<&Tensor> = batch.state[1..].iter().collect();
    let qv = tape.constant(Tensor::matrix(batch.max_len * b, n, chosen)?);
    let sv = tape.constant(Tensor::concat_rows(&states)?);
    let tot = nets.mixer.mix(&mut tape, target, qv, sv)?;
    Ok(Some(tape.value(tot).data().to_vec()))
}

/// Mean over valid steps of `(r + γ(1 − term)·Q_tot⁻(t+1) − Q_tot(t))²`.
///
/// The target takes each agent's greedy action under the target network
/// (masked actions excluded), so the joint maximiser is the tuple of
/// individual maximisers.
pub fn td_loss(
    tape: &mut Tape,
    nets: &ValueNets,
    params: &ParamStore,
    target: &ParamStore,
    batch: &EpisodeBatch,
    gamma: f64,
) -> Result<TdLoss> {
    let valid_steps = batch.valid_steps();
    if valid_steps == 0 {
        return Err(contract("td_loss on a batch without valid steps"));
    }
    let (b, n, len) = (batch.batch_size, batch.n_agents, batch.max_len);

    let q = unroll(tape, nets, params, batch, len)?;
    let mut chosen = Vec::with_capacity(len);
    for (t, &qt) in q.iter().enumerate() {
        let picked = tape.gather(qt, &batch.actions[t])?;
        chosen.push(tape.reshape(picked, &[b, n])?);
    }
    let chosen = tape.concat_rows(&chosen)?;
    let states: Vec<&Tensor> = batch.state[..len].iter().collect();
    let states = tape.constant(Tensor::concat_rows(&states)?);
    let q_tot = nets.mixer.mix(tape, params, chosen, states)?;

    let next = bootstrap_values(nets, target, batch)?;
    let mut y = Vec::with_capacity(len * b);
    let mut weights = Vec::with_capacity(len * b);
    for t in 0..len {
        for i in 0..b {
            let boot = match (&next, batch.terminated[t][i]) {
                (Some(v), false) => gamma * v[t * b + i],
                _ => 0.0,
            };
            y.push(batch.reward[t][i] + boot);
            weights.push(if batch.valid[t][i] { 1.0 / valid_steps as f64 } else { 0.0 });
        }
    }
    let y = tape.constant(Tensor::matrix(len * b, 1, y)?);
    let err = tape.sub(q_tot, y)?;
    let sq = tape.square(err)?;
    let loss = tape.weighted_sum(sq, &weights)?;
    Ok(TdLoss {
        loss,
        value: tape.value(loss).item()?,
        valid_steps,
    })
}
