use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::RecurrentNet;

/// Parameter-shared utility network `Q_k(τ_k, ·)`.
///
/// Input per row is the observation (agent-id suffix included) followed by a
/// one-hot of the previous action.
#[derive(Clone, Debug)]
pub struct AgentQNet {
    pub net: RecurrentNet,
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl AgentQNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        obs_dim: usize,
        n_actions: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let net = RecurrentNet::new(store, "agent", obs_dim + n_actions, hidden, n_actions, rng)?;
        Ok(Self {
            net,
            obs_dim,
            n_actions,
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.net.hidden_width()
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        self.net.initial_hidden(rows)
    }

    /// `rows × |U|` utilities and the next hidden state.
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
                op: "agent_q",
                lhs: obs.shape().to_vec(),
                rhs: vec![self.obs_dim],
            });
        }
        let x = tape.constant(Tensor::concat_cols(&[obs, prev_actions])?);
        self.net.step(tape, store, x, hidden)
    }

    /// Graph-free evaluation: returns `(q, h')` as plain tensors.
    pub fn evaluate(
        &self,
        store: &ParamStore,
        obs: &Tensor,
        prev_actions: &Tensor,
        hidden: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let h = tape.constant(hidden.clone());
        let (q, h) = self.step(&mut tape, store, obs, prev_actions, h)?;
        Ok((tape.value(q).clone(), tape.value(h).clone()))
    }

    /// Single agent, single step.
    pub fn agent_q(
        &self,
        store: &ParamStore,
        obs: &[f64],
        prev_action: Option<usize>,
        hidden: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut onehot = vec![0.0; self.n_actions];
        if let Some(u) = prev_action {
            *onehot.get_mut(u).ok_or_else(|| crate::error::contract(format!("action {u} out of range")))? = 1.0;
        }
        let (q, h) = self.evaluate(
            store,
            &Tensor::matrix(1, obs.len(), obs.to_vec())?,
            &Tensor::matrix(1, self.n_actions, onehot)?,
            &Tensor::matrix(1, hidden.len(), hidden.to_vec())?,
        )?;
        Ok((q.into_data(), h.into_data()))
    }
}
