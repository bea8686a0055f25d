use super::{append_agent_id, check_joint_action, joint_index, Environment, StepResult};
use crate::error::{contract, Result};

/// One-shot cooperative game: every agent receives the payoff of the joint action.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameSpec {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Row-major over joint actions (agent 0 most significant).
    pub payoff: Vec<f64>,
}

impl MatrixGameSpec {
    /// Climb game: optimum 11 at (a, a), guarded by −30 miscoordination.
    pub fn climb() -> Self {
        Self {
            n_agents: 2,
            n_actions: 3,
            payoff: vec![
                11.0, -30.0, 0.0, //
                -30.0, 7.0, 6.0, //
                0.0, 0.0, 5.0,
            ],
        }
    }

    /// Penalty game: optimum 10 at (a, c) or (c, a), `penalty` on (a, a) and (c, c).
    pub fn penalty(penalty: f64) -> Self {
        Self {
            n_agents: 2,
            n_actions: 3,
            payoff: vec![
                penalty, 0.0, 10.0, //
                0.0, 2.0, 0.0, //
                10.0, 0.0, penalty,
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_actions == 0 {
            return Err(contract("matrix game needs agents and actions"));
        }
        let expected = self.n_actions.pow(self.n_agents as u32);
        if self.payoff.len() != expected {
            return Err(contract(format!(
                "payoff has {} entries, expected {expected}",
                self.payoff.len()
            )));
        }
        if self.payoff.iter().any(|v| !v.is_finite()) {
            return Err(contract("payoff must be finite"));
        }
        Ok(())
    }

    pub fn payoff_of(&self, joint_action: &[usize]) -> f64 {
        self.payoff[joint_index(joint_action, self.n_actions)]
    }

    pub fn best_payoff(&self) -> f64 {
        self.payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_payoff(&self) -> f64 {
        self.payoff.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: MatrixGameSpec,
    done: bool,
    last_reward: Option<f64>,
}

impl MatrixGame {
    pub fn new(spec: MatrixGameSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            done: false,
            last_reward: None,
        })
    }

    pub fn spec(&self) -> &MatrixGameSpec {
        &self.spec
    }

    fn observe(&self, reward: f64, terminated: bool) -> StepResult {
        let n = self.spec.n_agents;
        StepResult {
            observations: (0..n).map(|k| append_agent_id(vec![1.0], k, n)).collect(),
            state: vec![1.0],
            reward,
            terminated,
            avail_actions: vec![vec![true; self.spec.n_actions]; n],
        }
    }
}

impl Environment for MatrixGame {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn obs_dim(&self) -> usize {
        1 + self.spec.n_agents
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.done = false;
        self.last_reward = None;
        self.observe(0.0, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(contract("step after episode end"));
        }
        let avail = vec![vec![true; self.spec.n_actions]; self.spec.n_agents];
        check_joint_action(joint_action, &avail, self.spec.n_actions)?;
        let r = self.spec.payoff_of(joint_action);
        self.done = true;
        self.last_reward = Some(r);
        Ok(self.observe(r, true))
    }

    fn solved(&self) -> Option<bool> {
        self.last_reward.map(|r| r >= self.spec.best_payoff())
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
