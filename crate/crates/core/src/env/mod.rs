//! Dec-POMDP environment contract and the built-in families.
//!
//! Every observation vector ends with the agent's one-hot id; global state
//! vectors carry no id. Joint actions index tables with agent 0 as the most
//! significant digit: `joint = Σ_k u_k · |U|^(n-1-k)`.

mod matrix;
mod spread;
mod tabular;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub use matrix::{MatrixGame, MatrixGameSpec};
pub use spread::{SpreadGrid, SpreadGridSpec, SPREAD_ACTIONS};
pub use tabular::{
    enumerate_support, SupportRecord, Support, TabularDecPomdp, TabularEnv, TabularPolicy, TrajKey,
    DEFAULT_ENUMERATION_BUDGET, TABULAR_FORMAT,
};

/// What the environment hands back after `reset` and every `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub avail_actions: Vec<Vec<bool>>,
}

pub trait Environment: Send {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Observation width including the trailing agent-id one-hot.
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// Number of steps per episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self, seed: u64) -> StepResult;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;
    /// Whether the finished episode reached the task's optimum, when the task defines one.
    fn solved(&self) -> Option<bool> {
        None
    }
    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// Width of an observation once the agent-id suffix is removed.
pub fn stripped_obs_dim(obs_dim: usize, n_agents: usize) -> usize {
    obs_dim - n_agents
}

pub fn strip_agent_id(obs: &[f64], n_agents: usize) -> &[f64] {
    &obs[..obs.len() - n_agents]
}

pub(crate) fn append_agent_id(mut v: Vec<f64>, agent: usize, n_agents: usize) -> Vec<f64> {
    v.extend((0..n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
    v
}

pub(crate) fn joint_index(actions: &[usize], n_actions: usize) -> usize {
    actions.iter().fold(0, |acc, &u| acc * n_actions + u)
}

pub(crate) fn joint_actions(mut index: usize, n_agents: usize, n_actions: usize) -> Vec<usize> {
    let mut out = vec![0; n_agents];
    for slot in out.iter_mut().rev() {
        *slot = index % n_actions;
        index /= n_actions;
    }
    out
}

pub(crate) fn check_joint_action(
    joint_action: &[usize],
    avail: &[Vec<bool>],
    n_actions: usize,
) -> Result<()> {
    if joint_action.len() != avail.len() {
        return Err(contract(format!(
            "joint action has {} entries for {} agents",
            joint_action.len(),
            avail.len()
        )));
    }
    for (agent, (&u, mask)) in joint_action.iter().zip(avail).enumerate() {
        if u >= n_actions || !mask[u] {
            return Err(contract(format!("agent {agent} chose unavailable action {u}")));
        }
    }
    Ok(())
}

/// Environment selection as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Climb,
    Penalty {
        #[serde(default = "default_penalty")]
        penalty: f64,
    },
    Spread {
        #[serde(default = "default_spread_side")]
        width: usize,
        #[serde(default = "default_spread_side")]
        height: usize,
        #[serde(default = "default_spread_agents")]
        n_agents: usize,
        #[serde(default = "default_spread_horizon")]
        horizon: usize,
    },
    Tabular {
        path: PathBuf,
    },
}

fn default_penalty() -> f64 {
    -100.0
}
fn default_spread_side() -> usize {
    4
}
fn default_spread_agents() -> usize {
    3
}
fn default_spread_horizon() -> usize {
    8
}

impl EnvConfig {
    pub fn spread_default() -> Self {
        EnvConfig::Spread {
            width: default_spread_side(),
            height: default_spread_side(),
            n_agents: default_spread_agents(),
            horizon: default_spread_horizon(),
        }
    }

    /// Parses the short names accepted on the command line.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "climb" => Some(EnvConfig::Climb),
            "penalty" => Some(EnvConfig::Penalty {
                penalty: default_penalty(),
            }),
            "spread" => Some(Self::spread_default()),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Climb => Box::new(MatrixGame::new(MatrixGameSpec::climb())?),
            EnvConfig::Penalty { penalty } => Box::new(MatrixGame::new(MatrixGameSpec::penalty(*penalty))?),
            EnvConfig::Spread {
                width,
                height,
                n_agents,
                horizon,
            } => Box::new(SpreadGrid::new(SpreadGridSpec {
                width: *width,
                height: *height,
                n_agents: *n_agents,
                horizon: *horizon,
            })?),
            EnvConfig::Tabular { path } => {
                Box::new(TabularEnv::new(TabularDecPomdp::load(path)?)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_index_round_trip() {
        for idx in 0..27 {
            let a = joint_actions(idx, 3, 3);
            assert_eq!(joint_index(&a, 3), idx);
        }
        assert_eq!(joint_index(&[1, 2], 3), 5);
    }

    #[test]
    fn masked_action_names_agent() {
        let avail = vec![vec![true, true], vec![true, false]];
        let err = check_joint_action(&[0, 1], &avail, 2).unwrap_err().to_string();
        assert!(err.contains("agent 1") && err.contains("action 1"), "{err}");
    }
}
