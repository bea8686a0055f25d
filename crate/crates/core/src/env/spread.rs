use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{append_agent_id, check_joint_action, Environment, StepResult};
use crate::error::{contract, Result};

/// Action labels, in index order.
pub const SPREAD_ACTIONS: [&str; 5] = ["up", "down", "left", "right", "stay"];

/// Landmark-spread gridworld: `n` agents must cover `n` landmarks.
///
/// Every step pays `−Σ_landmarks min_agent manhattan / (n · (W−1 + H−1))`,
/// which lies in `[−1, 0]`; the final step additionally pays the number of
/// landmarks occupied by exactly one agent. Episode returns lie in `[−T, n]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpreadGridSpec {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub horizon: usize,
}

impl SpreadGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(contract("spread grid must be at least 2×2"));
        }
        if self.n_agents == 0 || self.horizon == 0 {
            return Err(contract("spread grid needs agents and a positive horizon"));
        }
        if 2 * self.n_agents > self.width * self.height {
            return Err(contract("grid too small for distinct agent and landmark cells"));
        }
        Ok(())
    }

    fn normalizer(&self) -> f64 {
        (self.n_agents * (self.width - 1 + self.height - 1)) as f64
    }
}

#[derive(Clone, Debug)]
pub struct SpreadGrid {
    spec: SpreadGridSpec,
    agents: Vec<(usize, usize)>,
    landmarks: Vec<(usize, usize)>,
    t: usize,
    covered_at_end: Option<usize>,
}

impl SpreadGrid {
    pub fn new(spec: SpreadGridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            agents: Vec::new(),
            landmarks: Vec::new(),
            t: 0,
            covered_at_end: None,
        })
    }

    pub fn spec(&self) -> &SpreadGridSpec {
        &self.spec
    }

    pub fn agent_positions(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn landmark_positions(&self) -> &[(usize, usize)] {
        &self.landmarks
    }

    /// Places agents and landmarks directly (tests and scripted scenarios).
    pub fn set_positions(&mut self, agents: Vec<(usize, usize)>, landmarks: Vec<(usize, usize)>) -> Result<()> {
        let n = self.spec.n_agents;
        if agents.len() != n || landmarks.len() != n {
            return Err(contract("need one position per agent and per landmark"));
        }
        let inside = |&(x, y): &(usize, usize)| x < self.spec.width && y < self.spec.height;
        if !agents.iter().chain(&landmarks).all(inside) {
            return Err(contract("position outside grid"));
        }
        let mut sorted = landmarks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(contract("landmarks must occupy distinct cells"));
        }
        self.agents = agents;
        self.landmarks = landmarks;
        self.t = 0;
        self.covered_at_end = None;
        Ok(())
    }

    fn distance_cost(&self) -> f64 {
        let total: usize = self
            .landmarks
            .iter()
            .map(|&(lx, ly)| {
                self.agents
                    .iter()
                    .map(|&(ax, ay)| ax.abs_diff(lx) + ay.abs_diff(ly))
                    .min()
                    .unwrap_or(0)
            })
            .sum();
        total as f64 / self.spec.normalizer()
    }

    /// Landmarks occupied by exactly one agent.
    pub fn covered(&self) -> usize {
        self.landmarks
            .iter()
            .filter(|l| self.agents.iter().filter(|a| a == l).count() == 1)
            .count()
    }

    fn observe(&self, reward: f64, terminated: bool) -> StepResult {
        let (w, h) = ((self.spec.width - 1) as f64, (self.spec.height - 1) as f64);
        let n = self.spec.n_agents;
        let time = self.t as f64 / self.spec.horizon as f64;
        let observations = (0..n)
            .map(|k| {
                let (x, y) = self.agents[k];
                let (xf, yf) = (x as f64, y as f64);
                let mut o = vec![xf / w, yf / h];
                for &(lx, ly) in &self.landmarks {
                    o.push((lx as f64 - xf) / w);
                    o.push((ly as f64 - yf) / h);
                }
                for (j, &(ox, oy)) in self.agents.iter().enumerate() {
                    if j != k {
                        o.push((ox as f64 - xf) / w);
                        o.push((oy as f64 - yf) / h);
                    }
                }
                o.push(time);
                append_agent_id(o, k, n)
            })
            .collect();
        let mut state = Vec::with_capacity(self.state_dim());
        for &(x, y) in self.agents.iter().chain(&self.landmarks) {
            state.push(x as f64 / w);
            state.push(y as f64 / h);
        }
        state.push(time);
        StepResult {
            observations,
            state,
            reward,
            terminated,
            avail_actions: vec![vec![true; SPREAD_ACTIONS.len()]; n],
        }
    }
}

impl Environment for SpreadGrid {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        SPREAD_ACTIONS.len()
    }

    fn obs_dim(&self) -> usize {
        let n = self.spec.n_agents;
        2 + 2 * n + 2 * (n - 1) + 1 + n
    }

    fn state_dim(&self) -> usize {
        4 * self.spec.n_agents + 1
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Shuffles all cells with the seeded RNG: the first `n` become landmarks,
    /// the next `n` agent starts.
    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells: Vec<(usize, usize)> = (0..self.spec.height)
            .flat_map(|y| (0..self.spec.width).map(move |x| (x, y)))
            .collect();
        cells.shuffle(&mut rng);
        let n = self.spec.n_agents;
        self.landmarks = cells[..n].to_vec();
        self.agents = cells[n..2 * n].to_vec();
        self.t = 0;
        self.covered_at_end = None;
        self.observe(0.0, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.t >= self.spec.horizon || self.agents.is_empty() {
            return Err(contract("step outside an episode"));
        }
        let avail = vec![vec![true; SPREAD_ACTIONS.len()]; self.spec.n_agents];
        check_joint_action(joint_action, &avail, SPREAD_ACTIONS.len())?;
        for (pos, &u) in self.agents.iter_mut().zip(joint_action) {
            let (x, y) = *pos;
            *pos = match u {
                0 => (x, y.saturating_sub(1)),
                1 => (x, (y + 1).min(self.spec.height - 1)),
                2 => (x.saturating_sub(1), y),
                3 => ((x + 1).min(self.spec.width - 1), y),
                _ => (x, y),
            };
        }
        self.t += 1;
        let terminated = self.t == self.spec.horizon;
        let mut reward = -self.distance_cost();
        if terminated {
            let c = self.covered();
            self.covered_at_end = Some(c);
            reward += c as f64;
        }
        Ok(self.observe(reward, terminated))
    }

    fn solved(&self) -> Option<bool> {
        self.covered_at_end.map(|c| c == self.spec.n_agents)
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
