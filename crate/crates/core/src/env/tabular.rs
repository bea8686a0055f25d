use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{append_agent_id, check_joint_action, joint_index, Environment, StepResult};
use crate::error::{contract, Error, Result};

pub const TABULAR_FORMAT: &str = "air-tabular-v1";
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;
const ROW_TOLERANCE: f64 = 1e-12;

/// Fully enumerable Dec-POMDP.
///
/// Tables use joint-action indexing with agent 0 most significant.
/// Observations are emitted from the current state: `o_t ~ O(·|s_t, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDecPomdp {
    pub n_agents: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// `P(s_0)`.
    pub initial: Vec<f64>,
    /// `[s][joint][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[agent][s][o]`.
    pub observation: Vec<Vec<Vec<f64>>>,
    /// `[s][joint]`.
    pub reward: Vec<Vec<f64>>,
}

/// On-disk layout: the spec plus a format tag and a SHA-256 of its tables.
#[derive(Serialize, Deserialize)]
struct TabularFile {
    format: String,
    checksum: String,
    #[serde(flatten)]
    spec: TabularDecPomdp,
}

fn check_distribution(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidSpec(format!("{what}: {} entries, expected {len}", row.len())));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidSpec(format!("{what}: entries must be finite and non-negative")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::InvalidSpec(format!("{what}: sums to {total}, expected 1")));
    }
    Ok(())
}

impl TabularDecPomdp {
    pub fn n_joint(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_states == 0 || self.n_actions == 0 || self.n_obs == 0 {
            return Err(Error::InvalidSpec("all dimensions must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        let nj = self.n_joint();
        check_distribution(&self.initial, self.n_states, "initial")?;
        if self.transition.len() != self.n_states {
            return Err(Error::InvalidSpec("transition needs one block per state".into()));
        }
        for (s, block) in self.transition.iter().enumerate() {
            if block.len() != nj {
                return Err(Error::InvalidSpec(format!("transition[{s}] needs {nj} joint-action rows")));
            }
            for (j, row) in block.iter().enumerate() {
                check_distribution(row, self.n_states, &format!("transition[{s}][{j}]"))?;
            }
        }
        if self.observation.len() != self.n_agents {
            return Err(Error::InvalidSpec("observation needs one block per agent".into()));
        }
        for (k, block) in self.observation.iter().enumerate() {
            if block.len() != self.n_states {
                return Err(Error::InvalidSpec(format!("observation[{k}] needs one row per state")));
            }
            for (s, row) in block.iter().enumerate() {
                check_distribution(row, self.n_obs, &format!("observation[{k}][{s}]"))?;
            }
        }
        if self.reward.len() != self.n_states || self.reward.iter().any(|r| r.len() != nj) {
            return Err(Error::InvalidSpec(format!("reward must be {} × {nj}", self.n_states)));
        }
        if self.reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::InvalidSpec("rewards must be finite".into()));
        }
        Ok(())
    }

    /// True when every agent has the same observation function.
    pub fn has_shared_observations(&self) -> bool {
        self.observation.windows(2).all(|w| w[0] == w[1])
    }

    /// SHA-256 over the dimensions and every table entry as little-endian bytes,
    /// in the order initial, transition, observation, reward.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in [self.n_agents, self.n_states, self.n_actions, self.n_obs, self.horizon] {
            h.update((d as u64).to_le_bytes());
        }
        h.update(self.gamma.to_le_bytes());
        let mut feed = |v: &f64| h.update(v.to_le_bytes());
        self.initial.iter().for_each(&mut feed);
        self.transition.iter().flatten().flatten().for_each(&mut feed);
        self.observation.iter().flatten().flatten().for_each(&mut feed);
        self.reward.iter().flatten().for_each(&mut feed);
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TabularFile {
            format: TABULAR_FORMAT.to_string(),
            checksum: self.checksum(),
            spec: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TabularFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("parse error: {e}")))?;
        if file.format != TABULAR_FORMAT {
            return Err(Error::InvalidSpec(format!(
                "format `{}`, expected `{TABULAR_FORMAT}`",
                file.format
            )));
        }
        file.spec.validate()?;
        let actual = file.spec.checksum();
        if actual != file.checksum {
            return Err(Error::InvalidSpec(format!(
                "checksum mismatch: header {}, tables {actual}",
                file.checksum
            )));
        }
        Ok(file.spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// `|S|^T · |U|^(nT) · |O|^T`, saturating.
    pub fn enumeration_size(&self) -> u128 {
        let t = self.horizon as u32;
        let pow = |b: usize, e: u32| (b as u128).checked_pow(e).unwrap_or(u128::MAX);
        pow(self.n_states, t)
            .saturating_mul(pow(self.n_actions, self.n_agents as u32 * t))
            .saturating_mul(pow(self.n_obs, t))
    }
}

/// Reactive policy `π(u | o)` for one agent, `[o][u]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = probs.first().map_or(0, Vec::len);
        for (o, row) in probs.iter().enumerate() {
            check_distribution(row, n_actions, &format!("policy row {o}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_obs: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_obs],
        }
    }

    /// Always plays `action`.
    pub fn deterministic(n_obs: usize, n_actions: usize, action: usize) -> Self {
        let row = (0..n_actions).map(|u| if u == action { 1.0 } else { 0.0 }).collect();
        Self {
            probs: vec![row; n_obs],
        }
    }

    /// Row-wise softmax of `logits[o][u]`.
    pub fn softmax(logits: &[Vec<f64>]) -> Self {
        let probs = logits
            .iter()
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        Self { probs }
    }

    pub fn prob(&self, obs: usize, action: usize) -> f64 {
        self.probs[obs][action]
    }

    fn check_against(&self, spec: &TabularDecPomdp) -> Result<()> {
        if self.probs.len() != spec.n_obs || self.probs.iter().any(|r| r.len() != spec.n_actions) {
            return Err(contract(format!(
                "policy must be {} × {}",
                spec.n_obs, spec.n_actions
            )));
        }
        Ok(())
    }
}

/// One agent's observation–action sequence `(o_0, u_0, …, o_{T-1}, u_{T-1})`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrajKey {
    pub steps: Vec<(usize, usize)>,
}

/// Probability structure of one trajectory key.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportRecord {
    pub key: TrajKey,
    /// Per agent: `Π_t π^k(u_t|o_t) Σ_s P(s_t) O(o_t|s_t,k)` (per-step state marginals).
    pub factorized: Vec<f64>,
    /// Per agent: exact probability that agent `k` experiences this sequence
    /// under the joint dynamics, with other agents marginalized.
    pub exact: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    /// `P(s_t)` for `t = 0..T`, forward-filtered under the joint policy.
    pub state_marginals: Vec<Vec<f64>>,
    /// Every key in lexicographic order.
    pub records: Vec<SupportRecord>,
}

/// `p_k(u | s) = Σ_o O(o|s,k) π^k(u|o)`.
fn action_given_state(spec: &TabularDecPomdp, policies: &[TabularPolicy]) -> Vec<Vec<Vec<f64>>> {
    (0..spec.n_agents)
        .map(|k| {
            (0..spec.n_states)
                .map(|s| {
                    (0..spec.n_actions)
                        .map(|u| {
                            (0..spec.n_obs)
                                .map(|o| spec.observation[k][s][o] * policies[k].prob(o, u))
                                .sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Enumerates every single-agent trajectory key with its per-agent masses.
pub fn enumerate_support(
    spec: &TabularDecPomdp,
    policies: &[TabularPolicy],
    budget: u128,
) -> Result<Support> {
    spec.validate()?;
    if policies.len() != spec.n_agents {
        return Err(contract(format!(
            "{} policies for {} agents",
            policies.len(),
            spec.n_agents
        )));
    }
    for p in policies {
        p.check_against(spec)?;
    }
    let size = spec.enumeration_size();
    if size > budget {
        return Err(Error::Budget { size, budget });
    }

    let (ns, nu, no, n, horizon) = (spec.n_states, spec.n_actions, spec.n_obs, spec.n_agents, spec.horizon);
    let act = action_given_state(spec, policies);

    // P(s') = Σ_s P(s) Σ_joint Π_k p_k(u_k|s) P(s'|s, joint)
    let mut marginals = vec![spec.initial.clone()];
    for _ in 1..horizon {
        let prev = marginals.last().expect("non-empty");
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for j in 0..spec.n_joint() {
                let joint = super::joint_actions(j, n, nu);
                let pj: f64 = joint.iter().enumerate().map(|(k, &u)| act[k][s][u]).product();
                let w = prev[s] * pj;
                if w == 0.0 {
                    continue;
                }
                for (acc, p) in next.iter_mut().zip(&spec.transition[s][j]) {
                    *acc += w * p;
                }
            }
        }
        marginals.push(next);
    }

    // m_t^k(o) = Σ_s P(s_t) O(o|s,k)
    let obs_marginal: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|k| {
            marginals
                .iter()
                .map(|pm| (0..no).map(|o| (0..ns).map(|s| pm[s] * spec.observation[k][s][o]).sum()).collect())
                .collect()
        })
        .collect();

    // kernel[k][s][u][s'] = Σ_{u_-k} Π_{j≠k} p_j(u_j|s) P(s'|s, u⃗) with u_k = u
    let kernel: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
        .map(|k| {
            (0..ns)
                .map(|s| {
                    let mut rows = vec![vec![0.0; ns]; nu];
                    for j in 0..spec.n_joint() {
                        let joint = super::joint_actions(j, n, nu);
                        let w: f64 = joint
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != k)
                            .map(|(i, &u)| act[i][s][u])
                            .product();
                        for (acc, p) in rows[joint[k]].iter_mut().zip(&spec.transition[s][j]) {
                            *acc += w * p;
                        }
                    }
                    rows
                })
                .collect()
        })
        .collect();

    let count = (no * nu).pow(horizon as u32);
    let mut records = Vec::with_capacity(count);
    let mut digits = vec![(0usize, 0usize); horizon];
    for _ in 0..count {
        let key = TrajKey {
            steps: digits.clone(),
        };
        let mut factorized = Vec::with_capacity(n);
        let mut exact = Vec::with_capacity(n);
        for k in 0..n {
            let mut f = 1.0;
            for (t, &(o, u)) in digits.iter().enumerate() {
                f *= policies[k].prob(o, u) * obs_marginal[k][t][o];
            }
            factorized.push(f);

            let mut alpha = spec.initial.clone();
            for (t, &(o, u)) in digits.iter().enumerate() {
                let pi = policies[k].prob(o, u);
                for (s, a) in alpha.iter_mut().enumerate() {
                    *a *= spec.observation[k][s][o] * pi;
                }
                if t + 1 < horizon {
                    let mut next = vec![0.0; ns];
                    for (s, a) in alpha.iter().enumerate() {
                        if *a == 0.0 {
                            continue;
                        }
                        for (acc, p) in next.iter_mut().zip(&kernel[k][s][u]) {
                            *acc += a * p;
                        }
                    }
                    alpha = next;
                }
            }
            exact.push(alpha.iter().sum());
        }
        records.push(SupportRecord {
            key,
            factorized,
            exact,
        });
        // increment (o_0, u_0, …) odometer, last step fastest
        for slot in digits.iter_mut().rev() {
            slot.1 += 1;
            if slot.1 < nu {
                break;
            }
            slot.1 = 0;
            slot.0 += 1;
            if slot.0 < no {
                break;
            }
            slot.0 = 0;
        }
    }
    Ok(Support {
        state_marginals: marginals,
        records,
    })
}

/// Simulator over a [`TabularDecPomdp`]: one-hot observations (plus id), one-hot state.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    spec: TabularDecPomdp,
    state: usize,
    t: usize,
    rng: ChaCha8Rng,
}

fn sample(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl TabularEnv {
    pub fn new(spec: TabularDecPomdp) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: 0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn spec(&self) -> &TabularDecPomdp {
        &self.spec
    }

    fn observe(&mut self, reward: f64, terminated: bool) -> StepResult {
        let n = self.spec.n_agents;
        let observations = (0..n)
            .map(|k| {
                let o = sample(&self.spec.observation[k][self.state], &mut self.rng);
                let onehot = (0..self.spec.n_obs).map(|i| if i == o { 1.0 } else { 0.0 }).collect();
                append_agent_id(onehot, k, n)
            })
            .collect();
        StepResult {
            observations,
            state: (0..self.spec.n_states).map(|i| if i == self.state { 1.0 } else { 0.0 }).collect(),
            reward,
            terminated,
            avail_actions: vec![vec![true; self.spec.n_actions]; n],
        }
    }
}

impl Environment for TabularEnv {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn obs_dim(&self) -> usize {
        self.spec.n_obs + self.spec.n_agents
    }

    fn state_dim(&self) -> usize {
        self.spec.n_states
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.state = sample(&self.spec.initial, &mut self.rng);
        self.observe(0.0, false)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.t >= self.spec.horizon {
            return Err(contract("step after episode end"));
        }
        let avail = vec![vec![true; self.spec.n_actions]; self.spec.n_agents];
        check_joint_action(joint_action, &avail, self.spec.n_actions)?;
        let j = joint_index(joint_action, self.spec.n_actions);
        let reward = self.spec.reward[self.state][j];
        self.state = sample(&self.spec.transition[self.state][j], &mut self.rng);
        self.t += 1;
        let terminated = self.t == self.spec.horizon;
        Ok(self.observe(reward, terminated))
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n_states: usize, n_obs: usize, n_actions: usize, n_agents: usize, horizon: usize) -> TabularDecPomdp {
        let nj = n_actions.pow(n_agents as u32);
        TabularDecPomdp {
            n_agents,
            n_states,
            n_actions,
            n_obs,
            horizon,
            gamma: 0.99,
            initial: {
                let mut v = vec![0.0; n_states];
                v[0] = 1.0;
                v
            },
            transition: vec![vec![vec![1.0 / n_states as f64; n_states]; nj]; n_states],
            observation: vec![vec![vec![1.0 / n_obs as f64; n_obs]; n_states]; n_agents],
            reward: vec![vec![0.0; nj]; n_states],
        }
    }

    fn stochastic_two_state() -> TabularDecPomdp {
        TabularDecPomdp {
            n_agents: 2,
            n_states: 2,
            n_actions: 2,
            n_obs: 2,
            horizon: 3,
            gamma: 0.9,
            initial: vec![0.3, 0.7],
            transition: vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5], vec![0.0, 1.0]],
                vec![vec![0.6, 0.4], vec![1.0, 0.0], vec![0.3, 0.7], vec![0.25, 0.75]],
            ],
            observation: vec![
                vec![vec![0.8, 0.2], vec![0.1, 0.9]],
                vec![vec![0.6, 0.4], vec![0.35, 0.65]],
            ],
            reward: vec![vec![1.0, 0.0, 0.0, 2.0], vec![0.0, -1.0, 3.0, 0.5]],
        }
    }

    #[test]
    fn degenerate_chain_probs_equal_policy() {
        let spec = chain(1, 1, 2, 1, 1);
        let pi = TabularPolicy::new(vec![vec![0.3, 0.7]]).unwrap();
        let sup = enumerate_support(&spec, &[pi], DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(sup.records.len(), 2);
        assert_eq!(sup.records[0].factorized[0], 0.3);
        assert_eq!(sup.records[1].factorized[0], 0.7);
    }

    #[test]
    fn uniform_two_steps_gives_quarters() {
        let spec = chain(1, 1, 2, 1, 2);
        let sup = enumerate_support(&spec, &[TabularPolicy::uniform(1, 2)], DEFAULT_ENUMERATION_BUDGET).unwrap();
        assert_eq!(sup.records.len(), 4);
        for r in &sup.records {
            assert_eq!(r.factorized[0], 0.25);
            assert_eq!(r.exact[0], 0.25);
        }
    }

    #[test]
    fn stochastic_chain_normalizes() {
        let spec = stochastic_two_state();
        let pols = vec![
            TabularPolicy::new(vec![vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap(),
            TabularPolicy::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap(),
        ];
        let sup = enumerate_support(&spec, &pols, DEFAULT_ENUMERATION_BUDGET).unwrap();
        for k in 0..2 {
            let f: f64 = sup.records.iter().map(|r| r.factorized[k]).sum();
            let e: f64 = sup.records.iter().map(|r| r.exact[k]).sum();
            assert!((f - 1.0).abs() < 1e-12, "{f}");
            assert!((e - 1.0).abs() < 1e-12, "{e}");
        }
        for m in &sup.state_marginals {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Brute-force oracle: enumerate full joint histories (states, every
    /// agent's observations and actions) and marginalize onto agent k.
    fn brute_force_exact(spec: &TabularDecPomdp, pols: &[TabularPolicy], k: usize, key: &TrajKey) -> f64 {
        fn rec(
            spec: &TabularDecPomdp,
            pols: &[TabularPolicy],
            k: usize,
            key: &TrajKey,
            t: usize,
            s: usize,
            mass: f64,
        ) -> f64 {
            if mass == 0.0 {
                return 0.0;
            }
            let (n, nu, no) = (spec.n_agents, spec.n_actions, spec.n_obs);
            let (ok, uk) = key.steps[t];
            let mut total = 0.0;
            // every other agent's observation and action
            let others: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            let combos = (no * nu).pow(others.len() as u32);
            for c in 0..combos {
                let mut idx = c;
                let mut joint = vec![0; n];
                let mut w = spec.observation[k][s][ok] * pols[k].prob(ok, uk);
                joint[k] = uk;
                for &i in &others {
                    let (o, u) = ((idx % (no * nu)) / nu, idx % nu);
                    idx /= no * nu;
                    w *= spec.observation[i][s][o] * pols[i].prob(o, u);
                    joint[i] = u;
                }
                if t + 1 == spec.horizon {
                    total += mass * w;
                } else {
                    let j = joint_index(&joint, nu);
                    for s2 in 0..spec.n_states {
                        total += rec(spec, pols, k, key, t + 1, s2, mass * w * spec.transition[s][j][s2]);
                    }
                }
            }
            total
        }
        (0..spec.n_states)
            .map(|s| rec(spec, pols, k, key, 0, s, spec.initial[s]))
            .sum()
    }

    #[test]
    fn exact_law_matches_brute_force_enumeration() {
        let spec = stochastic_two_state();
        let pols = vec![
            TabularPolicy::new(vec![vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap(),
            TabularPolicy::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap(),
        ];
        let sup = enumerate_support(&spec, &pols, DEFAULT_ENUMERATION_BUDGET).unwrap();
        for r in &sup.records {
            for k in 0..2 {
                let bf = brute_force_exact(&spec, &pols, k, &r.key);
                assert!((bf - r.exact[k]).abs() < 1e-14, "{bf} vs {}", r.exact[k]);
            }
        }
    }

    #[test]
    fn budget_refusal_reports_size() {
        let spec = chain(3, 3, 3, 3, 4);
        let pols = vec![TabularPolicy::uniform(3, 3); 3];
        match enumerate_support(&spec, &pols, 1000) {
            Err(Error::Budget { size, budget }) => {
                assert_eq!(size, 81 * 3u128.pow(12) * 81);
                assert_eq!(budget, 1000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_catches_bad_rows() {
        let mut spec = stochastic_two_state();
        spec.transition[1][2] = vec![0.5, 0.6];
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        let mut spec = stochastic_two_state();
        spec.horizon = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_checksum_guard() {
        let spec = stochastic_two_state();
        let text = spec.to_json().unwrap();
        assert_eq!(TabularDecPomdp::from_json(&text).unwrap(), spec);
        let tampered = text.replacen("0.9", "0.8", 1);
        let err = TabularDecPomdp::from_json(&tampered).unwrap_err().to_string();
        assert!(err.contains("checksum") || err.contains("sums"), "{err}");
        assert!(TabularDecPomdp::from_json("{ not json").is_err());
    }

    #[test]
    fn simulator_is_seeded_and_terminates() {
        let mut env = TabularEnv::new(stochastic_two_state()).unwrap();
        let run = |env: &mut TabularEnv| {
            let mut out = vec![env.reset(9)];
            loop {
                let s = env.step(&[1, 0]).unwrap();
                let done = s.terminated;
                out.push(s);
                if done {
                    break;
                }
            }
            out
        };
        let a = run(&mut env);
        assert_eq!(a, run(&mut env));
        assert_eq!(a.len(), 4);
        assert!(env.step(&[0, 0]).is_err());
    }
}
