//! Episodic FIFO replay with padded, time-major batches.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};

pub const DEFAULT_CAPACITY: usize = 5000;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// One episode of length `L`. Observation-side arrays carry `L + 1` entries
/// (the final entry is the post-terminal observation); action-side arrays carry `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// `[t][agent][feature]`, agent-id suffix included.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `[t][feature]`.
    pub state: Vec<Vec<f64>>,
    /// `[t][agent][action]`.
    pub avail: Vec<Vec<Vec<bool>>>,
    /// `[t][agent]`, executed actions.
    pub actions: Vec<Vec<usize>>,
    pub reward: Vec<f64>,
    pub terminated: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.first().map_or(0, Vec::len)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.first().and_then(|o| o.first()).map_or(0, Vec::len)
    }

    pub fn state_dim(&self) -> usize {
        self.state.first().map_or(0, Vec::len)
    }

    pub fn n_actions(&self) -> usize {
        self.avail.first().and_then(|a| a.first()).map_or(0, Vec::len)
    }

    pub fn total_reward(&self) -> f64 {
        self.reward.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if l == 0 {
            return Err(contract("episode has no steps"));
        }
        if self.obs.len() != l + 1 || self.state.len() != l + 1 || self.avail.len() != l + 1 {
            return Err(contract(format!(
                "episode of length {l} needs {} obs/state/avail entries, got {}/{}/{}",
                l + 1,
                self.obs.len(),
                self.state.len(),
                self.avail.len()
            )));
        }
        if self.reward.len() != l || self.terminated.len() != l {
            return Err(contract("reward/terminated length differs from action length"));
        }
        if self.terminated[..l - 1].iter().any(|&t| t) || !self.terminated[l - 1] {
            return Err(contract("episode must have exactly one terminal step, at the end"));
        }
        let (n, d, sd, nu) = (self.n_agents(), self.obs_dim(), self.state_dim(), self.n_actions());
        if n == 0 || d == 0 || nu == 0 {
            return Err(contract("episode has empty agent, observation or action dimension"));
        }
        for t in 0..=l {
            if self.obs[t].len() != n || self.obs[t].iter().any(|o| o.len() != d) {
                return Err(contract(format!("ragged observations at step {t}")));
            }
            if self.state[t].len() != sd {
                return Err(contract(format!("ragged state at step {t}")));
            }
            if self.avail[t].len() != n || self.avail[t].iter().any(|a| a.len() != nu) {
                return Err(contract(format!("ragged availability at step {t}")));
            }
            let finite = self.obs[t].iter().flatten().chain(&self.state[t]).all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite { op: "episode" });
            }
        }
        for t in 0..l {
            if self.actions[t].len() != n {
                return Err(contract(format!("step {t} has {} actions for {n} agents", self.actions[t].len())));
            }
            for (k, &u) in self.actions[t].iter().enumerate() {
                if u >= nu || !self.avail[t][k][u] {
                    return Err(contract(format!("step {t}: agent {k} executed unavailable action {u}")));
                }
            }
            if !self.reward[t].is_finite() {
                return Err(Error::NonFinite { op: "episode" });
            }
        }
        Ok(())
    }
}

/// `B` episodes padded to the longest one, laid out time-major.
///
/// Agent rows inside a timestep are ordered `b·n + k`. Padded positions carry
/// zero features, action 0, all actions available and `valid = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub batch_size: usize,
    pub max_len: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub lengths: Vec<usize>,
    /// `max_len + 1` tensors of shape `B·n × obs_dim`.
    pub obs: Vec<Tensor>,
    /// `max_len + 1` tensors of shape `B × state_dim`.
    pub state: Vec<Tensor>,
    /// `[t][(b·n + k)·|U| + u]`, `max_len + 1` entries.
    pub avail: Vec<Vec<bool>>,
    /// `[t][b·n + k]`, `max_len` entries.
    pub actions: Vec<Vec<usize>>,
    /// `[t][b]`.
    pub reward: Vec<Vec<f64>>,
    pub terminated: Vec<Vec<bool>>,
    pub valid: Vec<Vec<bool>>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&Episode]) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| contract("cannot batch zero episodes"))?;
        let (n, d, sd, nu) = (first.n_agents(), first.obs_dim(), first.state_dim(), first.n_actions());
        for e in episodes {
            e.validate()?;
            if (e.n_agents(), e.obs_dim(), e.state_dim(), e.n_actions()) != (n, d, sd, nu) {
                return Err(contract("episodes in a batch must share dimensions"));
            }
        }
        let b = episodes.len();
        let lengths: Vec<usize> = episodes.iter().map(|e| e.len()).collect();
        let max_len = *lengths.iter().max().expect("non-empty");

        let mut obs = Vec::with_capacity(max_len + 1);
        let mut state = Vec::with_capacity(max_len + 1);
        let mut avail = Vec::with_capacity(max_len + 1);
        for t in 0..=max_len {
            let mut o = Vec::with_capacity(b * n * d);
            let mut s = Vec::with_capacity(b * sd);
            let mut a = Vec::with_capacity(b * n * nu);
            for e in episodes {
                if t <= e.len() {
                    e.obs[t].iter().for_each(|row| o.extend_from_slice(row));
                    s.extend_from_slice(&e.state[t]);
                    e.avail[t].iter().for_each(|row| a.extend_from_slice(row));
                } else {
                    o.resize(o.len() + n * d, 0.0);
                    s.resize(s.len() + sd, 0.0);
                    a.resize(a.len() + n * nu, true);
                }
            }
            obs.push(Tensor::matrix(b * n, d, o)?);
            state.push(Tensor::matrix(b, sd, s)?);
            avail.push(a);
        }

        let mut actions = Vec::with_capacity(max_len);
        let mut reward = Vec::with_capacity(max_len);
        let mut terminated = Vec::with_capacity(max_len);
        let mut valid = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let mut act = Vec::with_capacity(b * n);
            for e in episodes {
                match e.actions.get(t) {
                    Some(row) => act.extend_from_slice(row),
                    None => act.resize(act.len() + n, 0),
                }
            }
            actions.push(act);
            reward.push(episodes.iter().map(|e| e.reward.get(t).copied().unwrap_or(0.0)).collect());
            terminated.push(episodes.iter().map(|e| e.terminated.get(t).copied().unwrap_or(false)).collect());
            valid.push(episodes.iter().map(|e| t < e.len()).collect());
        }
        Ok(Self {
            batch_size: b,
            max_len,
            n_agents: n,
            n_actions: nu,
            lengths,
            obs,
            state,
            avail,
            actions,
            reward,
            terminated,
            valid,
        })
    }

    pub fn valid_steps(&self) -> usize {
        self.valid.iter().flatten().filter(|&&v| v).count()
    }

    /// `B·n × |U|` one-hot of the actions executed at `t − 1` (zeros at `t = 0`).
    pub fn prev_action_onehot(&self, t: usize) -> Tensor {
        let rows = self.batch_size * self.n_agents;
        let mut data = vec![0.0; rows * self.n_actions];
        if t > 0 {
            for (r, &u) in self.actions[t - 1].iter().enumerate() {
                data[r * self.n_actions + u] = 1.0;
            }
        }
        Tensor::new(&[rows, self.n_actions], data).expect("consistent dims")
    }

    /// Availability of agent row `r` at time `t`.
    pub fn avail_row(&self, t: usize, r: usize) -> &[bool] {
        &self.avail[t][r * self.n_actions..(r + 1) * self.n_actions]
    }
}

/// Bounded FIFO of episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig {
                field: "buffer_capacity".into(),
                message: "must be positive".into(),
            });
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Episode> {
        self.episodes.get(i)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn push_episode(&mut self, episode: Episode) -> Result<()> {
        episode.validate()?;
        if let Some(front) = self.episodes.front() {
            let same = (front.n_agents(), front.obs_dim(), front.state_dim(), front.n_actions())
                == (episode.n_agents(), episode.obs_dim(), episode.state_dim(), episode.n_actions());
            if !same {
                return Err(contract("episode dimensions differ from buffer contents"));
            }
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// Indices drawn uniformly without replacement, in draw order.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(contract("batch size must be positive"));
        }
        if self.len() < batch_size {
            return Err(Error::NotReady {
                available: self.len(),
                required: batch_size,
            });
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let (picked, _) = idx.partial_shuffle(rng, batch_size);
        Ok(picked.to_vec())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<EpisodeBatch> {
        let idx = self.sample_indices(batch_size, rng)?;
        let picked: Vec<&Episode> = idx.iter().map(|&i| &self.episodes[i]).collect();
        EpisodeBatch::from_episodes(&picked)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two agents, three actions, one-feature observations tagged with `tag`.
    pub(crate) fn toy_episode(len: usize, tag: f64) -> Episode {
        Episode {
            obs: (0..=len).map(|t| vec![vec![tag, t as f64]; 2]).collect(),
            state: (0..=len).map(|t| vec![tag + t as f64]).collect(),
            avail: vec![vec![vec![true; 3]; 2]; len + 1],
            actions: (0..len).map(|t| vec![t % 3, (t + 1) % 3]).collect(),
            reward: (0..len).map(|t| t as f64 - tag).collect(),
            terminated: (0..len).map(|t| t + 1 == len).collect(),
        }
    }

    #[test]
    fn push_to_empty() {
        let mut buf = ReplayBuffer::new(DEFAULT_CAPACITY).unwrap();
        buf.push_episode(toy_episode(3, 0.0)).unwrap();
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn fifo_at_capacity() {
        let mut buf = ReplayBuffer::new(DEFAULT_CAPACITY).unwrap();
        for i in 0..=DEFAULT_CAPACITY {
            buf.push_episode(toy_episode(1, i as f64)).unwrap();
        }
        assert_eq!(buf.len(), 5000);
        assert_eq!(buf.get(0).unwrap().obs[0][0][0], 1.0);
        assert_eq!(buf.get(4999).unwrap().obs[0][0][0], 5000.0);
    }

    #[test]
    fn stored_episode_round_trips() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        let e = toy_episode(4, 0.25);
        buf.push_episode(e.clone()).unwrap();
        assert_eq!(buf.get(0).unwrap(), &e);
    }

    #[test]
    fn malformed_episodes_are_rejected() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        let mut e = toy_episode(3, 0.0);
        e.terminated[0] = true;
        assert!(buf.push_episode(e).is_err());
        let mut e = toy_episode(3, 0.0);
        e.obs.pop();
        assert!(buf.push_episode(e).is_err());
        let mut e = toy_episode(3, 0.0);
        e.avail[1][0][1] = false;
        e.actions[1][0] = 1;
        assert!(buf.push_episode(e).is_err());
    }

    #[test]
    fn exhaustive_draw_is_a_permutation() {
        let mut buf = ReplayBuffer::new(64).unwrap();
        for i in 0..32 {
            buf.push_episode(toy_episode(1, i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = buf.sample_indices(32, &mut rng).unwrap();
        assert_ne!(idx, (0..32).collect::<Vec<_>>());
        idx.sort_unstable();
        assert_eq!(idx, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn not_ready_below_batch_size() {
        let mut buf = ReplayBuffer::new(64).unwrap();
        buf.push_episode(toy_episode(2, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample_batch(32, &mut rng),
            Err(Error::NotReady { available: 1, required: 32 })
        ));
    }

    #[test]
    fn sampling_frequency_is_uniform() {
        // χ² goodness of fit, 39 degrees of freedom; 62.43 is the 0.99 quantile.
        let mut buf = ReplayBuffer::new(64).unwrap();
        for i in 0..40 {
            buf.push_episode(toy_episode(1, i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 40];
        let draws = 10_000;
        for _ in 0..draws {
            for i in buf.sample_indices(4, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = (draws * 4) as f64 / 40.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 62.43, "χ² = {chi2}");
    }

    #[test]
    fn padding_layout() {
        let (a, b) = (toy_episode(2, 1.0), toy_episode(4, 2.0));
        let batch = EpisodeBatch::from_episodes(&[&a, &b]).unwrap();
        assert_eq!(batch.max_len, 4);
        assert_eq!(batch.obs.len(), 5);
        assert_eq!(batch.obs[3].shape(), &[4, 2]);
        assert_eq!(batch.obs[3].row(0), &[0.0, 0.0]);
        assert_eq!(batch.obs[3].row(2), &[2.0, 3.0]);
        assert_eq!(batch.prev_action_onehot(1).row(3), &[0.0, 1.0, 0.0]);
        assert_eq!(batch.prev_action_onehot(0).data().iter().sum::<f64>(), 0.0);
    }

    proptest! {
        #[test]
        fn mask_matches_lengths(lens in proptest::collection::vec(1usize..9, 1..6)) {
            let eps: Vec<Episode> = lens.iter().map(|&l| toy_episode(l, 0.5)).collect();
            let refs: Vec<&Episode> = eps.iter().collect();
            let batch = EpisodeBatch::from_episodes(&refs).unwrap();
            for (b, &l) in lens.iter().enumerate() {
                let count = (0..batch.max_len).filter(|&t| batch.valid[t][b]).count();
                prop_assert_eq!(count, l);
                for t in 0..batch.max_len {
                    prop_assert_eq!(batch.valid[t][b], t < l);
                }
            }
            prop_assert_eq!(batch.valid_steps(), lens.iter().sum::<usize>());
        }

        #[test]
        fn seeded_sampling_is_deterministic(seed in any::<u64>()) {
            let mut buf = ReplayBuffer::new(16).unwrap();
            for i in 0..16 {
                buf.push_episode(toy_episode(1 + i % 3, i as f64)).unwrap();
            }
            let a = buf.sample_batch(8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = buf.sample_batch(8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
