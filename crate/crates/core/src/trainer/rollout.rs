use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::air_explore::{select_action, shaped_q};
use crate::autodiff::{ParamStore, Tensor};
use crate::env::{strip_agent_id, Environment, StepResult};
use crate::error::{contract, Result};
use crate::identity_classifier::ClassifierNet;
use crate::replay::Episode;
use crate::value_decomposition::ValueNets;

/// SplitMix64 finaliser folded over `parts`.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut x: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        x = x.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// Seed of episode `index` within `iteration`; independent of worker layout.
pub fn episode_seed(run_seed: u64, iteration: u64, index: usize) -> u64 {
    mix_seed(&[run_seed, iteration, index as u64])
}

/// Read-only snapshot that drives behaviour during collection.
#[derive(Clone, Copy)]
pub struct BehaviourPolicy<'a> {
    pub nets: &'a ValueNets,
    pub theta: &'a ParamStore,
    /// Classifier consulted for shaping; `None` means plain ε-greedy on Q.
    pub classifier: Option<(&'a ClassifierNet, &'a ParamStore)>,
    /// One shared temperature or one per agent.
    pub alphas: &'a [f64],
    pub epsilon: f64,
}

fn onehot_rows(actions: &[usize], n_actions: usize) -> Tensor {
    let mut data = vec![0.0; actions.len() * n_actions];
    for (r, &u) in actions.iter().enumerate() {
        data[r * n_actions + u] = 1.0;
    }
    Tensor::new(&[actions.len(), n_actions], data).expect("consistent dims")
}

fn obs_tensor(step: &StepResult) -> Result<Tensor> {
    Tensor::from_rows(&step.observations)
}

/// Plays one episode. The environment is reset with a seed derived from
/// `seed`, and action sampling uses its own stream derived from the same seed.
pub fn run_episode(env: &mut dyn Environment, policy: &BehaviourPolicy<'_>, seed: u64) -> Result<Episode> {
    let n = env.n_agents();
    let nu = env.n_actions();
    if policy.alphas.len() != 1 && policy.alphas.len() != n {
        return Err(contract(format!("{} temperatures for {n} agents", policy.alphas.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1]));
    let mut current = env.reset(mix_seed(&[seed, 0]));

    let agent = &policy.nets.agent;
    let mut h = agent.initial_hidden(n);
    let mut hc = policy.classifier.map(|(c, _)| c.initial_hidden(n));
    let mut prev = Tensor::zeros(&[n, nu]);

    let mut ep = Episode {
        obs: Vec::new(),
        state: Vec::new(),
        avail: Vec::new(),
        actions: Vec::new(),
        reward: Vec::new(),
        terminated: Vec::new(),
    };
    for _ in 0..env.horizon() {
        let obs = obs_tensor(&current)?;
        let (q, h2) = agent.evaluate(policy.theta, &obs, &prev, &h)?;
        h = h2;
        let log_q = match (policy.classifier, hc.as_ref()) {
            (Some((clf, zeta)), Some(hidden)) => {
                let stripped: Vec<Vec<f64>> =
                    current.observations.iter().map(|o| strip_agent_id(o, n).to_vec()).collect();
                let (lq, h3) = clf.evaluate(zeta, &Tensor::from_rows(&stripped)?, &prev, hidden)?;
                hc = Some(h3);
                Some(lq)
            }
            _ => None,
        };
        let mut joint = Vec::with_capacity(n);
        for k in 0..n {
            let row: Vec<f64> = match &log_q {
                Some(lq) => (0..nu).map(|u| lq.row(k)[u * n + k]).collect(),
                None => vec![0.0; nu],
            };
            let alpha = policy.alphas[if policy.alphas.len() == 1 { 0 } else { k }];
            let shaped = shaped_q(q.row(k), &row, alpha, &current.avail_actions[k])?;
            joint.push(select_action(&shaped, policy.epsilon, &mut rng)?);
        }
        let next = env.step(&joint)?;
        ep.obs.push(current.observations);
        ep.state.push(current.state);
        ep.avail.push(current.avail_actions);
        ep.actions.push(joint.clone());
        ep.reward.push(next.reward);
        ep.terminated.push(next.terminated);
        prev = onehot_rows(&joint, nu);
        let done = next.terminated;
        current = next;
        if done {
            break;
        }
    }
    if ep.terminated.last() != Some(&true) {
        return Err(contract("environment did not terminate within its horizon"));
    }
    ep.obs.push(current.observations);
    ep.state.push(current.state);
    ep.avail.push(current.avail_actions);
    Ok(ep)
}

/// Plays one episode per seed, spreading them over `workers` threads.
/// Output order follows `seeds` regardless of the worker count.
pub fn collect_episodes(
    env: &dyn Environment,
    policy: &BehaviourPolicy<'_>,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<Episode>> {
    let workers = workers.clamp(1, seeds.len().max(1));
    if workers == 1 {
        let mut env = env.boxed_clone();
        return seeds.iter().map(|&s| run_episode(env.as_mut(), policy, s)).collect();
    }
    let chunk = seeds.len().div_ceil(workers);
    let envs: Vec<Box<dyn Environment>> = (0..workers).map(|_| env.boxed_clone()).collect();
    let results: Vec<Result<Vec<Episode>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .zip(envs)
            .map(|(part, mut env)| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&s| run_episode(env.as_mut(), policy, s))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(seeds.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
