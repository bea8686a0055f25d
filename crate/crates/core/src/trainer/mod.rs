//! Training loop: collect shaped ε-greedy episodes, then update θ, ζ, H̄ and α.

mod config;
mod rollout;

pub use config::{AirMode, TrainConfig};
pub use rollout::{collect_episodes, episode_seed, mix_seed, run_episode, BehaviourPolicy};

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::air_explore::TemperatureState;
use crate::autodiff::{Adam, ParamStore, Tape, Tensor};
use crate::env::{stripped_obs_dim, Environment};
use crate::error::{Error, Result};
use crate::identity_classifier::{classifier_train_step, ClassifierNet, ClassifierStats};
use crate::nn::checkpoint;
use crate::replay::{Episode, EpisodeBatch, ReplayBuffer};
use crate::value_decomposition::{td_loss, MixerKind, NetWidths, ValueNets};

pub const METRICS_COLUMNS: [&str; 10] = [
    "iter",
    "env_steps",
    "ret_mean",
    "ret_std",
    "td_loss",
    "alpha",
    "h_bar",
    "clf_nll",
    "clf_acc",
    "epsilon",
];

/// One line of the metrics CSV. Update-dependent fields are `None` on
/// iterations that skipped the update.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub env_steps: u64,
    pub ret_mean: f64,
    pub ret_std: f64,
    pub td_loss: Option<f64>,
    pub alpha: f64,
    pub h_bar: f64,
    pub clf_nll: Option<f64>,
    pub clf_acc: Option<f64>,
    pub epsilon: f64,
}

impl MetricsRow {
    pub fn csv_header() -> String {
        METRICS_COLUMNS.join(",")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.env_steps,
            self.ret_mean,
            self.ret_std,
            opt(self.td_loss),
            self.alpha,
            self.h_bar,
            opt(self.clf_nll),
            opt(self.clf_acc),
            self.epsilon
        )
    }
}

/// Greedy evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    /// Fraction of episodes the environment reports as solved (`None` if it never says).
    pub solve_rate: Option<f64>,
}

/// Outcome of a training iteration's update phase.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub td_loss: f64,
    pub classifier: Option<ClassifierStats>,
}

pub struct Trainer {
    pub config: TrainConfig,
    env: Box<dyn Environment>,
    pub nets: ValueNets,
    pub theta: ParamStore,
    pub target: ParamStore,
    theta_opt: Adam,
    pub classifier: ClassifierNet,
    pub zeta: ParamStore,
    zeta_opt: Adam,
    /// Length 1 (shared α) or `n_agents`.
    pub temperatures: Vec<TemperatureState>,
    pub buffer: ReplayBuffer,
    pub iteration: u64,
    pub env_steps: u64,
    pub updates: u64,
}

/// Dimensions a checkpoint must agree with.
fn dims_tensor(env: &dyn Environment) -> Tensor {
    let d = [env.n_agents(), env.obs_dim(), env.state_dim(), env.n_actions()];
    Tensor::new(&[4], d.iter().map(|&v| v as f64).collect()).expect("four dims")
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = config.env.build()?;
        Self::with_env(config, env)
    }

    /// Uses `env` instead of building one from `config.env`.
    pub fn with_env(config: TrainConfig, env: Box<dyn Environment>) -> Result<Self> {
        config.validate()?;
        let (n, nu) = (env.n_agents(), env.n_actions());
        let mut theta = ParamStore::new();
        let mut theta_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x7e7a]));
        let nets = ValueNets::new(
            &mut theta,
            config.mixer,
            n,
            env.obs_dim(),
            env.state_dim(),
            nu,
            config.widths,
            &mut theta_rng,
        )?;
        let mut zeta = ParamStore::new();
        let mut zeta_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x2e7a]));
        let classifier = ClassifierNet::new(
            &mut zeta,
            stripped_obs_dim(env.obs_dim(), n),
            nu,
            n,
            config.classifier_hidden,
            &mut zeta_rng,
        )?;
        let target = theta.frozen_copy();
        let theta_opt = Adam::new(&theta, config.lr);
        let zeta_opt = Adam::new(&zeta, config.classifier_lr);
        let temp = TemperatureState::with(0.0, (n as f64).ln(), config.ema_decay);
        let temperatures = vec![temp; if config.per_agent_alpha { n } else { 1 }];
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        Ok(Self {
            config,
            env,
            nets,
            theta,
            target,
            theta_opt,
            classifier,
            zeta,
            zeta_opt,
            temperatures,
            buffer,
            iteration: 0,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.temperatures.iter().map(|t| t.alpha).collect()
    }

    /// Mean over temperatures (identical to the single value when shared).
    pub fn alpha(&self) -> f64 {
        self.temperatures.iter().map(|t| t.alpha).sum::<f64>() / self.temperatures.len() as f64
    }

    pub fn h_bar(&self) -> f64 {
        self.temperatures.iter().map(|t| t.target_entropy_bar).sum::<f64>() / self.temperatures.len() as f64
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon(self.env_steps)
    }

    /// Collects this iteration's episodes without touching any state.
    pub fn collect(&self, epsilon: f64) -> Result<Vec<Episode>> {
        let alphas = self.alphas();
        let policy = BehaviourPolicy {
            nets: &self.nets,
            theta: &self.theta,
            classifier: self.config.air.trains_classifier().then_some((&self.classifier, &self.zeta)),
            alphas: &alphas,
            epsilon,
        };
        let seeds: Vec<u64> = (0..self.config.episodes_per_iter)
            .map(|i| episode_seed(self.config.seed, self.iteration, i))
            .collect();
        collect_episodes(self.env.as_ref(), &policy, &seeds, self.config.workers)
    }

    /// TD loss of the current θ/θ⁻ on `batch`, without updating.
    pub fn batch_td_loss(&self, batch: &EpisodeBatch) -> Result<f64> {
        let mut tape = Tape::new();
        Ok(td_loss(&mut tape, &self.nets, &self.theta, &self.target, batch, self.config.gamma)?.value)
    }

    /// θ step, then ζ step, then H̄, then α; target sync on schedule.
    pub fn update(&mut self, batch: &EpisodeBatch) -> Result<UpdateStats> {
        let mut tape = Tape::new();
        let td = td_loss(&mut tape, &self.nets, &self.theta, &self.target, batch, self.config.gamma)?;
        self.theta.zero_grad();
        tape.backward(td.loss, &mut [&mut self.theta])?;
        drop(tape);
        if let Some(max) = self.config.grad_clip {
            if !self.theta.clip_grad_norm(max).is_finite() {
                return Err(Error::NonFinite { op: "td_loss gradient" });
            }
        }
        self.theta_opt.step(&mut self.theta)?;
        self.updates += 1;
        if self.updates % self.config.target_update_interval == 0 {
            self.target.copy_from(&self.theta)?;
        }

        let mut classifier = None;
        if self.config.air.trains_classifier() {
            let stats = classifier_train_step(
                &self.classifier,
                &mut self.zeta,
                &mut self.zeta_opt,
                batch,
                self.config.grad_clip,
            )?;
            let shared = self.temperatures.len() == 1;
            for (k, temp) in self.temperatures.iter_mut().enumerate() {
                let nll = if shared { stats.mean_nll } else { stats.per_agent_nll[k] };
                temp.update_target_entropy(nll)?;
                if self.config.air.updates_alpha() {
                    temp.temperature_step_mean(-nll, self.config.alpha_lr)?;
                }
            }
            classifier = Some(stats);
        }
        Ok(UpdateStats {
            td_loss: td.value,
            classifier,
        })
    }

    /// One full cycle: collect, store, and update when the buffer is ready.
    pub fn train_iteration(&mut self) -> Result<MetricsRow> {
        let epsilon = self.epsilon();
        let episodes = self.collect(epsilon)?;
        let returns: Vec<f64> = episodes.iter().map(Episode::total_reward).collect();
        for ep in episodes {
            self.env_steps += ep.len() as u64;
            self.buffer.push_episode(ep)?;
        }
        let mut sample_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.config.seed, self.iteration, 0x5a3b]));
        let stats = match self.buffer.sample_batch(self.config.batch_size, &mut sample_rng) {
            Ok(batch) => Some(self.update(&batch)?),
            Err(Error::NotReady { .. }) => None,
            Err(e) => return Err(e),
        };
        let m = returns.len() as f64;
        let ret_mean = returns.iter().sum::<f64>() / m;
        let ret_std = (returns.iter().map(|r| (r - ret_mean).powi(2)).sum::<f64>() / m).sqrt();
        let clf = stats.as_ref().and_then(|s| s.classifier.as_ref());
        let row = MetricsRow {
            iter: self.iteration,
            env_steps: self.env_steps,
            ret_mean,
            ret_std,
            td_loss: stats.as_ref().map(|s| s.td_loss),
            alpha: self.alpha(),
            h_bar: self.h_bar(),
            clf_nll: clf.map(|c| c.mean_nll),
            clf_acc: clf.map(|c| c.accuracy),
            epsilon,
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Greedy rollouts on Q without shaping. Mutates nothing.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalReport> {
        evaluate_greedy(self.env.as_ref(), &self.nets, &self.theta, episodes, seed)
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("meta.dims".to_string(), dims_tensor(self.env.as_ref()))];
        for (prefix, store) in [("theta", &self.theta), ("target", &self.target), ("zeta", &self.zeta)] {
            out.extend(store.iter().map(|(name, t)| (format!("{prefix}.{name}"), t.clone())));
        }
        out.extend(self.theta_opt.export(&self.theta, "opt_theta"));
        out.extend(self.zeta_opt.export(&self.zeta, "opt_zeta"));
        for (k, t) in self.temperatures.iter().enumerate() {
            out.push((format!("temp.{k}.alpha"), Tensor::scalar(t.alpha)));
            out.push((format!("temp.{k}.h_bar"), Tensor::scalar(t.target_entropy_bar)));
        }
        for (name, v) in [("iteration", self.iteration), ("env_steps", self.env_steps), ("updates", self.updates)] {
            out.push((format!("counter.{name}"), Tensor::scalar(v as f64)));
        }
        out
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let entries = self.checkpoint_entries();
        checkpoint::encode(entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    /// Restores networks, optimizers, temperatures and counters. The replay
    /// buffer is not part of a checkpoint. Nothing changes on error.
    pub fn restore(&mut self, bytes: &[u8]) -> Result<()> {
        let map = checkpoint::decode_map(bytes)?;
        let expected: HashMap<String, usize> =
            self.checkpoint_entries().into_iter().map(|(n, t)| (n, t.len())).collect();
        if let Some(extra) = map.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        let dims = map.get("meta.dims").ok_or_else(|| Error::Checkpoint("missing meta.dims".into()))?;
        if dims != &dims_tensor(self.env.as_ref()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint dims {:?} do not match environment {:?}",
                dims.data(),
                dims_tensor(self.env.as_ref()).data()
            )));
        }
        let sub = |prefix: &str| -> HashMap<String, Tensor> {
            let p = format!("{prefix}.");
            map.iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|n| (n.to_string(), v.clone())))
                .collect()
        };
        let scalar = |key: String| -> Result<f64> {
            map.get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?
                .item()
        };
        let mut theta = self.theta.clone();
        let mut target = self.target.clone();
        let mut zeta = self.zeta.clone();
        theta.assign_all(&sub("theta"))?;
        target.assign_all(&sub("target"))?;
        zeta.assign_all(&sub("zeta"))?;
        let mut theta_opt = self.theta_opt.clone();
        let mut zeta_opt = self.zeta_opt.clone();
        theta_opt.import(&theta, "opt_theta", &map)?;
        zeta_opt.import(&zeta, "opt_zeta", &map)?;
        let mut temps = self.temperatures.clone();
        for (k, t) in temps.iter_mut().enumerate() {
            t.alpha = scalar(format!("temp.{k}.alpha"))?;
            t.target_entropy_bar = scalar(format!("temp.{k}.h_bar"))?;
        }
        let iteration = scalar("counter.iteration".into())? as u64;
        let env_steps = scalar("counter.env_steps".into())? as u64;
        let updates = scalar("counter.updates".into())? as u64;

        self.theta.copy_from(&theta)?;
        self.target.copy_from(&target)?;
        self.zeta.copy_from(&zeta)?;
        self.theta_opt = theta_opt;
        self.zeta_opt = zeta_opt;
        self.temperatures = temps;
        self.iteration = iteration;
        self.env_steps = env_steps;
        self.updates = updates;
        Ok(())
    }
}

/// Greedy (ε = 0, unshaped) rollouts of `theta`.
pub fn evaluate_greedy(
    env: &dyn Environment,
    nets: &ValueNets,
    theta: &ParamStore,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidConfig {
            field: "episodes".into(),
            message: "must be positive".into(),
        });
    }
    let policy = BehaviourPolicy {
        nets,
        theta,
        classifier: None,
        alphas: &[0.0],
        epsilon: 0.0,
    };
    let mut env = env.boxed_clone();
    let (mut total, mut solved, mut judged) = (0.0, 0usize, 0usize);
    for i in 0..episodes {
        let ep = run_episode(env.as_mut(), &policy, mix_seed(&[seed, i as u64, 0xe7a1]))?;
        total += ep.total_reward();
        if let Some(s) = env.solved() {
            judged += 1;
            solved += usize::from(s);
        }
    }
    Ok(EvalReport {
        episodes,
        mean_return: total / episodes as f64,
        solve_rate: (judged > 0).then(|| solved as f64 / judged as f64),
    })
}

/// Rebuilds the value networks and `θ` from checkpoint bytes for greedy
/// evaluation on `env`. Mixer kind and widths are read off the stored shapes.
pub fn load_greedy_policy(bytes: &[u8], env: &dyn Environment) -> Result<(ValueNets, ParamStore)> {
    let map = checkpoint::decode_map(bytes)?;
    let dims = map.get("meta.dims").ok_or_else(|| Error::Checkpoint("missing meta.dims".into()))?;
    if dims != &dims_tensor(env) {
        return Err(Error::Checkpoint(format!(
            "checkpoint dims {:?} do not match environment {:?}",
            dims.data(),
            dims_tensor(env).data()
        )));
    }
    let width = |key: &str| -> Result<usize> {
        map.get(key)
            .and_then(|t| t.shape().get(1).copied())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))
    };
    let qmix = map.contains_key("theta.mixer.hyper_b1.w");
    let widths = NetWidths {
        agent_hidden: width("theta.agent.fc1.w")?,
        mixing_embed: if qmix { width("theta.mixer.hyper_b1.w")? } else { NetWidths::default().mixing_embed },
        hypernet_hidden: if qmix { width("theta.mixer.hyper_w1.0.w")? } else { NetWidths::default().hypernet_hidden },
    };
    let kind = if qmix { MixerKind::Qmix } else { MixerKind::Vdn };
    let mut theta = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nets = ValueNets::new(
        &mut theta,
        kind,
        env.n_agents(),
        env.obs_dim(),
        env.state_dim(),
        env.n_actions(),
        widths,
        &mut rng,
    )?;
    let sub: HashMap<String, Tensor> = map
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("theta.").map(|n| (n.to_string(), v.clone())))
        .collect();
    theta.assign_all(&sub)?;
    Ok((nets, theta))
}

/// Files produced by [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutputs {
    pub metrics: PathBuf,
    pub final_checkpoint: PathBuf,
    pub iterations: u64,
    pub env_steps: u64,
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("iter_{iteration:08}.ckpt"))
}

/// Trains until `total_steps`, writing `metrics.csv`, periodic checkpoints and
/// `checkpoints/final.ckpt` under `out_dir`. `on_row` sees every metrics row.
///
/// A failure inside an iteration writes `diagnostics.json` next to the
/// metrics; the last checkpoint written stays valid.
pub fn run(config: TrainConfig, out_dir: &Path, mut on_row: impl FnMut(&MetricsRow)) -> Result<RunOutputs> {
    let mut trainer = Trainer::new(config)?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "{}", MetricsRow::csv_header())?;
    metrics.flush()?;

    let mut last_row: Option<MetricsRow> = None;
    while trainer.env_steps < trainer.config.total_steps {
        let row = match trainer.train_iteration() {
            Ok(r) => r,
            Err(e) => {
                write_diagnostics(out_dir, &trainer, last_row.as_ref(), &e)?;
                return Err(e);
            }
        };
        writeln!(metrics, "{}", row.to_csv())?;
        metrics.flush()?;
        on_row(&row);
        let interval = trainer.config.checkpoint_interval;
        if interval > 0 && trainer.iteration % interval == 0 {
            checkpoint::write_atomic(&checkpoint_path(out_dir, trainer.iteration), &trainer.checkpoint_bytes())?;
        }
        last_row = Some(row);
    }
    let final_checkpoint = out_dir.join("checkpoints").join("final.ckpt");
    checkpoint::write_atomic(&final_checkpoint, &trainer.checkpoint_bytes())?;
    Ok(RunOutputs {
        metrics: metrics_path,
        final_checkpoint,
        iterations: trainer.iteration,
        env_steps: trainer.env_steps,
    })
}

fn write_diagnostics(out_dir: &Path, trainer: &Trainer, last: Option<&MetricsRow>, err: &Error) -> Result<()> {
    let finite = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::json!(v.to_string()) };
    let report = serde_json::json!({
        "error": err.to_string(),
        "iteration": trainer.iteration,
        "env_steps": trainer.env_steps,
        "updates": trainer.updates,
        "alpha": trainer.alphas().into_iter().map(finite).collect::<Vec<_>>(),
        "theta_grad_norm": finite(trainer.theta.grad_norm()),
        "zeta_grad_norm": finite(trainer.zeta.grad_norm()),
        "last_metrics": last.map(MetricsRow::to_csv),
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Checkpoint(e.to_string()))?;
    checkpoint::write_atomic(&out_dir.join("diagnostics.json"), text.as_bytes())
}
