use serde::{Deserialize, Serialize};

use crate::air_explore::{DEFAULT_ALPHA_LR, DEFAULT_EMA_DECAY};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::GruCellSpec;
use crate::replay::{DEFAULT_BATCH_SIZE, DEFAULT_CAPACITY};
use crate::value_decomposition::{MixerKind, NetWidths, DEFAULT_GAMMA};

/// How the identity classifier and temperature take part in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AirMode {
    /// Plain value decomposition: no classifier training, α fixed at 0.
    Off,
    /// Classifier trained, α and H̄ updated every training iteration.
    On,
    /// Classifier trained and queried during rollouts, α held at 0.
    ClassifierOnly,
}

impl AirMode {
    pub fn trains_classifier(self) -> bool {
        self != AirMode::Off
    }

    pub fn updates_alpha(self) -> bool {
        self == AirMode::On
    }
}

impl std::str::FromStr for AirMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            "classifier_only" => Ok(Self::ClassifierOnly),
            other => Err(Error::InvalidConfig {
                field: "air".into(),
                message: format!("unknown mode `{other}` (expected on, off or classifier_only)"),
            }),
        }
    }
}

/// Every knob of a training run. Only `env` is mandatory in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvConfig,
    #[serde(default = "d::mixer")]
    pub mixer: MixerKind,
    #[serde(default = "d::air")]
    pub air: AirMode,
    #[serde(default = "d::seed")]
    pub seed: u64,
    /// Environment steps to collect before stopping.
    #[serde(default = "d::total_steps")]
    pub total_steps: u64,
    /// Episodes collected between parameter updates.
    #[serde(default = "d::episodes_per_iter")]
    pub episodes_per_iter: usize,
    /// Threads used for rollouts; results do not depend on this.
    #[serde(default = "d::workers")]
    pub workers: usize,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::lr")]
    pub classifier_lr: f64,
    #[serde(default = "d::alpha_lr")]
    pub alpha_lr: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "d::epsilon_end")]
    pub epsilon_end: f64,
    #[serde(default = "d::epsilon_anneal_steps")]
    pub epsilon_anneal_steps: u64,
    /// Parameter updates between target syncs.
    #[serde(default = "d::target_update_interval")]
    pub target_update_interval: u64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "d::ema_decay")]
    pub ema_decay: f64,
    /// One temperature per agent instead of a single shared α.
    #[serde(default)]
    pub per_agent_alpha: bool,
    /// Global gradient-norm clip for θ and ζ; absent disables clipping.
    #[serde(default = "d::grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub widths: NetWidths,
    #[serde(default = "d::classifier_hidden")]
    pub classifier_hidden: usize,
    /// Iterations between intermediate checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
}

mod d {
    use super::*;

    pub fn mixer() -> MixerKind {
        MixerKind::Qmix
    }
    pub fn air() -> AirMode {
        AirMode::On
    }
    pub fn seed() -> u64 {
        0
    }
    pub fn total_steps() -> u64 {
        20_000
    }
    pub fn episodes_per_iter() -> usize {
        1
    }
    pub fn workers() -> usize {
        1
    }
    pub fn lr() -> f64 {
        0.0005
    }
    pub fn alpha_lr() -> f64 {
        DEFAULT_ALPHA_LR
    }
    pub fn gamma() -> f64 {
        DEFAULT_GAMMA
    }
    pub fn epsilon_start() -> f64 {
        1.0
    }
    pub fn epsilon_end() -> f64 {
        0.05
    }
    pub fn epsilon_anneal_steps() -> u64 {
        50_000
    }
    pub fn target_update_interval() -> u64 {
        200
    }
    pub fn batch_size() -> usize {
        DEFAULT_BATCH_SIZE
    }
    pub fn buffer_capacity() -> usize {
        DEFAULT_CAPACITY
    }
    pub fn ema_decay() -> f64 {
        DEFAULT_EMA_DECAY
    }
    pub fn grad_clip() -> Option<f64> {
        Some(10.0)
    }
    pub fn classifier_hidden() -> usize {
        GruCellSpec::DEFAULT_HIDDEN
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        message: message.into(),
    }
}

impl TrainConfig {
    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            mixer: d::mixer(),
            air: d::air(),
            seed: d::seed(),
            total_steps: d::total_steps(),
            episodes_per_iter: d::episodes_per_iter(),
            workers: d::workers(),
            lr: d::lr(),
            classifier_lr: d::lr(),
            alpha_lr: d::alpha_lr(),
            gamma: d::gamma(),
            epsilon_start: d::epsilon_start(),
            epsilon_end: d::epsilon_end(),
            epsilon_anneal_steps: d::epsilon_anneal_steps(),
            target_update_interval: d::target_update_interval(),
            batch_size: d::batch_size(),
            buffer_capacity: d::buffer_capacity(),
            ema_decay: d::ema_decay(),
            per_agent_alpha: false,
            grad_clip: d::grad_clip(),
            widths: NetWidths::default(),
            classifier_hidden: d::classifier_hidden(),
            checkpoint_interval: 0,
        }
    }

    /// Hard errors for unusable values; returns soft warnings otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = [
            ("lr", self.lr),
            ("classifier_lr", self.classifier_lr),
            ("alpha_lr", self.alpha_lr),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.ema_decay == 0.0 {
            return Err(invalid("ema_decay", format!("must lie in (0, 1), got {}", self.ema_decay)));
        }
        for (field, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(invalid("epsilon_end", "must not exceed epsilon_start"));
        }
        let counts = [
            ("episodes_per_iter", self.episodes_per_iter as u64),
            ("workers", self.workers as u64),
            ("epsilon_anneal_steps", self.epsilon_anneal_steps),
            ("target_update_interval", self.target_update_interval),
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("classifier_hidden", self.classifier_hidden as u64),
            ("widths.agent_hidden", self.widths.agent_hidden as u64),
            ("widths.mixing_embed", self.widths.mixing_embed as u64),
            ("widths.hypernet_hidden", self.widths.hypernet_hidden as u64),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(invalid("batch_size", "exceeds buffer_capacity"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(invalid("grad_clip", format!("must be positive, got {c}")));
            }
        }
        let mut warnings = Vec::new();
        if self.epsilon_anneal_steps > self.total_steps && self.total_steps > 0 {
            warnings.push(format!(
                "epsilon anneal ({} steps) ends after the run ({} steps); final epsilon is {:.4}",
                self.epsilon_anneal_steps,
                self.total_steps,
                self.epsilon(self.total_steps)
            ));
        }
        Ok(warnings)
    }

    /// `max(ε_end, ε_start − (ε_start − ε_end)·step / anneal)`, and exactly
    /// `ε_end` once the anneal is over.
    pub fn epsilon(&self, env_steps: u64) -> f64 {
        if env_steps >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let span = self.epsilon_start - self.epsilon_end;
        (self.epsilon_start - span * env_steps as f64 / self.epsilon_anneal_steps as f64).max(self.epsilon_end)
    }
}

