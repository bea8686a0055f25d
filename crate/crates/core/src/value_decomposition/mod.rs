//! Per-agent recurrent utilities, VDN/QMIX mixing and the TD objective.

mod agent;
mod mixer;
mod td;

pub use agent::AgentQNet;
pub use mixer::{qmix_mix, vdn_mix, Mixer, MixerKind, QmixMixer, HYPERNET_HIDDEN, MIXING_EMBED};
pub use td::{greedy_action, masked_max, td_loss, TdLoss, DEFAULT_GAMMA};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::nn::GruCellSpec;

/// Layer widths for the value networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetWidths {
    pub agent_hidden: usize,
    pub mixing_embed: usize,
    pub hypernet_hidden: usize,
}

impl Default for NetWidths {
    fn default() -> Self {
        Self {
            agent_hidden: GruCellSpec::DEFAULT_HIDDEN,
            mixing_embed: MIXING_EMBED,
            hypernet_hidden: HYPERNET_HIDDEN,
        }
    }
}

/// Shared agent network plus mixer; parameters live in one [`ParamStore`] (θ).
#[derive(Clone, Debug)]
pub struct ValueNets {
    pub agent: AgentQNet,
    pub mixer: Mixer,
    pub n_agents: usize,
    pub state_dim: usize,
}

impl ValueNets {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: MixerKind,
        n_agents: usize,
        obs_dim: usize,
        state_dim: usize,
        n_actions: usize,
        widths: NetWidths,
        rng: &mut R,
    ) -> Result<Self> {
        let agent = AgentQNet::new(store, obs_dim, n_actions, widths.agent_hidden, rng)?;
        let mixer = Mixer::new(store, kind, n_agents, state_dim, widths, rng)?;
        Ok(Self {
            agent,
            mixer,
            n_agents,
            state_dim,
        })
    }
}
