use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NetWidths;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Activation, Linear, Mlp, MlpSpec};

pub const MIXING_EMBED: usize = 32;
pub const HYPERNET_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Vdn,
    Qmix,
}

impl std::str::FromStr for MixerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdn" => Ok(Self::Vdn),
            "qmix" => Ok(Self::Qmix),
            other => Err(Error::InvalidConfig {
                field: "mixer".into(),
                message: format!("unknown mixer `{other}` (expected vdn or qmix)"),
            }),
        }
    }
}

/// Monotonic state-conditioned mixer.
///
/// ```text
/// W₁ = |hyper_w1(s)|  (n × E)    b₁ = hyper_b1(s)
/// h  = elu(q·W₁ + b₁)
/// W₂ = |hyper_w2(s)|  (E × 1)    b₂ = V(s)
/// Q_tot = h·W₂ + b₂
/// ```
#[derive(Clone, Debug)]
pub struct QmixMixer {
    pub hyper_w1: Mlp,
    pub hyper_b1: Linear,
    pub hyper_w2: Mlp,
    pub value: Mlp,
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed: usize,
}

impl QmixMixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_agents: usize,
        state_dim: usize,
        widths: NetWidths,
        rng: &mut R,
    ) -> Result<Self> {
        let (e, hh) = (widths.mixing_embed, widths.hypernet_hidden);
        let abs_head = vec![Activation::Relu, Activation::Abs];
        Ok(Self {
            hyper_w1: Mlp::new(
                store,
                "mixer.hyper_w1",
                MlpSpec::new(vec![state_dim, hh, n_agents * e], abs_head.clone())?,
                rng,
            )?,
            hyper_b1: Linear::new(store, "mixer.hyper_b1", state_dim, e, rng)?,
            hyper_w2: Mlp::new(store, "mixer.hyper_w2", MlpSpec::new(vec![state_dim, hh, e], abs_head)?, rng)?,
            value: Mlp::new(
                store,
                "mixer.value",
                MlpSpec::new(vec![state_dim, e, 1], vec![Activation::Relu, Activation::Identity])?,
                rng,
            )?,
            n_agents,
            state_dim,
            embed: e,
        })
    }

    /// `q: B × n`, `state: B × state_dim` → `B × 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q: Var, state: Var) -> Result<Var> {
        let w1 = self.hyper_w1.forward(tape, store, state)?;
        let b1 = self.hyper_b1.forward(tape, store, state)?;
        let hidden = tape.row_bmm(q, w1)?;
        let hidden = tape.add(hidden, b1)?;
        let hidden = tape.elu(hidden)?;
        let w2 = self.hyper_w2.forward(tape, store, state)?;
        let y = tape.row_bmm(hidden, w2)?;
        let v = self.value.forward(tape, store, state)?;
        tape.add(y, v)
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    Vdn { n_agents: usize },
    Qmix(QmixMixer),
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: MixerKind,
        n_agents: usize,
        state_dim: usize,
        widths: NetWidths,
        rng: &mut R,
    ) -> Result<Self> {
        if n_agents == 0 {
            return Err(contract("mixer needs at least one agent"));
        }
        Ok(match kind {
            MixerKind::Vdn => Self::Vdn { n_agents },
            MixerKind::Qmix => Self::Qmix(QmixMixer::new(store, n_agents, state_dim, widths, rng)?),
        })
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Self::Vdn { .. } => MixerKind::Vdn,
            Self::Qmix(_) => MixerKind::Qmix,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Self::Vdn { n_agents } => *n_agents,
            Self::Qmix(m) => m.n_agents,
        }
    }

    /// `q: B × n` chosen utilities, `state: B × state_dim` → `Q_tot: B × 1`.
    pub fn mix(&self, tape: &mut Tape, store: &ParamStore, q: Var, state: Var) -> Result<Var> {
        let n = self.n_agents();
        if tape.shape(q).len() != 2 || tape.shape(q)[1] != n {
            return Err(Error::Shape {
                op: "mix",
                lhs: tape.shape(q).to_vec(),
                rhs: vec![n],
            });
        }
        match self {
            Self::Vdn { .. } => {
                let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
                tape.matmul(q, ones)
            }
            Self::Qmix(m) => m.forward(tape, store, q, state),
        }
    }
}

/// `Σ_a q_a`.
pub fn vdn_mix(q_chosen: &[f64]) -> Result<f64> {
    if q_chosen.is_empty() {
        return Err(contract("vdn_mix needs at least one agent"));
    }
    Ok(q_chosen.iter().sum())
}

/// Single-sample QMIX evaluation.
pub fn qmix_mix(mixer: &QmixMixer, store: &ParamStore, q_chosen: &[f64], state: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::matrix(1, q_chosen.len(), q_chosen.to_vec())?);
    let s = tape.constant(Tensor::matrix(1, state.len(), state.to_vec())?);
    let out = mixer.forward(&mut tape, store, q, s)?;
    tape.value(out).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_param_gradients, relative_error, FD_EPSILON};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetWidths {
        NetWidths {
            agent_hidden: 8,
            mixing_embed: 4,
            hypernet_hidden: 6,
        }
    }

    fn qmix(seed: u64, n: usize, sd: usize, widths: NetWidths) -> (ParamStore, QmixMixer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = QmixMixer::new(&mut store, n, sd, widths, &mut rng).unwrap();
        (store, m)
    }

    #[test]
    fn vdn_examples() {
        assert_eq!(vdn_mix(&[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(vdn_mix(&[-4.5]).unwrap(), -4.5);
        assert_eq!(vdn_mix(&[3.0, 1.0, 2.0]).unwrap(), vdn_mix(&[1.0, 2.0, 3.0]).unwrap());
        assert!(vdn_mix(&[]).is_err());
    }

    #[test]
    fn zero_hypernetworks_give_constant_output() {
        let (mut store, m) = qmix(0, 3, 2, small());
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let v = m.value.layers[1].bias;
        store.value_mut(v).data_mut()[0] = 0.75;
        for q in [[0.0, 1.0, 2.0], [-5.0, 3.0, 9.0]] {
            assert_eq!(qmix_mix(&m, &store, &q, &[0.4, -0.2]).unwrap(), 0.75);
        }
    }

    #[test]
    fn default_parameter_count() {
        // hyper_w1 (1→64→2·32), hyper_b1 (1→32), hyper_w2 (1→64→32), V (1→32→1)
        let (store, _) = qmix(0, 2, 1, NetWidths::default());
        let expected = (64 + 64) + (64 * 64 + 64) + (32 + 32) + (64 + 64) + (64 * 32 + 32) + (32 + 32) + (32 + 1);
        assert_eq!(store.numel(), expected);
    }

    #[test]
    fn mixer_gradcheck() {
        let (mut store, m) = qmix(5, 2, 3, small());
        let q = Tensor::matrix(3, 2, vec![0.4, -1.2, 2.0, 0.1, -0.3, 0.8]).unwrap();
        let s = Tensor::matrix(3, 3, vec![0.2, -0.5, 1.0, 0.9, 0.3, -0.1, -0.6, 0.7, 0.4]).unwrap();
        let report = check_param_gradients(
            &mut store,
            |tape, store| {
                let (qv, sv) = (tape.constant(q.clone()), tape.constant(s.clone()));
                let y = m.forward(tape, store, qv, sv)?;
                let y = tape.square(y)?;
                tape.mean(y)
            },
            FD_EPSILON,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn analytic_input_gradient_is_non_negative() {
        let (store, m) = qmix(9, 3, 2, small());
        let mut tape = Tape::new();
        let q = tape.variable(Tensor::matrix(1, 3, vec![0.5, -2.0, 1.0]).unwrap());
        let s = tape.constant(Tensor::matrix(1, 2, vec![0.3, 0.6]).unwrap());
        let y = m.forward(&mut tape, &store, q, s).unwrap();
        let y = tape.sum(y).unwrap();
        let g = tape.gradients(y).unwrap();
        assert!(g.wrt(q).unwrap().iter().all(|&d| d >= 0.0));
        let numeric = crate::autodiff::gradcheck::central_difference(
            |x| qmix_mix(&m, &store, &[x, -2.0, 1.0], &[0.3, 0.6]),
            0.5,
            FD_EPSILON,
        )
        .unwrap();
        assert!(relative_error(g.wrt(q).unwrap()[0], numeric) < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monotone_in_every_agent(
            seed in any::<u64>(),
            q in proptest::collection::vec(-5.0f64..5.0, 2),
            s in proptest::collection::vec(-2.0f64..2.0, 3),
            delta in 1e-3f64..2.0,
            agent in 0usize..2,
        ) {
            let (store, m) = qmix(seed, 2, 3, small());
            let base = qmix_mix(&m, &store, &q, &s).unwrap();
            let mut bumped = q.clone();
            bumped[agent] += delta;
            prop_assert!(qmix_mix(&m, &store, &bumped, &s).unwrap() >= base - 1e-12);
        }
    }
}
