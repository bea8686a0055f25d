use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    /// Absolute value; used on hypernetwork outputs to keep mixing weights non-negative.
    Abs,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
            Activation::Abs => tape.abs(x),
        }
    }
}

/// Layer widths including the input width, plus one activation per affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = Self {
            widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(contract("an MLP needs at least one layer"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(contract(format!("MLP widths must be positive: {:?}", self.widths)));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(contract(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Registers `<name>.w` and `<name>.b`, both drawn from `U(±1/√in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.w"), &[input, output], bound, rng)?;
        let bias = store.add_uniform(&format!("{name}.b"), &[output], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: MlpSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x).get(1).copied().unwrap_or(0);
        if tape.shape(x).len() != 2 || width != self.spec.input_width() {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.spec.input_width()],
            });
        }
        let mut h = x;
        for (layer, act) in self.layers.iter().zip(&self.spec.activations) {
            h = layer.forward(tape, store, h)?;
            h = act.apply(tape, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_network_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![3, 3], vec![Activation::Identity]).unwrap();
        let mlp = Mlp::new(&mut store, "id", spec, &mut rng).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        *store.value_mut(mlp.layers[0].weight) = eye;
        *store.value_mut(mlp.layers[0].bias) = Tensor::zeros(&[3]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap());
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn abs_layer_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![4, 8, 5], vec![Activation::Relu, Activation::Abs]).unwrap();
        let mlp = Mlp::new(&mut store, "h", spec, &mut rng).unwrap();
        let mut tape = Tape::new();
        let data = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = tape.constant(Tensor::matrix(10, 4, data).unwrap());
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![4, 2], vec![Activation::Relu]).unwrap();
        let mlp = Mlp::new(&mut store, "m", spec, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(mlp.forward(&mut tape, &store, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 0], vec![Activation::Relu]).is_err());
        assert!(MlpSpec::new(vec![3, 2], vec![]).is_err());
    }
}
