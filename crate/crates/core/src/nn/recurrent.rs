use rand::Rng;

use super::{GruCell, GruCellSpec, Linear};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `relu(x·W₁ + b₁) → GRU → linear head`, one step per call.
#[derive(Clone, Debug)]
pub struct RecurrentNet {
    pub encoder: Linear,
    pub gru: GruCell,
    pub head: Linear,
}

impl RecurrentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Linear::new(store, &format!("{name}.fc1"), input, hidden, rng)?;
        let gru = GruCell::new(store, &format!("{name}.rnn"), GruCellSpec::new(hidden, hidden)?, rng)?;
        let head = Linear::new(store, &format!("{name}.fc2"), hidden, output, rng)?;
        Ok(Self { encoder, gru, head })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input
    }

    pub fn hidden_width(&self) -> usize {
        self.gru.spec.hidden
    }

    pub fn output_width(&self) -> usize {
        self.head.output
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(&[rows, self.hidden_width()])
    }

    /// Returns `(output, h')` for a `rows × input` batch.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::Shape {
                op: "recurrent_step",
                lhs: shape.to_vec(),
                rhs: vec![self.input_width()],
            });
        }
        let e = self.encoder.forward(tape, store, x)?;
        let e = tape.relu(e)?;
        let h = self.gru.step(tape, store, e, h)?;
        let y = self.head.forward(tape, store, h)?;
        Ok((y, h))
    }
}
