use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruCellSpec {
    pub input: usize,
    pub hidden: usize,
}

impl GruCellSpec {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(contract(format!("GRU dims must be positive: {input}×{hidden}")));
        }
        Ok(Self { input, hidden })
    }
}

/// GRU cell with gates packed as `[reset | update | candidate]` columns.
///
/// ```text
/// r  = σ(x·Wr + br + h·Ur + cr)
/// z  = σ(x·Wz + bz + h·Uz + cz)
/// n  = tanh(x·Wn + bn + r ⊙ (h·Un + cn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub spec: GruCellSpec,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: GruCellSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let (i, h) = (spec.input, spec.hidden);
        let bound = 1.0 / (h as f64).sqrt();
        Ok(Self {
            spec,
            w_input: store.add_uniform(&format!("{name}.w_ih"), &[i, 3 * h], bound, rng)?,
            w_hidden: store.add_uniform(&format!("{name}.w_hh"), &[h, 3 * h], bound, rng)?,
            b_input: store.add_uniform(&format!("{name}.b_ih"), &[3 * h], bound, rng)?,
            b_hidden: store.add_uniform(&format!("{name}.b_hh"), &[3 * h], bound, rng)?,
        })
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let hd = self.spec.hidden;
        let (xs, hs) = (tape.shape(x).to_vec(), tape.shape(h).to_vec());
        if xs.len() != 2 || xs[1] != self.spec.input || hs.len() != 2 || hs[1] != hd || hs[0] != xs[0] {
            return Err(Error::Shape {
                op: "gru_step",
                lhs: xs,
                rhs: hs,
            });
        }
        let (wi, wh) = (tape.param(store, self.w_input), tape.param(store, self.w_hidden));
        let (bi, bh) = (tape.param(store, self.b_input), tape.param(store, self.b_hidden));
        let gx = tape.matmul(x, wi)?;
        let gx = tape.add_row(gx, bi)?;
        let gh = tape.matmul(h, wh)?;
        let gh = tape.add_row(gh, bh)?;

        let (xr, hr) = (tape.slice_cols(gx, 0, hd)?, tape.slice_cols(gh, 0, hd)?);
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;
        let (xz, hz) = (tape.slice_cols(gx, hd, hd)?, tape.slice_cols(gh, hd, hd)?);
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;
        let (xn, hn) = (tape.slice_cols(gx, 2 * hd, hd)?, tape.slice_cols(gh, 2 * hd, hd)?);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(xn, rn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64, input: usize, hidden: usize) -> (ParamStore, GruCell) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let spec = GruCellSpec::new(input, hidden).unwrap();
        let gru = GruCell::new(&mut store, "gru", spec, &mut rng).unwrap();
        (store, gru)
    }

    #[test]
    fn zero_parameters_halve_the_state() {
        let (mut store, gru) = cell(0, 3, 4);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.7, -1.0, 2.0]).unwrap());
        let h0 = vec![0.4, -0.2, 0.9, -0.6];
        let h = tape.constant(Tensor::matrix(1, 4, h0.clone()).unwrap());
        let h1 = gru.step(&mut tape, &store, x, h).unwrap();
        for (a, b) in tape.value(h1).data().iter().zip(&h0) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn step_is_pure_and_bounded() {
        let (store, gru) = cell(7, 2, 5);
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::matrix(2, 2, vec![3.0, -3.0, 0.5, 10.0]).unwrap());
            let h = tape.constant(Tensor::matrix(2, 5, vec![0.9, -0.9, 0.0, 0.3, -0.1, 0.2, 0.2, 0.2, -0.99, 0.5]).unwrap());
            let h1 = gru.step(&mut tape, &store, x, h).unwrap();
            tape.value(h1).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let (store, gru) = cell(0, 3, 4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(gru.step(&mut tape, &store, x, h).is_err());
    }
}
