//! Central finite-difference checks against the tape's analytic gradients.

use super::{ParamStore, Tape, Var};
use crate::error::Result;

pub const FD_EPSILON: f64 = 1e-5;
/// Denominator floor for [`relative_error`]; below it the comparison is effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(x + ε) − f(x − ε)) / 2ε`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, eps: f64) -> Result<f64> {
    Ok((f(x + eps)? - f(x - eps)?) / (2.0 * eps))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `∂loss/∂θ` from one backward pass with central differences over
/// every coordinate of `store`. `loss` must rebuild the graph from scratch.
pub fn check_param_gradients<F>(store: &mut ParamStore, mut loss: F, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    tape.backward(out, &mut [store])?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, store)?;
        tape.value(out).item()
    };

    let mut report = GradCheckReport {
        coordinates: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for id in store.ids().collect::<Vec<_>>() {
        for i in 0..store.value(id).len() {
            let original = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = original + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.grad(id).data()[i];
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Touches every differentiable primitive once.
    fn composite(tape: &mut Tape, store: &ParamStore, x: &Tensor) -> Result<Var> {
        let ids: Vec<_> = store.ids().collect();
        let x = tape.constant(x.clone());
        let (w1, b1, w2, gate) = (
            tape.param(store, ids[0]),
            tape.param(store, ids[1]),
            tape.param(store, ids[2]),
            tape.param(store, ids[3]),
        );
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let a = tape.tanh(h)?;
        let b = tape.sigmoid(h)?;
        let c = tape.elu(h)?;
        let d = tape.relu(h)?;
        let e = tape.abs(h)?;
        let ab = tape.mul(a, b)?;
        let cd = tape.sub(c, d)?;
        let h = tape.add(ab, cd)?;
        let h = tape.add(h, e)?;
        let h = tape.scale(h, 0.7)?;
        let h = tape.shift(h, -0.1)?;
        let g = tape.one_minus(gate)?;
        let h = tape.add_row(h, g)?;
        let y = tape.matmul(h, w2)?;
        let ls = tape.log_softmax(y)?;
        let picked = tape.gather(ls, &[0, 2, 1])?;
        let flat = tape.reshape(y, &[2, 6])?;
        let left = tape.slice_cols(flat, 1, 3)?;
        let sq = tape.square(left)?;
        let damped = tape.scale(sq, -0.2)?;
        let ex = tape.exp(damped)?;
        let neg = tape.neg(ex)?;
        let stacked = tape.concat_rows(&[neg, left])?;
        let q = tape.slice_cols(y, 0, 2)?;
        let mixed = tape.row_bmm(q, h)?;
        let t1 = tape.mean(picked)?;
        let t2 = tape.weighted_sum(stacked, &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0, 0.2, 0.1])?;
        let t3 = tape.sum(mixed)?;
        let s = tape.add(t1, t2)?;
        let t3 = tape.scale(t3, 0.05)?;
        tape.add(s, t3)
    }

    fn fixture(seed: u64) -> (ParamStore, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add_uniform("w1", &[3, 8], 0.8, &mut rng).unwrap();
        store.add_uniform("b1", &[8], 0.8, &mut rng).unwrap();
        store.add_uniform("w2", &[8, 4], 0.8, &mut rng).unwrap();
        store.add_uniform("gate", &[8], 0.8, &mut rng).unwrap();
        let x = Tensor::matrix(3, 3, (0..9).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap();
        (store, x)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn composite_graph_matches_finite_differences(seed in any::<u64>()) {
            let (mut store, x) = fixture(seed);
            let report = check_param_gradients(&mut store, |t, s| composite(t, s, &x), FD_EPSILON).unwrap();
            prop_assert!(report.passes(1e-4), "{report:?}");
        }

        #[test]
        fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let (store, x) = fixture(seed);
            let mut tape = Tape::new();
            let l1 = composite(&mut tape, &store, &x).unwrap();
            let sq = tape.square(l1).unwrap();
            let la = tape.scale(l1, a).unwrap();
            let lb = tape.scale(sq, b).unwrap();
            let combo = tape.add(la, lb).unwrap();
            let g = tape.gradients(combo).unwrap();
            let g1 = tape.gradients(l1).unwrap();
            let g2 = tape.gradients(sq).unwrap();
            let w1 = tape.param(&store, store.ids().next().unwrap());
            for ((c, x1), x2) in g.wrt(w1).unwrap().iter().zip(g1.wrt(w1).unwrap()).zip(g2.wrt(w1).unwrap()) {
                prop_assert!((c - (a * x1 + b * x2)).abs() <= 1e-12 * (1.0 + c.abs()));
            }
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>()) {
            let (store, x) = fixture(seed);
            let run = || {
                let mut tape = Tape::new();
                let v = composite(&mut tape, &store, &x).unwrap();
                tape.value(v).item().unwrap().to_bits()
            };
            prop_assert_eq!(run(), run());
        }
    }

    #[test]
    fn central_difference_of_cube() {
        let d = central_difference(|x| Ok(x * x * x), 2.0, FD_EPSILON).unwrap();
        assert!(relative_error(12.0, d) < 1e-9);
    }
}
