use rand::Rng;

use super::{Bound, ParamId, ParamStore};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Fully connected LSTM cell. Each gate has its own `[hidden, input+hidden]`
/// weight block and `[hidden]` bias.
#[derive(Clone, Debug)]
pub struct LstmCell {
    input_size: usize,
    hidden_size: usize,
    /// Input, forget, output and candidate gates, in that order.
    gates: [(ParamId, ParamId); 4],
}

/// Recurrent state `(h, c)`, each `[batch, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState<'t, T: Scalar> {
    pub h: Var<'t, T>,
    pub c: Var<'t, T>,
}

impl<'t, T: Scalar> LstmState<'t, T> {
    pub fn zeros(tape: &'t Tape<T>, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros([batch, hidden])),
            c: tape.constant(Tensor::zeros([batch, hidden])),
        }
    }
}

impl LstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = input_size + hidden_size;
        let mut gate = |g: &str| {
            (
                store.add_glorot(
                    format!("{name}.{g}.weight"),
                    [hidden_size, fan_in],
                    fan_in,
                    hidden_size,
                    rng,
                ),
                store.add_zeros(format!("{name}.{g}.bias"), [hidden_size]),
            )
        };
        let gates = [gate("input"), gate("forget"), gate("output"), gate("cell")];
        Self {
            input_size,
            hidden_size,
            gates,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    /// `(weight, bias)` of the input, forget, output and candidate gates.
    pub fn gate_ids(&self) -> [(ParamId, ParamId); 4] {
        self.gates
    }

    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        input: Var<'t, T>,
        state: LstmState<'t, T>,
    ) -> Result<LstmState<'t, T>> {
        let (xs, hs, cs) = (input.shape(), state.h.shape(), state.c.shape());
        if xs.len() != 2 || xs[1] != self.input_size {
            return Err(shape_err(format!(
                "LSTM input {xs:?}, expected [_, {}]",
                self.input_size
            )));
        }
        if hs != [xs[0], self.hidden_size] || cs != hs {
            return Err(shape_err(format!(
                "LSTM state h {hs:?} c {cs:?}, expected [{}, {}]",
                xs[0], self.hidden_size
            )));
        }
        let xh = Var::concat(&[input, state.h], 1)?;
        let gate = |k: usize| {
            let (w, b) = self.gates[k];
            xh.linear(p.get(w), Some(p.get(b)))
        };
        let i = gate(0)?.sigmoid();
        let f = gate(1)?.sigmoid();
        let o = gate(2)?.sigmoid();
        let g = gate(3)?.tanh();
        let c = f.mul(state.c)?.add(i.mul(g)?)?;
        let h = o.mul(c.tanh())?;
        Ok(LstmState { h, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_and_state_give_zero_output() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, p) in store.iter_mut() {
            p.value = p.value.map(|_| 0.0);
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::from_f64([1, 3], &[1.0, -2.0, 3.0]).unwrap());
        let s = cell.step(&p, x, LstmState::zeros(&tape, 1, 4)).unwrap();
        assert!(s.h.value().data().iter().all(|&v| v == 0.0));
        assert!(s.c.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_keep_the_cell() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let [(_, bi), (_, bf), _, _] = cell.gate_ids();
        *store.value_mut(bf) = Tensor::full([3], 1e3);
        *store.value_mut(bi) = Tensor::full([3], -1e3);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::from_f64([1, 2], &[0.3, -0.7]).unwrap());
        let c0 = Tensor::from_f64([1, 3], &[0.5, -1.5, 2.0]).unwrap();
        let state = LstmState {
            h: tape.constant(Tensor::from_f64([1, 3], &[0.1, 0.2, -0.3]).unwrap()),
            c: tape.constant(c0.clone()),
        };
        let s = cell.step(&p, x, state).unwrap();
        assert!(s.c.value().max_abs_diff(&c0) < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut store = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::zeros([1, 5]));
        assert!(cell.step(&p, x, LstmState::zeros(&tape, 1, 3)).is_err());
        let x = tape.constant(Tensor::zeros([1, 2]));
        assert!(cell.step(&p, x, LstmState::zeros(&tape, 1, 4)).is_err());
    }

    #[test]
    fn gradient_of_hidden_output() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        for (_, p) in store.iter_mut().filter(|(n, _)| n.ends_with("bias")) {
            p.value = p.value.map(|_| 0.2);
        }
        let x = Tensor::from_fn([2, 3], |i| (i as f64 * 0.7).sin());
        let h0 = Tensor::from_fn([2, 4], |i| (i as f64 * 0.3).cos() * 0.5);
        let c0 = Tensor::from_fn([2, 4], |i| (i as f64 * 0.9).sin());
        let err = grad_check_params(
            &store,
            |tape, p| {
                let state = LstmState {
                    h: tape.constant(h0.clone()),
                    c: tape.constant(c0.clone()),
                };
                Ok(cell.step(p, tape.constant(x.clone()), state)?.h.sum_all())
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
