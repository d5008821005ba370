//! Central finite-difference checks of tape gradients (f64 only).

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    Ok(f(&tape, &vars)?.item())
}

/// Maximum over all coordinates of all inputs of
/// `|analytic − central difference| / max(1, |central difference|)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = f(&tape, &vars)?;
    let base = out.item();
    tape.backward(out)?;
    let again = eval(&f, inputs)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministicFunction(base, again));
    }
    let mut worst = 0.0f64;
    for (k, (x, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = v.grad().expect("input var has a gradient");
        for i in 0..x.numel() {
            let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
            probe[k].data_mut()[i] = x.data()[i] + eps;
            let up = eval(&f, &probe)?;
            probe[k].data_mut()[i] = x.data()[i] - eps;
            let down = eval(&f, &probe)?;
            let fd = (up - down) / (2.0 * eps);
            let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    grad_check_many(|tape, v| f(tape, v[0]), std::slice::from_ref(x), eps)
}
