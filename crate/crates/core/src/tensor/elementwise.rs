//! Broadcasting binary ops and pointwise unary ops.

use super::{Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Broadcast shape of two operands, aligned from the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(shape_err(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (rank-aligned), zero on
/// broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let off = out.len() - shape.len();
    let own = super::strides(shape);
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Calls `f(i, ia, ib)` for every flat output index with the matching
/// flat offsets into each operand.
fn for_each_broadcast(
    a: &[usize],
    b: &[usize],
    out: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        (0..n).for_each(|i| f(i, i, i));
        return;
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == out && nb == 1 {
        (0..n).for_each(|i| f(i, i, 0));
        return;
    }
    if b == out && na == 1 {
        (0..n).for_each(|i| f(i, 0, i));
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Neg,
    Relu,
    Softplus,
    Square,
    Sqrt,
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary(
        self,
        other: Var<'t, T>,
        f: fn(T, T) -> T,
        da: fn(T, T) -> T,
        db: fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = other.value();
        let out_shape = broadcast_shape(av.shape(), bv.shape())?;
        let mut out = Tensor::zeros(out_shape.clone());
        {
            let (ad, bd) = (av.data(), bv.data());
            let od = out.data_mut();
            for_each_broadcast(av.shape(), bv.shape(), &out_shape, |i, ia, ib| {
                od[i] = f(ad[ia], bd[ib]);
            });
        }
        Ok(self.tape().op(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                let mut ga = needs[0].then(|| Tensor::zeros(av.shape().to_vec()));
                let mut gb = needs[1].then(|| Tensor::zeros(bv.shape().to_vec()));
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                for_each_broadcast(av.shape(), bv.shape(), &out_shape, |i, ia, ib| {
                    if let Some(ga) = ga.as_mut() {
                        ga.data_mut()[ia] += gd[i] * da(ad[ia], bd[ib]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.data_mut()[ib] += gd[i] * db(ad[ia], bd[ib]);
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn elementwise(self, op: BinaryOp, other: Var<'t, T>) -> Result<Var<'t, T>> {
        match op {
            BinaryOp::Add => self.add(other),
            BinaryOp::Sub => self.sub(other),
            BinaryOp::Mul => self.mul(other),
            BinaryOp::Div => self.div(other),
        }
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, |a, b| a * b, |_, b| b, |a, _| a)
    }

    /// Division; a zero divisor is a domain error.
    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        if other.value().data().iter().any(|v| *v == T::zero()) {
            return Err(Error::DomainError("division by zero".into()));
        }
        self.binary(
            other,
            |a, b| a / b,
            |_, b| T::one() / b,
            |a, b| -a / (b * b),
        )
    }

    fn unary(self, f: fn(T) -> T, df: fn(T, T) -> T) -> Var<'t, T> {
        let xv = self.value();
        let out = xv.map(f);
        let yv = std::rc::Rc::new(out.clone());
        self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .zip(yv.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    /// Pointwise unary op; `Log` and `Sqrt` reject out-of-domain inputs.
    pub fn apply(self, op: UnaryOp) -> Result<Var<'t, T>> {
        Ok(match op {
            UnaryOp::Sigmoid => self.sigmoid(),
            UnaryOp::Tanh => self.tanh(),
            UnaryOp::Exp => self.exp(),
            UnaryOp::Log => return self.ln(),
            UnaryOp::Neg => self.neg(),
            UnaryOp::Relu => self.relu(),
            UnaryOp::Softplus => self.softplus(),
            UnaryOp::Square => self.square(),
            UnaryOp::Sqrt => return self.sqrt(),
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        if let Some(v) = self.value().data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::DomainError(format!("log of nonpositive value {v}")));
        }
        Ok(self.unary(|x| x.ln(), |x, _| T::one() / x))
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        if let Some(v) = self.value().data().iter().find(|v| **v <= T::zero()) {
            return Err(Error::DomainError(format!("sqrt of nonpositive value {v}")));
        }
        Ok(self.unary(|x| x.sqrt(), |_, y| T::c(0.5) / y))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn softplus(self) -> Var<'t, T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Multiplication by a constant.
    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.tape()
            .op(out, &[self], Box::new(move |g, _| vec![Some(g.scale(s))]))
    }

    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + s);
        self.tape()
            .op(out, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }
}
