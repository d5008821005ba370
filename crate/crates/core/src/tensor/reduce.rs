use super::{strides, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// For every flat input index, the flat index of its reduction bucket.
fn bucket_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &e)| e)
        .collect();
    let out_strides = strides(&out_shape);
    let mut s = vec![0usize; shape.len()];
    let mut k = 0;
    for (i, slot) in s.iter_mut().enumerate() {
        if !axes.contains(&i) {
            *slot = out_strides[k];
            k += 1;
        }
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            off += s[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= s[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, map)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Reduces over `axes`, removing them from the shape. Max routes the
    /// gradient to the first maximal element in row-major order.
    pub fn reduce(self, op: ReduceOp, axes: &[usize]) -> Result<Var<'t, T>> {
        let xv = self.value();
        let rank = xv.rank();
        if let Some(&axis) = axes.iter().find(|&&a| a >= rank) {
            return Err(Error::InvalidAxis { axis, rank });
        }
        let (out_shape, map) = bucket_map(xv.shape(), axes);
        let count: usize = axes
            .iter()
            .map(|&a| xv.shape()[a])
            .product::<usize>()
            .max(1);
        let mut out = Tensor::full(
            out_shape.clone(),
            if op == ReduceOp::Max {
                T::neg_infinity()
            } else {
                T::zero()
            },
        );
        let mut argmax = vec![usize::MAX; out.numel()];
        {
            let od = out.data_mut();
            for (i, (&v, &o)) in xv.data().iter().zip(&map).enumerate() {
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => od[o] += v,
                    ReduceOp::Max => {
                        if argmax[o] == usize::MAX || v > od[o] {
                            od[o] = v;
                            argmax[o] = i;
                        }
                    }
                }
            }
            if op == ReduceOp::Mean {
                let inv = T::one() / T::c(count as f64);
                od.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let in_shape = xv.shape().to_vec();
        Ok(self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| {
                let gd = g.data();
                let mut gx = Tensor::zeros(in_shape.clone());
                let gxd = gx.data_mut();
                match op {
                    ReduceOp::Sum => map.iter().zip(gxd).for_each(|(&o, v)| *v = gd[o]),
                    ReduceOp::Mean => {
                        let inv = T::one() / T::c(count as f64);
                        map.iter().zip(gxd).for_each(|(&o, v)| *v = gd[o] * inv)
                    }
                    ReduceOp::Max => {
                        for (o, &i) in argmax.iter().enumerate() {
                            if i != usize::MAX {
                                gxd[i] = gd[o];
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Sum, axes)
    }

    pub fn mean(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Mean, axes)
    }

    pub fn max(self, axes: &[usize]) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Max, axes)
    }

    /// Sum of every element, as a rank-0 var.
    pub fn sum_all(self) -> Var<'t, T> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        let out = Tensor::scalar(xv.sum());
        self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = T::c(self.numel() as f64);
        self.sum_all().scale(T::one() / n)
    }
}
