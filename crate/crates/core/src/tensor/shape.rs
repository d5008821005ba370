use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let xv = self.value();
        let out = xv.reshape(shape)?;
        let in_shape = xv.shape().to_vec();
        Ok(self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(g.reshape(in_shape.clone()).unwrap())]),
        ))
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(shape_err(format!(
                "slice {start}..{} out of range for extent {}",
                start + len,
                shape[axis]
            )));
        }
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut gx = Tensor::zeros(shape.clone());
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx.data_mut()[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of zero tensors"))?;
        let tape: &'t Tape<T> = first.tape();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rank = values[0].rank();
        if axis >= rank {
            return Err(Error::InvalidAxis { axis, rank });
        }
        for v in &values {
            let ok = v.rank() == rank
                && (0..rank).all(|i| i == axis || v.shape()[i] == values[0].shape()[i]);
            if !ok {
                return Err(shape_err(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    values[0].shape(),
                    v.shape()
                )));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let mut out_shape = values[0].shape().to_vec();
        out_shape[axis] = extents.iter().sum();
        let (outer, total, inner) = split_at_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(tape.op(
            out,
            parts,
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Tensor<T>>> = shapes
                    .iter()
                    .zip(needs)
                    .map(|(s, &n)| n.then(|| Tensor::zeros(s.clone())))
                    .collect();
                let gd = g.data();
                let mut pos = 0;
                for o in 0..outer {
                    for (gp, &e) in grads.iter_mut().zip(&extents) {
                        let chunk = e * inner;
                        if let Some(gp) = gp {
                            gp.data_mut()[o * chunk..(o + 1) * chunk]
                                .copy_from_slice(&gd[pos..pos + chunk]);
                        }
                        pos += chunk;
                    }
                }
                grads
            }),
        ))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let xv = self.value();
        let [r, c] = xv.shape() else {
            return Err(shape_err(format!(
                "transpose needs a matrix, got {:?}",
                xv.shape()
            )));
        };
        let (r, c) = (*r, *c);
        let tr = |d: &[T], r: usize, c: usize| Tensor::from_fn([c, r], |i| d[(i % r) * c + i / r]);
        let out = tr(xv.data(), r, c);
        Ok(self.tape().op(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(tr(g.data(), c, r))]),
        ))
    }
}
