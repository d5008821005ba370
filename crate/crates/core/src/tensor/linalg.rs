use super::{Tensor, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(shape_err(format!("{what} must be a matrix, got {shape:?}"))),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Matrix product `[M,K]·[K,N]`.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let av = self.value();
        let bv = other.value();
        let (m, k) = dims2(av.shape(), "lhs")?;
        let (k2, n) = dims2(bv.shape(), "rhs")?;
        if k != k2 {
            return Err(shape_err(format!(
                "matmul {:?}·{:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = Tensor::zeros([m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            av.data(),
            k as isize,
            1,
            bv.data(),
            n as isize,
            1,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        Ok(self.tape().op(
            out,
            &[self, other],
            Box::new(move |g, needs| {
                let gd = g.data();
                // grad_a = g·bᵀ
                let ga = needs[0].then(|| {
                    let mut ga = Tensor::zeros([m, k]);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gd,
                        n as isize,
                        1,
                        bv.data(),
                        1,
                        n as isize,
                        T::zero(),
                        ga.data_mut(),
                        k as isize,
                        1,
                    );
                    ga
                });
                // grad_b = aᵀ·g
                let gb = needs[1].then(|| {
                    let mut gb = Tensor::zeros([k, n]);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        av.data(),
                        1,
                        k as isize,
                        gd,
                        n as isize,
                        1,
                        T::zero(),
                        gb.data_mut(),
                        n as isize,
                        1,
                    );
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Affine map `x·Wᵀ + b` with `x: [B,in]`, `W: [out,in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let (batch, fin) = dims2(xv.shape(), "linear input")?;
        let (fout, fin2) = dims2(wv.shape(), "linear weight")?;
        if fin != fin2 {
            return Err(shape_err(format!(
                "linear input {:?} vs weight {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let bv = bias.map(|b| b.value());
        if let Some(bv) = &bv {
            if bv.shape() != [fout] {
                return Err(shape_err(format!(
                    "bias {:?} for {} outputs",
                    bv.shape(),
                    fout
                )));
            }
        }
        let mut out = Tensor::zeros([batch, fout]);
        if let Some(bv) = &bv {
            for row in out.data_mut().chunks_exact_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if bv.is_some() { T::one() } else { T::zero() };
        T::gemm(
            batch,
            fin,
            fout,
            T::one(),
            xv.data(),
            fin as isize,
            1,
            wv.data(),
            1,
            fin as isize,
            beta,
            out.data_mut(),
            fout as isize,
            1,
        );
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape().op(
            out,
            &inputs,
            Box::new(move |g, needs| {
                let gd = g.data();
                let gx = needs[0].then(|| {
                    let mut gx = Tensor::zeros([batch, fin]);
                    T::gemm(
                        batch,
                        fout,
                        fin,
                        T::one(),
                        gd,
                        fout as isize,
                        1,
                        wv.data(),
                        fin as isize,
                        1,
                        T::zero(),
                        gx.data_mut(),
                        fin as isize,
                        1,
                    );
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = Tensor::zeros([fout, fin]);
                    T::gemm(
                        fout,
                        batch,
                        fin,
                        T::one(),
                        gd,
                        1,
                        fout as isize,
                        xv.data(),
                        fin as isize,
                        1,
                        T::zero(),
                        gw.data_mut(),
                        fin as isize,
                        1,
                    );
                    gw
                });
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    let mut gb = Tensor::zeros([fout]);
                    for row in gd.chunks_exact(fout) {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }
}
