//! 2-D and 3-D cross-correlation via im2col + GEMM. The 2-D case runs
//! through the 3-D kernel with a unit depth axis.

use super::{Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    inp: [usize; 3],
    k: [usize; 3],
    out: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k.iter().product::<usize>()
    }
    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }
    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }

    /// Visits `(col_index, input_index)` pairs of the im2col matrix for one
    /// batch item, skipping padded taps.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [d, h, w] = self.inp;
        let [kd, kh, kw] = self.k;
        let [od, oh, ow] = self.out;
        let ov = self.out_vol();
        let mut row = 0;
        for c in 0..self.cin {
            for a in 0..kd {
                for b in 0..kh {
                    for e in 0..kw {
                        let col_base = row * ov;
                        for z in 0..od {
                            let iz = (z * self.stride[0] + a) as isize - self.pad[0] as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for y in 0..oh {
                                let iy = (y * self.stride[1] + b) as isize - self.pad[1] as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let in_row = ((c * d + iz as usize) * h + iy as usize) * w;
                                let out_row = col_base + (z * oh + y) * ow;
                                for x in 0..ow {
                                    let ix =
                                        (x * self.stride[2] + e) as isize - self.pad[2] as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    f(out_row + x, in_row + ix as usize);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|ci, xi| cols[ci] = x[xi]);
    }

    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        self.for_each_tap(|ci, xi| x[xi] += cols[ci]);
    }
}

fn geometry(x: &[usize], w: &[usize], dims: usize, stride: usize, pad: usize) -> Result<Geometry> {
    if stride < 1 {
        return Err(Error::InvalidStride(stride));
    }
    if dims != 2 && dims != 3 {
        return Err(shape_err(format!(
            "convolution supports 2 or 3 spatial dims, got {dims}"
        )));
    }
    if x.len() != dims + 2 || w.len() != dims + 2 {
        return Err(shape_err(format!(
            "{dims}-D conv expects rank {} input and weight, got {x:?} and {w:?}",
            dims + 2
        )));
    }
    if x[1] != w[1] {
        return Err(shape_err(format!(
            "input channels {} vs weight channels {}",
            x[1], w[1]
        )));
    }
    let lift = |s: &[usize]| -> [usize; 3] {
        if dims == 2 {
            [1, s[0], s[1]]
        } else {
            [s[0], s[1], s[2]]
        }
    };
    let inp = lift(&x[2..]);
    let k = lift(&w[2..]);
    let pad = if dims == 2 { [0, pad, pad] } else { [pad; 3] };
    let stride = if dims == 2 {
        [1, stride, stride]
    } else {
        [stride; 3]
    };
    let mut out = [0; 3];
    for i in 0..3 {
        let padded = inp[i] + 2 * pad[i];
        if k[i] > padded || k[i] == 0 {
            return Err(shape_err(format!(
                "kernel {w:?} larger than padded input {x:?}"
            )));
        }
        out[i] = (padded - k[i]) / stride[i] + 1;
    }
    Ok(Geometry {
        cin: x[1],
        inp,
        k,
        out,
        stride,
        pad,
    })
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Cross-correlation of `self: [B, Cin, (D,) H, W]` with
    /// `weight: [Cout, Cin, (kd,) kh, kw]`.
    pub fn conv(
        self,
        weight: Var<'t, T>,
        dims: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let xv = self.value();
        let wv = weight.value();
        let geo = geometry(xv.shape(), wv.shape(), dims, stride, pad)?;
        let batch = xv.shape()[0];
        let cout = wv.shape()[0];
        let (rows, ov, iv) = (geo.rows(), geo.out_vol(), geo.in_vol());
        let mut out_shape = vec![batch, cout];
        out_shape.extend_from_slice(if dims == 2 {
            &geo.out[1..]
        } else {
            &geo.out[..]
        });
        let mut out = Tensor::zeros(out_shape);
        let mut cols = vec![T::zero(); rows * ov];
        for b in 0..batch {
            geo.im2col(
                &xv.data()[b * geo.cin * iv..(b + 1) * geo.cin * iv],
                &mut cols,
            );
            T::gemm(
                cout,
                rows,
                ov,
                T::one(),
                wv.data(),
                rows as isize,
                1,
                &cols,
                ov as isize,
                1,
                T::zero(),
                &mut out.data_mut()[b * cout * ov..(b + 1) * cout * ov],
                ov as isize,
                1,
            );
        }
        Ok(self.tape().op(
            out,
            &[self, weight],
            Box::new(move |g, needs| {
                let gd = g.data();
                let mut gx = needs[0].then(|| Tensor::zeros(xv.shape().to_vec()));
                let mut gw = needs[1].then(|| Tensor::zeros(wv.shape().to_vec()));
                let mut cols = vec![T::zero(); rows * ov];
                for b in 0..batch {
                    let gb = &gd[b * cout * ov..(b + 1) * cout * ov];
                    if let Some(gw) = gw.as_mut() {
                        geo.im2col(
                            &xv.data()[b * geo.cin * iv..(b + 1) * geo.cin * iv],
                            &mut cols,
                        );
                        T::gemm(
                            cout,
                            ov,
                            rows,
                            T::one(),
                            gb,
                            ov as isize,
                            1,
                            &cols,
                            1,
                            ov as isize,
                            T::one(),
                            gw.data_mut(),
                            rows as isize,
                            1,
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        T::gemm(
                            rows,
                            cout,
                            ov,
                            T::one(),
                            wv.data(),
                            1,
                            rows as isize,
                            gb,
                            ov as isize,
                            1,
                            T::zero(),
                            &mut cols,
                            ov as isize,
                            1,
                        );
                        geo.col2im(
                            &cols,
                            &mut gx.data_mut()[b * geo.cin * iv..(b + 1) * geo.cin * iv],
                        );
                    }
                }
                vec![gx, gw]
            }),
        ))
    }
}
