//! Planar and volumetric spatial transformers.
//!
//! An affine map takes normalized output coordinates (uniform in `[-1, 1]`
//! per axis, corners aligned) to normalized input coordinates. The input
//! is resampled there with a separable hat kernel, so each output site is a
//! tensor product of 1-D linear interpolation weights. Samples outside the
//! input read as zero. Axis order is `(z, y, x)` for volumes and `(y, x)`
//! for images.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Row-major 3×3 linear map followed by a 3-vector translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams3<T>(pub [T; 12]);

/// Row-major 2×2 linear map followed by a 2-vector translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams2<T>(pub [T; 6]);

macro_rules! affine_impl {
    ($name:ident, $n:expr, $len:expr) => {
        impl<T: Scalar> $name<T> {
            pub const LEN: usize = $len;

            pub fn identity() -> Self {
                let mut p = [T::zero(); $len];
                for i in 0..$n {
                    p[i * $n + i] = T::one();
                }
                Self(p)
            }

            pub fn translation(t: [T; $n]) -> Self {
                let mut p = Self::identity();
                p.0[$n * $n..].copy_from_slice(&t);
                p
            }

            pub fn linear(&self, row: usize, col: usize) -> T {
                self.0[row * $n + col]
            }

            pub fn offset(&self, row: usize) -> T {
                self.0[$n * $n + row]
            }

            /// Maps a normalized output coordinate to a normalized input
            /// coordinate.
            pub fn apply(&self, u: [T; $n]) -> [T; $n] {
                let mut s = [T::zero(); $n];
                for r in 0..$n {
                    s[r] = self.offset(r);
                    for c in 0..$n {
                        s[r] += self.linear(r, c) * u[c];
                    }
                }
                s
            }

            /// The map `u ↦ self(inner(u))`.
            pub fn compose(&self, inner: &Self) -> Self {
                let mut p = [T::zero(); $len];
                for r in 0..$n {
                    for c in 0..$n {
                        for k in 0..$n {
                            p[r * $n + c] += self.linear(r, k) * inner.linear(k, c);
                        }
                    }
                    p[$n * $n + r] = self.offset(r);
                    for k in 0..$n {
                        p[$n * $n + r] += self.linear(r, k) * inner.offset(k);
                    }
                }
                Self(p)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            /// `[1, LEN]` tensor, ready to be broadcast over a batch.
            pub fn to_tensor(&self) -> Tensor<T> {
                Tensor::new([1, $len], self.0.to_vec()).unwrap()
            }

            pub fn from_slice(s: &[T]) -> Result<Self> {
                let arr: [T; $len] = s.try_into().map_err(|_| {
                    shape_err(format!(
                        "expected {} affine parameters, got {}",
                        $len,
                        s.len()
                    ))
                })?;
                Ok(Self(arr))
            }
        }
    };
}

affine_impl!(AffineParams3, 3, 12);
affine_impl!(AffineParams2, 2, 6);

impl<T: Scalar> AffineParams3<T> {
    /// Rotation by `angle` radians in the `(y, x)` plane, about the z axis.
    pub fn rotation_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([o, z, z, z, c, -s, z, s, c, z, z, z])
    }

    /// Rotation about the y axis (in the `(z, x)` plane).
    pub fn rotation_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([c, z, s, z, o, z, -s, z, c, z, z, z])
    }

    /// Rotation about the x axis (in the `(z, y)` plane).
    pub fn rotation_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self([c, -s, z, s, c, z, z, z, o, z, z, z])
    }

    pub fn determinant(&self) -> T {
        let a = |r, c| self.linear(r, c);
        a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
            - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
    }
}

/// Normalized coordinate of index `i` on an axis of extent `n`.
#[inline]
pub fn grid_coord<T: Scalar>(i: usize, n: usize) -> T {
    if n <= 1 {
        T::zero()
    } else {
        T::c(-1.0 + 2.0 * i as f64 / (n - 1) as f64)
    }
}

/// Source coordinates `A·(z, y, x) + t` for every output voxel, as a
/// `[D, H, W, 3]` tensor.
pub fn affine_grid_3d<T: Scalar>(p: &AffineParams3<T>, out: [usize; 3]) -> Tensor<T> {
    let [d, h, w] = out;
    let mut data = Vec::with_capacity(d * h * w * 3);
    for k in 0..d {
        for i in 0..h {
            for j in 0..w {
                data.extend_from_slice(&p.apply([
                    grid_coord(k, d),
                    grid_coord(i, h),
                    grid_coord(j, w),
                ]));
            }
        }
    }
    Tensor::new([d, h, w, 3], data).unwrap()
}

/// Two-tap hat kernel along one axis: lower index and both tap weights.
#[derive(Clone, Copy)]
struct Taps<T> {
    lo: isize,
    w: [T; 2],
}

#[inline]
fn taps<T: Scalar>(pos: T) -> Taps<T> {
    // grid-aligned samples land exactly on a voxel despite rounding
    let r = pos.round();
    let pos = if (pos - r).abs() <= T::epsilon() * T::c(64.0) * r.abs().max(T::one()) {
        r
    } else {
        pos
    };
    let f = pos.floor();
    let frac = pos - f;
    Taps {
        lo: f.to_isize().unwrap_or(isize::MIN / 2),
        w: [T::one() - frac, frac],
    }
}

/// Shared sampler for `N` spatial axes. `x` is `[B, C, S..]`, `params` is
/// `[B or 1, N·N + N]`.
struct Sampler<const N: usize> {
    batch: usize,
    channels: usize,
    inp: [usize; N],
    out: [usize; N],
    param_batch: usize,
}

impl<const N: usize> Sampler<N> {
    const PLEN: usize = N * N + N;

    fn new(xs: &[usize], ps: &[usize], out: [usize; N]) -> Result<Self> {
        if xs.len() != N + 2 {
            return Err(shape_err(format!(
                "sampler input must have rank {}, got {xs:?}",
                N + 2
            )));
        }
        if ps.len() != 2 || ps[1] != Self::PLEN || (ps[0] != xs[0] && ps[0] != 1) {
            return Err(shape_err(format!(
                "affine parameters must be [{} or 1, {}], got {ps:?}",
                xs[0],
                Self::PLEN
            )));
        }
        if out.iter().any(|&e| e == 0) || xs[2..].iter().any(|&e| e == 0) {
            return Err(shape_err(format!(
                "empty extents: input {xs:?}, output {out:?}"
            )));
        }
        let mut inp = [0; N];
        inp.copy_from_slice(&xs[2..]);
        Ok(Self {
            batch: xs[0],
            channels: xs[1],
            inp,
            out,
            param_batch: ps[0],
        })
    }

    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }

    /// Visits every output site of batch item `b` with its normalized base
    /// coordinate and per-axis taps in input index space.
    fn for_each_site<T: Scalar>(&self, p: &[T], mut f: impl FnMut(usize, &[T; N], &[Taps<T>; N])) {
        let mut idx = [0usize; N];
        let base: Vec<Vec<T>> = (0..N)
            .map(|k| {
                (0..self.out[k])
                    .map(|i| grid_coord(i, self.out[k]))
                    .collect()
            })
            .collect();
        let half = T::c(0.5);
        for o in 0..self.out_vol() {
            let mut u = [T::zero(); N];
            for k in 0..N {
                u[k] = base[k][idx[k]];
            }
            let mut t = [Taps {
                lo: 0,
                w: [T::zero(); 2],
            }; N];
            for r in 0..N {
                let mut s = p[N * N + r];
                for c in 0..N {
                    s += p[r * N + c] * u[c];
                }
                let scale = T::c((self.inp[r] - 1) as f64) * half;
                t[r] = taps((s + T::one()) * scale);
            }
            f(o, &u, &t);
            for k in (0..N).rev() {
                idx[k] += 1;
                if idx[k] < self.out[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Visits the in-range corners of one site: flat input offset, the
    /// product weight, and which tap (0 or 1) was taken on each axis.
    #[inline]
    fn for_each_corner<T: Scalar>(
        &self,
        t: &[Taps<T>; N],
        mut f: impl FnMut(usize, T, [usize; N]),
    ) {
        'corner: for mask in 0..(1usize << N) {
            let mut off = 0usize;
            let mut w = T::one();
            let mut which = [0usize; N];
            for k in 0..N {
                let bit = (mask >> (N - 1 - k)) & 1;
                let i = t[k].lo + bit as isize;
                if i < 0 || i >= self.inp[k] as isize {
                    continue 'corner;
                }
                off = off * self.inp[k] + i as usize;
                w *= t[k].w[bit];
                which[k] = bit;
            }
            f(off, w, which);
        }
    }

    fn forward<T: Scalar>(&self, x: &[T], p: &[T]) -> Vec<T> {
        let (iv, ov, ch) = (self.in_vol(), self.out_vol(), self.channels);
        let mut out = vec![T::zero(); self.batch * ch * ov];
        for b in 0..self.batch {
            let pb = &p[(b % self.param_batch) * Self::PLEN..][..Self::PLEN];
            let xb = &x[b * ch * iv..(b + 1) * ch * iv];
            let ob = &mut out[b * ch * ov..(b + 1) * ch * ov];
            self.for_each_site(pb, |o, _, t| {
                self.for_each_corner(t, |off, w, _| {
                    if w != T::zero() {
                        for c in 0..ch {
                            ob[c * ov + o] += w * xb[c * iv + off];
                        }
                    }
                });
            });
        }
        out
    }

    fn backward<T: Scalar>(
        &self,
        g: &[T],
        x: &[T],
        p: &[T],
        gx: Option<&mut [T]>,
        gp: Option<&mut [T]>,
    ) {
        let (iv, ov, ch) = (self.in_vol(), self.out_vol(), self.channels);
        let mut gx = gx;
        let mut gp = gp;
        let half = T::c(0.5);
        for b in 0..self.batch {
            let prow = (b % self.param_batch) * Self::PLEN;
            let pb = &p[prow..prow + Self::PLEN];
            let xb = &x[b * ch * iv..(b + 1) * ch * iv];
            let gb = &g[b * ch * ov..(b + 1) * ch * ov];
            let mut dparams = [T::zero(); 12];
            self.for_each_site(pb, |o, u, t| {
                let mut dpos = [T::zero(); N];
                self.for_each_corner(t, |off, w, which| {
                    if let Some(gx) = gx.as_deref_mut() {
                        if w != T::zero() {
                            let gxb = &mut gx[b * ch * iv..(b + 1) * ch * iv];
                            for c in 0..ch {
                                gxb[c * iv + off] += w * gb[c * ov + o];
                            }
                        }
                    }
                    if gp.is_some() {
                        let mut gxdot = T::zero();
                        for c in 0..ch {
                            gxdot += gb[c * ov + o] * xb[c * iv + off];
                        }
                        for k in 0..N {
                            let mut dw = if which[k] == 0 { -T::one() } else { T::one() };
                            for j in 0..N {
                                if j != k {
                                    dw *= t[j].w[which[j]];
                                }
                            }
                            dpos[k] += gxdot * dw;
                        }
                    }
                });
                if gp.is_some() {
                    for r in 0..N {
                        let ds = dpos[r] * T::c((self.inp[r] - 1) as f64) * half;
                        for c in 0..N {
                            dparams[r * N + c] += ds * u[c];
                        }
                        dparams[N * N + r] += ds;
                    }
                }
            });
            if let Some(gp) = gp.as_deref_mut() {
                for (dst, src) in gp[prow..prow + Self::PLEN].iter_mut().zip(&dparams) {
                    *dst += *src;
                }
            }
        }
    }
}

fn sample<'t, T: Scalar, const N: usize>(
    x: Var<'t, T>,
    params: Var<'t, T>,
    out: [usize; N],
) -> Result<Var<'t, T>> {
    let (xv, pv) = (x.value(), params.value());
    let s = Sampler::<N>::new(xv.shape(), pv.shape(), out)?;
    let mut shape = vec![s.batch, s.channels];
    shape.extend_from_slice(&out);
    let value = Tensor::new(shape, s.forward(xv.data(), pv.data()))?;
    Ok(x.tape().op(
        value,
        &[x, params],
        Box::new(move |g, needs| {
            let mut gx = needs[0].then(|| Tensor::zeros(xv.shape().to_vec()));
            let mut gp = needs[1].then(|| Tensor::zeros(pv.shape().to_vec()));
            s.backward(
                g.data(),
                xv.data(),
                pv.data(),
                gx.as_mut().map(|t| t.data_mut()),
                gp.as_mut().map(|t| t.data_mut()),
            );
            vec![gx, gp]
        }),
    ))
}

/// Trilinear resampling of `x[B, C, D, H, W]` at the affine grid given by
/// `params[B or 1, 12]`. Differentiable in both `x` and `params`.
pub fn vst_sample<'t, T: Scalar>(
    x: Var<'t, T>,
    params: Var<'t, T>,
    out: [usize; 3],
) -> Result<Var<'t, T>> {
    sample(x, params, out)
}

/// Bilinear resampling of `x[B, C, H, W]` with `params[B or 1, 6]`.
pub fn st_sample_2d<'t, T: Scalar>(
    x: Var<'t, T>,
    params: Var<'t, T>,
    out: [usize; 2],
) -> Result<Var<'t, T>> {
    sample(x, params, out)
}

/// Dispatches on the number of spatial axes in `out` (2 or 3).
pub fn sample_nd<'t, T: Scalar>(
    x: Var<'t, T>,
    params: Var<'t, T>,
    out: &[usize],
) -> Result<Var<'t, T>> {
    match *out {
        [h, w] => sample(x, params, [h, w]),
        [d, h, w] => sample(x, params, [d, h, w]),
        _ => Err(shape_err(format!(
            "sampling supports 2 or 3 spatial axes, got {out:?}"
        ))),
    }
}

/// Identity parameters for `n` spatial axes as a `[1, n·n + n]` tensor.
pub fn identity_params<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::from_fn([1, n * n + n], |i| {
        if i < n * n && i % (n + 1) == 0 {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Additive write: `canvas + vst_sample(content, params, canvas extents)`.
pub fn vst_write<'t, T: Scalar>(
    canvas: Var<'t, T>,
    content: Var<'t, T>,
    params: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let cs = canvas.shape();
    let ks = content.shape();
    if cs.len() != 5 || ks.len() != 5 || cs[..2] != ks[..2] {
        return Err(shape_err(format!(
            "canvas {cs:?} and content {ks:?} are incompatible"
        )));
    }
    canvas.add(vst_sample(content, params, [cs[2], cs[3], cs[4]])?)
}

/// Unbatched resampling of a plain `[C, D, H, W]` tensor.
pub fn resample_volume<T: Scalar>(
    x: &Tensor<T>,
    p: &AffineParams3<T>,
    out: [usize; 3],
) -> Result<Tensor<T>> {
    let mut xs = vec![1];
    xs.extend_from_slice(x.shape());
    let s = Sampler::<3>::new(&xs, &[1, 12], out)?;
    let mut shape = vec![s.channels];
    shape.extend_from_slice(&out);
    Tensor::new(shape, s.forward(x.data(), &p.0))
}

/// Unbatched resampling of a plain `[C, H, W]` tensor.
pub fn resample_image<T: Scalar>(
    x: &Tensor<T>,
    p: &AffineParams2<T>,
    out: [usize; 2],
) -> Result<Tensor<T>> {
    let mut xs = vec![1];
    xs.extend_from_slice(x.shape());
    let s = Sampler::<2>::new(&xs, &[1, 6], out)?;
    let mut shape = vec![s.channels];
    shape.extend_from_slice(&out);
    Tensor::new(shape, s.forward(x.data(), &p.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tape};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + seed) * 1.37).sin())
    }

    #[test]
    fn identity_grid_hits_the_corners() {
        let g = affine_grid_3d(&AffineParams3::<f64>::identity(), [2, 2, 2]);
        for (n, corner) in g.data().chunks(3).enumerate() {
            let expected =
                [(n >> 2) & 1, (n >> 1) & 1, n & 1].map(|b| if b == 1 { 1.0 } else { -1.0 });
            assert_eq!(corner, expected);
        }
    }

    #[test]
    fn translation_shifts_x_coordinates() {
        let base = affine_grid_3d(&AffineParams3::<f64>::identity(), [3, 2, 4]);
        let moved = affine_grid_3d(&AffineParams3::translation([0.0, 0.0, 0.5]), [3, 2, 4]);
        for (a, b) in base.data().chunks(3).zip(moved.data().chunks(3)) {
            assert_eq!([a[0], a[1], a[2] + 0.5], b);
        }
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let q = AffineParams3::<f64>::rotation_z(PI / 2.0);
        let twice = affine_grid_3d(&q.compose(&q), [3, 4, 5]);
        let half = affine_grid_3d(&AffineParams3::rotation_z(PI), [3, 4, 5]);
        assert!(twice.max_abs_diff(&half) < 1e-6);
        // a half turn negates y and x
        let id = affine_grid_3d(&AffineParams3::<f64>::identity(), [3, 4, 5]);
        for (a, b) in id.data().chunks(3).zip(half.data().chunks(3)) {
            assert!(
                (a[0] - b[0]).abs() < 1e-12
                    && (a[1] + b[1]).abs() < 1e-12
                    && (a[2] + b[2]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn identity_resampling_is_exact() {
        let x = random(&[2, 3, 4, 5], 0.3);
        let y = resample_volume(&x, &AffineParams3::identity(), [3, 4, 5]).unwrap();
        assert_eq!(y, x);
        let img = random(&[2, 6, 7], 0.1);
        assert_eq!(
            resample_image(&img, &AffineParams2::identity(), [6, 7]).unwrap(),
            img
        );
    }

    #[test]
    fn one_voxel_translation_is_an_index_shift() {
        let n = 5;
        let x = random(&[1, n, n, n], 1.0);
        // one voxel pitch is 2/(n-1) in normalized units
        let pitch = 2.0 / (n - 1) as f64;
        let y = resample_volume(
            &x,
            &AffineParams3::translation([0.0, pitch, 0.0]),
            [n, n, n],
        )
        .unwrap();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let expected = if i + 1 < n {
                        x.at(&[0, k, i + 1, j])
                    } else {
                        0.0
                    };
                    assert!((y.at(&[0, k, i, j]) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shrunken_constant_image_stays_constant_inside() {
        let img = Tensor::full([1, 9, 9], 0.7);
        let mut p = AffineParams2::<f64>::identity();
        p.0[0] = 0.5;
        p.0[3] = 0.5;
        let y = resample_image(&img, &p, [9, 9]).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn out_of_range_reads_zero() {
        let x = Tensor::<f64>::ones([1, 4, 4, 4]);
        let y =
            resample_volume(&x, &AffineParams3::translation([5.0, 0.0, 0.0]), [4, 4, 4]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_parameter_shapes() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros([2, 1, 3, 3, 3]));
        assert!(vst_sample(x, tape.constant(Tensor::zeros([2, 6])), [3, 3, 3]).is_err());
        assert!(vst_sample(x, tape.constant(Tensor::zeros([3, 12])), [3, 3, 3]).is_err());
        assert!(vst_sample(x, tape.constant(Tensor::zeros([2, 12])), [0, 3, 3]).is_err());
        let canvas = tape.constant(Tensor::zeros([2, 2, 3, 3, 3]));
        assert!(vst_write(canvas, x, tape.constant(Tensor::zeros([2, 12]))).is_err());
    }

    fn jittered_params3(seed: f64) -> Tensor<f64> {
        let mut p = AffineParams3::<f64>::rotation_z(0.4)
            .compose(&AffineParams3::rotation_x(-0.3))
            .0;
        for (i, v) in p.iter_mut().enumerate() {
            *v *= 0.8;
            *v += 0.05 * ((i as f64 + seed) * 2.3).sin();
        }
        Tensor::new([1, 12], p.to_vec()).unwrap()
    }

    #[test]
    fn volume_gradients_match_finite_differences() {
        let x = random(&[1, 1, 4, 4, 4], 0.5);
        let p = jittered_params3(0.0);
        let err = grad_check_many(
            |_, v| {
                let y = vst_sample(v[0], v[1], [3, 4, 5])?;
                Ok(y.square().sum_all())
            },
            &[x, p],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn batched_volume_gradients_match_finite_differences() {
        let x = random(&[2, 2, 3, 4, 3], 0.9);
        let p = Tensor::new(
            [2, 12],
            [
                jittered_params3(1.0).into_data(),
                jittered_params3(2.0).into_data(),
            ]
            .concat(),
        )
        .unwrap();
        let w = random(&[2, 2, 4, 3, 3], 0.2);
        let err = grad_check_many(
            |tape, v| {
                let y = vst_sample(v[0], v[1], [4, 3, 3])?;
                Ok(y.mul(tape.constant(w.clone()))?.sum_all())
            },
            &[x, p],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn image_gradients_match_finite_differences() {
        let x = random(&[1, 2, 5, 6], 0.7);
        let p = Tensor::from_f64([1, 6], &[0.7, 0.2, -0.15, 0.9, 0.11, -0.07]).unwrap();
        let err = grad_check_many(
            |_, v| Ok(st_sample_2d(v[0], v[1], [4, 5])?.square().sum_all()),
            &[x, p],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn writes_are_additive() {
        let tape = Tape::<f64>::new();
        let canvas = tape.constant(random(&[1, 1, 4, 4, 4], 0.4));
        let zero = tape.constant(Tensor::zeros([1, 1, 2, 2, 2]));
        let id = tape.constant(AffineParams3::identity().to_tensor());
        let same = vst_write(canvas, zero, id).unwrap();
        assert_eq!(*same.value(), *canvas.value());

        let content = tape.constant(random(&[1, 1, 4, 4, 4], 0.8));
        let empty = tape.constant(Tensor::zeros([1, 1, 4, 4, 4]));
        assert_eq!(
            *vst_write(empty, content, id).unwrap().value(),
            *content.value()
        );

        let a = tape.constant(random(&[1, 1, 2, 3, 2], 1.5));
        let b = tape.constant(random(&[1, 1, 3, 2, 2], 2.5));
        let pa = tape.constant(jittered_params3(3.0));
        let pb = tape.constant(jittered_params3(4.0));
        let ab = vst_write(vst_write(canvas, a, pa).unwrap(), b, pb).unwrap();
        let ba = vst_write(vst_write(canvas, b, pb).unwrap(), a, pa).unwrap();
        assert!(ab.value().max_abs_diff(&ba.value()) < 1e-6);
    }

    proptest! {
        #[test]
        fn sampling_is_linear(seed in 0.0f64..100.0, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let x = random(&[2, 4, 3, 5], seed);
            let y = random(&[2, 4, 3, 5], seed + 7.0);
            let p = AffineParams3::from_slice(jittered_params3(seed).data()).unwrap();
            let mix = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
            let lhs = resample_volume(&mix, &p, [3, 3, 3]).unwrap();
            let sx = resample_volume(&x, &p, [3, 3, 3]).unwrap();
            let sy = resample_volume(&y, &p, [3, 3, 3]).unwrap();
            let rhs = sx.zip_map(&sy, |a, b| alpha * a + beta * b).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-6);
        }

        #[test]
        fn integer_translation_conserves_interior_mass(
            shift in (-2i32..=2, -2i32..=2, -2i32..=2),
            seed in 0.0f64..10.0,
        ) {
            let n = 9;
            // content lives in the central 3³ block, far from the border
            let x = Tensor::from_fn([1, n, n, n], |i| {
                let (k, r, c) = (i / (n * n), (i / n) % n, i % n);
                if (3..6).contains(&k) && (3..6).contains(&r) && (3..6).contains(&c) {
                    ((i as f64 + seed) * 0.77).cos().abs()
                } else {
                    0.0
                }
            });
            let pitch = 2.0 / (n - 1) as f64;
            let t = [shift.0 as f64 * pitch, shift.1 as f64 * pitch, shift.2 as f64 * pitch];
            let y = resample_volume(&x, &AffineParams3::translation(t), [n, n, n]).unwrap();
            prop_assert!((y.sum() - x.sum()).abs() < 1e-9);
        }
    }
}
