//! Volume completion by alternating inference and generation with the
//! observed voxels clamped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Volume;
use crate::error::{shape_err, Error, Result};
use crate::genmodel::{Context, ProjectionKind};
use crate::inference::Model;
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Snapshot iterations kept by default: the first eight and the hundredth.
pub const DEFAULT_SNAPSHOTS: [usize; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 100];

/// `true` marks an observed voxel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    extents: [usize; 3],
    observed: Vec<bool>,
}

impl ObservationMask {
    pub fn new(extents: [usize; 3], observed: Vec<bool>) -> Result<Self> {
        if observed.len() != extents.iter().product::<usize>() {
            return Err(shape_err(format!(
                "{} mask entries for extents {extents:?}",
                observed.len()
            )));
        }
        Ok(Self { extents, observed })
    }

    pub fn all(extents: [usize; 3], observed: bool) -> Self {
        Self {
            extents,
            observed: vec![observed; extents.iter().product()],
        }
    }

    pub fn from_fn(extents: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(extents.iter().product());
        for z in 0..extents[0] {
            for y in 0..extents[1] {
                for x in 0..extents[2] {
                    observed.push(f(z, y, x));
                }
            }
        }
        Self { extents, observed }
    }

    /// The left half (`x < W/2`) hidden, the rest observed.
    pub fn left_half_hidden(extents: [usize; 3]) -> Self {
        Self::from_fn(extents, |_, _, x| x >= extents[2] / 2)
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn hidden_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }
}

fn check<T: Scalar>(model: &Model, x: &Tensor<T>, mask: &ObservationMask) -> Result<()> {
    let cfg = model.generator.config();
    if !matches!(cfg.projection, ProjectionKind::Identity) {
        return Err(Error::InvalidArgument(
            "completion needs a volumetric model with the identity projection".into(),
        ));
    }
    let s = x.shape();
    if s.len() != 4 || s[1..] != mask.extents {
        return Err(shape_err(format!(
            "chain states {s:?} do not match mask extents {:?}",
            mask.extents
        )));
    }
    if s[1..] != cfg.canvas_shape()[1..] {
        return Err(shape_err(format!(
            "chain states {s:?} do not match the model canvas {:?}",
            cfg.canvas_shape()
        )));
    }
    Ok(())
}

/// One transition for a batch of independent chains `x[B, D, H, W]`:
/// `z ~ q(z|x)`, then hidden voxels drawn from `p(x|z)`.
pub fn complete_step_batch<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    x: &Tensor<T>,
    mask: &ObservationMask,
    ctx: &Context<T>,
    rng: &mut impl Rng,
) -> Result<Tensor<T>> {
    check(model, x, mask)?;
    let batch = x.shape()[0];
    if mask.hidden_count() == 0 {
        return Ok(x.clone());
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let noise = model.draw_noise(rng, batch);
    let trace = model.trace(&p, tape.constant(x.clone()), ctx, &noise)?;
    let logits = model
        .generator
        .logits(&p, trace.canvas, &trace.state, &[])?
        .value();
    let mut out = x.clone();
    let per = mask.observed.len();
    for (i, (v, l)) in out.data_mut().iter_mut().zip(logits.data()).enumerate() {
        // one uniform per voxel keeps the stream aligned across masks
        let u: f64 = rng.gen();
        if !mask.observed[i % per] {
            let prob = 1.0 / (1.0 + (-l.to_f64_lossy()).exp());
            *v = if u < prob { T::one() } else { T::zero() };
        }
    }
    Ok(out)
}

/// Seed of step `i` of the chain started from `seed`.
pub fn step_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng.gen()
}

pub fn complete_step<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    x: &Volume,
    mask: &ObservationMask,
    seed: u64,
) -> Result<Volume> {
    let t = x.to_tensor::<T>().into_reshaped(batch_shape(x.extents()))?;
    let out = complete_step_batch(
        model,
        store,
        &t,
        mask,
        &Context::None,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    Volume::from_tensor(&out.into_reshaped(x.extents().to_vec())?)
}

fn batch_shape(e: [usize; 3]) -> [usize; 4] {
    [1, e[0], e[1], e[2]]
}

/// Observed voxels of `x` with hidden ones replaced by fair coin flips.
pub fn noise_init<T: Scalar>(
    x: &Tensor<T>,
    mask: &ObservationMask,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let per = mask.observed.len();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let coin = rng.gen_bool(0.5);
        if !mask.observed[i % per] {
            *v = if coin { T::one() } else { T::zero() };
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub init: Volume,
    /// `(iteration, state)` pairs, iteration 1 being the first transition.
    pub snapshots: Vec<(usize, Volume)>,
    pub last: Volume,
}

/// Runs `iters` transitions from the noise initialization, keeping the
/// states after the listed iterations.
pub fn complete<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    x_partial: &Volume,
    mask: &ObservationMask,
    iters: usize,
    snapshots: &[usize],
    seed: u64,
) -> Result<Chain> {
    if iters == 0 {
        return Err(Error::InvalidArgument(
            "completion needs at least one iteration".into(),
        ));
    }
    let e = x_partial.extents();
    let x = x_partial.to_tensor::<T>().into_reshaped(batch_shape(e))?;
    check(model, &x, mask)?;
    let init = Volume::from_tensor(
        &noise_init(&x, mask, &mut ChaCha8Rng::seed_from_u64(seed)).into_reshaped(e.to_vec())?,
    )?;
    let mut state = init.clone();
    let mut kept = Vec::new();
    for i in 0..iters {
        state = complete_step(model, store, &state, mask, step_seed(seed, i))?;
        if snapshots.contains(&(i + 1)) {
            kept.push((i + 1, state.clone()));
        }
    }
    Ok(Chain {
        init,
        snapshots: kept,
        last: state,
    })
}

/// Fraction of hidden voxels equal in `a` and `b` after binarization.
pub fn hidden_agreement(a: &Volume, b: &Volume, mask: &ObservationMask) -> f64 {
    let hidden = mask.hidden_count();
    if hidden == 0 {
        return 1.0;
    }
    let same = a
        .data()
        .iter()
        .zip(b.data())
        .zip(&mask.observed)
        .filter(|((p, q), &o)| !o && (**p >= 0.5) == (**q >= 0.5))
        .count();
    same as f64 / hidden as f64
}
