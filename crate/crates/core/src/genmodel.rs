//! The sequential generative process: Gaussian latents drive an LSTM whose
//! state writes additive updates into a canvas, which a projection maps to
//! the parameters of the observation likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Bound, LstmCell, LstmState, Mlp, ParamId, ParamStore};
use crate::projection::{identity_logits, CameraConfig, CameraNet};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::vst::{identity_params, st_sample_2d, vst_write};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodKind {
    Bernoulli,
    /// Gaussian with means `sigmoid(logits)` and one global standard
    /// deviation, fixed or learned.
    DiagonalGaussian {
        sigma: f64,
        learn_sigma: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextKind {
    None,
    ClassOnehot {
        classes: usize,
    },
    /// `count` images of `extent`, each taken by one of `cameras` fixed
    /// cameras. Each view is read through a `glimpse²` attention window and
    /// a `channels`-wide convolution.
    Views {
        cameras: usize,
        count: usize,
        extent: [usize; 2],
        glimpse: usize,
        channels: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    /// Canvas `[F, D, H, W]`; each step writes a `patch`-sized block placed
    /// by the volumetric transformer.
    Volume {
        channels: usize,
        extents: [usize; 3],
        patch: [usize; 3],
    },
    /// Canvas is a flat parameter vector of `size` entries.
    Mesh { size: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionKind {
    Identity,
    Camera(CameraConfig),
    /// External, non-differentiable renderer (mesh mode).
    Renderer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeConfig {
    pub steps: usize,
    pub latent_dim: usize,
    pub hidden_size: usize,
    pub context_dim: usize,
    pub representation: Representation,
    pub projection: ProjectionKind,
    pub likelihood: LikelihoodKind,
    pub context: ContextKind,
}

impl GenerativeConfig {
    pub fn volume(
        extents: [usize; 3],
        patch: [usize; 3],
        steps: usize,
        latent_dim: usize,
        hidden_size: usize,
    ) -> Self {
        Self {
            steps,
            latent_dim,
            hidden_size,
            context_dim: 16,
            representation: Representation::Volume {
                channels: 1,
                extents,
                patch,
            },
            projection: ProjectionKind::Identity,
            likelihood: LikelihoodKind::Bernoulli,
            context: ContextKind::None,
        }
    }

    pub fn mesh(size: usize, latent_dim: usize, hidden_size: usize) -> Self {
        Self {
            steps: 1,
            latent_dim,
            hidden_size,
            context_dim: 16,
            representation: Representation::Mesh { size },
            projection: ProjectionKind::Renderer,
            likelihood: LikelihoodKind::DiagonalGaussian {
                sigma: 0.1,
                learn_sigma: false,
            },
            context: ContextKind::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps == 0 || self.latent_dim == 0 || self.hidden_size == 0 || self.context_dim == 0
        {
            return bad("steps, latent_dim, hidden_size and context_dim must be at least 1");
        }
        match (&self.representation, &self.projection) {
            (
                Representation::Volume {
                    channels,
                    extents,
                    patch,
                },
                ProjectionKind::Identity | ProjectionKind::Camera(_),
            ) => {
                if *channels == 0 || extents.contains(&0) || patch.contains(&0) {
                    return bad("volume channels and extents must be positive");
                }
            }
            (Representation::Mesh { size }, ProjectionKind::Renderer) => {
                if *size == 0 {
                    return bad("mesh parameter size must be positive");
                }
            }
            _ => return bad("volumes need an identity or camera projection, meshes the renderer"),
        }
        if let ProjectionKind::Camera(c) = &self.projection {
            c.validate()?;
        }
        if let LikelihoodKind::DiagonalGaussian { sigma, .. } = self.likelihood {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad("Gaussian sigma must be positive");
            }
        }
        match &self.context {
            ContextKind::ClassOnehot { classes: 0 } => {
                bad("class context needs at least one class")
            }
            ContextKind::Views {
                cameras,
                count,
                extent,
                glimpse,
                channels,
            } if *cameras == 0
                || *count == 0
                || extent.contains(&0)
                || *glimpse == 0
                || *channels == 0 =>
            {
                bad("view context extents must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Shape of one canvas without the batch axis.
    pub fn canvas_shape(&self) -> Vec<usize> {
        match &self.representation {
            Representation::Volume {
                channels, extents, ..
            } => vec![*channels, extents[0], extents[1], extents[2]],
            Representation::Mesh { size } => vec![*size],
        }
    }
}

/// Observed side information for a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Context<T> {
    None,
    /// One class label per batch item.
    Class(Vec<usize>),
    /// `images[B, V, h, w]`, view `v` taken by camera `cameras[v]`.
    Views {
        cameras: Vec<usize>,
        images: Tensor<T>,
    },
}

impl<T: Scalar> Context<T> {
    /// Restricts the context to batch items `start..start+len`.
    pub fn batch_slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(match self {
            Context::None => Context::None,
            Context::Class(l) => Context::Class(l[start..start + len].to_vec()),
            Context::Views { cameras, images } => {
                let per = images.numel() / images.shape()[0];
                let mut shape = images.shape().to_vec();
                shape[0] = len;
                Context::Views {
                    cameras: cameras.clone(),
                    images: Tensor::new(
                        shape,
                        images.data()[start * per..(start + len) * per].to_vec(),
                    )?,
                }
            }
        })
    }

    /// Repeats every batch item `n` times in place (`[a, a, b, b, ...]`).
    pub fn repeat_each(&self, n: usize) -> Result<Self> {
        Ok(match self {
            Context::None => Context::None,
            Context::Class(l) => Context::Class(
                l.iter()
                    .flat_map(|&c| std::iter::repeat(c).take(n))
                    .collect(),
            ),
            Context::Views { cameras, images } => Context::Views {
                cameras: cameras.clone(),
                images: repeat_each(images, n)?,
            },
        })
    }
}

/// Repeats every leading-axis item of `x` `n` times in place.
pub fn repeat_each<T: Scalar>(x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let per = x.numel() / x.shape()[0].max(1);
    let mut shape = x.shape().to_vec();
    shape[0] *= n;
    let data = x
        .data()
        .chunks(per.max(1))
        .flat_map(|c| std::iter::repeat(c).take(n).flatten().copied())
        .collect();
    Tensor::new(shape, data)
}

/// `[labels.len(), classes]` one-hot rows.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros([labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::ContextMismatch(format!(
                "class {l} out of {classes}"
            )));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

#[derive(Clone, Debug)]
struct ViewReader {
    cameras: usize,
    count: usize,
    glimpse: usize,
    channels: usize,
    attention: (ParamId, ParamId),
    conv: (ParamId, ParamId),
    project: (ParamId, ParamId),
    camera_embedding: ParamId,
}

#[derive(Clone, Debug)]
enum ContextEncoder {
    None,
    Class { classes: usize, embedding: ParamId },
    Views(ViewReader),
}

#[derive(Clone, Debug)]
enum Writer {
    Volume {
        content: Mlp,
        placement: Mlp,
        channels: usize,
        patch: [usize; 3],
    },
    Mesh {
        head: Mlp,
    },
}

#[derive(Clone, Debug)]
pub enum Projection {
    Identity,
    Camera(CameraNet),
    Renderer,
}

/// Generative network: context reader, state transition, write head and
/// projection. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GenerativeConfig,
    lstm: LstmCell,
    context: ContextEncoder,
    writer: Writer,
    projection: Projection,
    log_sigma: Option<ParamId>,
}

fn zero_mlp<T: Scalar>(store: &mut ParamStore<T>, mlp: &Mlp) {
    for (w, b) in mlp.weight_ids() {
        *store.value_mut(w) = store.value(w).map(|_| T::zero());
        *store.value_mut(b) = store.value(b).map(|_| T::zero());
    }
}

impl Generator {
    /// Attention and placement heads start at zero, so the first writes
    /// and glimpses use the identity transform.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &GenerativeConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (k, h, e) = (cfg.latent_dim, cfg.hidden_size, cfg.context_dim);
        let context = match &cfg.context {
            ContextKind::None => ContextEncoder::None,
            ContextKind::ClassOnehot { classes } => ContextEncoder::Class {
                classes: *classes,
                embedding: store.add_glorot(
                    "gen.context.embedding",
                    [e, *classes],
                    *classes,
                    e,
                    rng,
                ),
            },
            &ContextKind::Views {
                cameras,
                count,
                glimpse,
                channels,
                ..
            } => {
                let feat = count * channels * glimpse * glimpse;
                ContextEncoder::Views(ViewReader {
                    cameras,
                    count,
                    glimpse,
                    channels,
                    attention: (
                        store.add_zeros("gen.context.attention.weight", [6, h]),
                        store.add_zeros("gen.context.attention.bias", [6]),
                    ),
                    conv: (
                        store.add_glorot(
                            "gen.context.conv.weight",
                            [channels, 1, 3, 3],
                            9,
                            channels * 9,
                            rng,
                        ),
                        store.add_zeros("gen.context.conv.bias", [channels]),
                    ),
                    project: (
                        store.add_glorot("gen.context.project.weight", [e, feat], feat, e, rng),
                        store.add_zeros("gen.context.project.bias", [e]),
                    ),
                    camera_embedding: store.add_zeros("gen.context.cameras", [cameras, e]),
                })
            }
        };
        let lstm = LstmCell::new(store, "gen.lstm", k + e, h, rng);
        let writer = match &cfg.representation {
            Representation::Volume {
                channels, patch, ..
            } => {
                let size = channels * patch.iter().product::<usize>();
                let content = Mlp::new(
                    store,
                    "gen.write.content",
                    &[h, size],
                    &[Activation::Identity],
                    rng,
                );
                let placement = Mlp::new(
                    store,
                    "gen.write.placement",
                    &[h, 12],
                    &[Activation::Identity],
                    rng,
                );
                zero_mlp(store, &placement);
                Writer::Volume {
                    content,
                    placement,
                    channels: *channels,
                    patch: *patch,
                }
            }
            Representation::Mesh { size } => Writer::Mesh {
                head: Mlp::new(
                    store,
                    "gen.write.mesh",
                    &[h, *size],
                    &[Activation::Identity],
                    rng,
                ),
            },
        };
        let projection = match (&cfg.projection, &cfg.representation) {
            (ProjectionKind::Identity, _) => Projection::Identity,
            (
                ProjectionKind::Camera(c),
                Representation::Volume {
                    channels, extents, ..
                },
            ) => Projection::Camera(CameraNet::new(
                store,
                "gen.camera",
                c,
                *channels,
                *extents,
                h,
                rng,
            )?),
            _ => Projection::Renderer,
        };
        let log_sigma = match cfg.likelihood {
            LikelihoodKind::DiagonalGaussian {
                sigma,
                learn_sigma: true,
            } => Some(store.add("gen.log_sigma", Tensor::scalar(T::c(sigma.ln())))),
            _ => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            lstm,
            context,
            writer,
            projection,
            log_sigma,
        })
    }

    pub fn config(&self) -> &GenerativeConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn initial_state<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        batch: usize,
    ) -> LstmState<'t, T> {
        LstmState::zeros(tape, batch, self.cfg.hidden_size)
    }

    pub fn initial_canvas<'t, T: Scalar>(&self, tape: &'t Tape<T>, batch: usize) -> Var<'t, T> {
        let mut shape = vec![batch];
        shape.extend(self.cfg.canvas_shape());
        tape.constant(Tensor::zeros(shape))
    }

    /// Context encoding `e_t[B, E]` from the context and previous state.
    pub fn read_context<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        ctx: &Context<T>,
        state: &LstmState<'t, T>,
    ) -> Result<Var<'t, T>> {
        let tape = state.h.tape();
        let batch = state.h.shape()[0];
        let e = self.cfg.context_dim;
        match (&self.context, ctx) {
            (ContextEncoder::None, Context::None) => Ok(tape.constant(Tensor::zeros([batch, e]))),
            (ContextEncoder::Class { classes, embedding }, Context::Class(labels)) => {
                if labels.len() != batch {
                    return Err(Error::ContextMismatch(format!(
                        "{} labels for batch {batch}",
                        labels.len()
                    )));
                }
                tape.constant(one_hot(labels, *classes)?)
                    .linear(p.get(*embedding), None)
            }
            (ContextEncoder::Views(r), Context::Views { cameras, images }) => {
                let s = images.shape();
                let expected = match &self.cfg.context {
                    ContextKind::Views { extent, .. } => [batch, r.count, extent[0], extent[1]],
                    _ => unreachable!(),
                };
                if s != expected || cameras.len() != r.count {
                    return Err(Error::ContextMismatch(format!(
                        "views {s:?} with {} cameras, expected {expected:?}",
                        cameras.len()
                    )));
                }
                if let Some(&c) = cameras.iter().find(|&&c| c >= r.cameras) {
                    return Err(Error::InvalidCamera {
                        id: c,
                        count: r.cameras,
                    });
                }
                let att = state
                    .h
                    .linear(p.get(r.attention.0), Some(p.get(r.attention.1)))?
                    .add(tape.constant(identity_params(2)))?;
                let all = tape.constant(images.clone());
                let g = r.glimpse;
                let mut feats = Vec::with_capacity(r.count);
                for v in 0..r.count {
                    let img = all.slice(1, v, 1)?;
                    let glimpse = st_sample_2d(img, att, [g, g])?;
                    let f = glimpse
                        .conv(p.get(r.conv.0), 2, 1, 1)?
                        .add(p.get(r.conv.1).reshape([1, r.channels, 1, 1])?)?
                        .relu();
                    feats.push(f.reshape([batch, r.channels * g * g])?);
                }
                let mut out =
                    Var::concat(&feats, 1)?.linear(p.get(r.project.0), Some(p.get(r.project.1)))?;
                for &c in cameras {
                    out = out.add(p.get(r.camera_embedding).slice(0, c, 1)?)?;
                }
                Ok(out)
            }
            _ => Err(Error::ContextMismatch(
                "context kind does not match the model".into(),
            )),
        }
    }

    /// One state transition on `concat(z, e)` followed by an additive write.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: LstmState<'t, T>,
        z: Var<'t, T>,
        e: Var<'t, T>,
        canvas: Var<'t, T>,
    ) -> Result<(LstmState<'t, T>, Var<'t, T>)> {
        let state = self.lstm.step(p, Var::concat(&[z, e], 1)?, state)?;
        let batch = state.h.shape()[0];
        let canvas = match &self.writer {
            Writer::Volume {
                content,
                placement,
                channels,
                patch,
            } => {
                let mut shape = vec![batch, *channels];
                shape.extend_from_slice(patch);
                let c = content.forward(p, state.h)?.reshape(shape)?;
                let params = placement
                    .forward(p, state.h)?
                    .add(state.h.tape().constant(identity_params(3)))?;
                vst_write(canvas, c, params)?
            }
            Writer::Mesh { head } => canvas.add(head.forward(p, state.h)?)?,
        };
        Ok((state, canvas))
    }

    /// Runs all steps from the zero canvas and state.
    pub fn unroll<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        latents: &[Var<'t, T>],
        ctx: &Context<T>,
    ) -> Result<(Var<'t, T>, LstmState<'t, T>)> {
        if latents.len() != self.cfg.steps {
            return Err(shape_err(format!(
                "{} latents for {} steps",
                latents.len(),
                self.cfg.steps
            )));
        }
        let tape = latents[0].tape();
        let batch = latents[0].shape()[0];
        let mut state = self.initial_state(tape, batch);
        let mut canvas = self.initial_canvas(tape, batch);
        for &z in latents {
            let e = self.read_context(p, ctx, &state)?;
            (state, canvas) = self.step(p, state, z, e, canvas)?;
        }
        Ok((canvas, state))
    }

    /// Likelihood logits: `[B, D, H, W]` for the identity projection,
    /// `[B, V, h, w]` for the camera with one view per entry of `cams`.
    pub fn logits<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        canvas: Var<'t, T>,
        state: &LstmState<'t, T>,
        cams: &[usize],
    ) -> Result<Var<'t, T>> {
        match &self.projection {
            Projection::Identity => identity_logits(canvas),
            Projection::Camera(net) => net.multiview_logits(p, canvas, state.h, cams),
            Projection::Renderer => Err(Error::InvalidArgument(
                "mesh canvases are projected by the renderer".into(),
            )),
        }
    }

    /// Per-example observation log-likelihood `[B]` of `x` given logits.
    pub fn log_likelihood<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        logits: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self.cfg.likelihood {
            LikelihoodKind::Bernoulli => bernoulli_log_prob_logits(x, logits),
            LikelihoodKind::DiagonalGaussian { sigma, .. } => {
                let log_sigma = match self.log_sigma {
                    Some(id) => p.get(id),
                    None => x.tape().scalar(T::c(sigma.ln())),
                };
                gaussian_log_prob(x, logits.sigmoid(), log_sigma)
            }
        }
    }

    /// Prior samples followed by projection to observation means.
    pub fn sample<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        ctx: &Context<T>,
        batch: usize,
        cams: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let latents: Vec<_> = prior_sample(rng, &self.cfg, batch)
            .into_iter()
            .map(|z| tape.constant(z))
            .collect();
        let (canvas, state) = self.unroll(&p, &latents, ctx)?;
        let means = match &self.projection {
            Projection::Renderer => canvas,
            _ => self.logits(&p, canvas, &state, cams)?.sigmoid(),
        };
        Ok(((*canvas.value()).clone(), (*means.value()).clone()))
    }
}

/// `steps` independent standard-normal `[batch, latent_dim]` draws.
pub fn prior_sample<T: Scalar>(
    rng: &mut impl Rng,
    cfg: &GenerativeConfig,
    batch: usize,
) -> Vec<Tensor<T>> {
    (0..cfg.steps)
        .map(|_| standard_normal(rng, [batch, cfg.latent_dim]))
        .collect()
}

pub fn standard_normal<T: Scalar>(rng: &mut impl Rng, shape: impl Into<Vec<usize>>) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::c(rng.sample::<f64, _>(StandardNormal)))
}

fn per_example_sum<'t, T: Scalar>(v: Var<'t, T>) -> Result<Var<'t, T>> {
    let b = v.shape()[0];
    let n = v.numel() / b.max(1);
    v.reshape([b, n])?.sum(&[1])
}

/// `Σ x·l − softplus(l)` per example: Bernoulli log-probability with means
/// `sigmoid(l)`, stable for saturated logits.
pub fn bernoulli_log_prob_logits<'t, T: Scalar>(
    x: Var<'t, T>,
    logits: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if x.shape() != logits.shape() {
        return Err(shape_err(format!(
            "data {:?} vs logits {:?}",
            x.shape(),
            logits.shape()
        )));
    }
    per_example_sum(x.mul(logits)?.sub(logits.softplus())?)
}

/// Diagonal Gaussian log-density per example with a scalar log standard
/// deviation.
pub fn gaussian_log_prob<'t, T: Scalar>(
    x: Var<'t, T>,
    mean: Var<'t, T>,
    log_sigma: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if x.shape() != mean.shape() {
        return Err(shape_err(format!(
            "data {:?} vs mean {:?}",
            x.shape(),
            mean.shape()
        )));
    }
    let inv = log_sigma.neg().exp();
    let half_ln_2pi = T::c(0.5 * (2.0 * std::f64::consts::PI).ln());
    let quad = x.sub(mean)?.mul(inv)?.square().scale(T::c(-0.5));
    per_example_sum(quad.sub(log_sigma.add_scalar(half_ln_2pi))?)
}

/// Total log-probability of `x` under elementwise means `mean`.
pub fn likelihood<T: Scalar>(
    x: &Tensor<T>,
    mean: &Tensor<T>,
    kind: &LikelihoodKind,
) -> Result<f64> {
    if x.shape() != mean.shape() {
        return Err(shape_err(format!(
            "data {:?} vs means {:?}",
            x.shape(),
            mean.shape()
        )));
    }
    let mut total = 0.0;
    match *kind {
        LikelihoodKind::Bernoulli => {
            for (&xi, &pi) in x.data().iter().zip(mean.data()) {
                let (xi, pi) = (xi.to_f64_lossy(), pi.to_f64_lossy());
                if !(pi > 0.0 && pi < 1.0) {
                    return Err(Error::DomainError(format!(
                        "Bernoulli mean {pi} outside (0, 1)"
                    )));
                }
                total += xi * pi.ln() + (1.0 - xi) * (1.0 - pi).ln();
            }
        }
        LikelihoodKind::DiagonalGaussian { sigma, .. } => {
            let c = -sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            for (&xi, &mi) in x.data().iter().zip(mean.data()) {
                let r = (xi.to_f64_lossy() - mi.to_f64_lossy()) / sigma;
                total += c - 0.5 * r * r;
            }
        }
    }
    Ok(total)
}
