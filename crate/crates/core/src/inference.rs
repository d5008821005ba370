//! Recognition network, closed-form KL terms, the variational bound and its
//! importance-weighted refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::genmodel::{repeat_each, standard_normal, Context, GenerativeConfig, Generator};
use crate::nn::{Activation, Bound, LstmState, Mlp, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::vst::{identity_params, sample_nd};

/// Floor added to the softplus standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Channels of one datum as read: 1 for volumes, the view count for
    /// image sets, 3 for RGB images.
    pub input_channels: usize,
    /// Spatial extents of one datum (2 or 3 axes).
    pub input_extent: Vec<usize>,
    /// Extents of the attention window, same rank as `input_extent`.
    pub read_extent: Vec<usize>,
    pub read_size: usize,
}

impl InferenceConfig {
    pub fn for_volume(extents: [usize; 3], read_extent: [usize; 3], read_size: usize) -> Self {
        Self {
            input_channels: 1,
            input_extent: extents.to_vec(),
            read_extent: read_extent.to_vec(),
            read_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.input_extent.len();
        if !(2..=3).contains(&n) || self.read_extent.len() != n {
            return Err(Error::Config(
                "read extents must have 2 or 3 axes matching the input".into(),
            ));
        }
        if self.input_channels == 0
            || self.read_size == 0
            || self.input_extent.contains(&0)
            || self.read_extent.contains(&0)
        {
            return Err(Error::Config("inference extents must be positive".into()));
        }
        Ok(())
    }

    /// Per-datum shape as stored in data tensors (without the batch axis).
    pub fn datum_shape(&self) -> Vec<usize> {
        if self.input_channels == 1 && self.input_extent.len() == 3 {
            self.input_extent.clone()
        } else {
            let mut s = vec![self.input_channels];
            s.extend(&self.input_extent);
            s
        }
    }
}

/// Posterior parameters and the reparameterized sample of one step.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorStep<'t, T: Scalar> {
    pub mu: Var<'t, T>,
    pub sigma: Var<'t, T>,
    pub z: Var<'t, T>,
}

#[derive(Clone, Debug)]
pub struct Recognizer {
    cfg: InferenceConfig,
    attention: Mlp,
    read: Mlp,
    mu: Mlp,
    sigma: Mlp,
}

impl Recognizer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        gen: &GenerativeConfig,
        cfg: &InferenceConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.read_extent.len();
        let h = gen.hidden_size;
        let attention = Mlp::new(
            store,
            "inf.attention",
            &[h, n * n + n],
            &[Activation::Identity],
            rng,
        );
        for (w, b) in attention.weight_ids() {
            *store.value_mut(w) = store.value(w).map(|_| T::zero());
            *store.value_mut(b) = store.value(b).map(|_| T::zero());
        }
        let window = cfg.input_channels * cfg.read_extent.iter().product::<usize>();
        let read = Mlp::new(
            store,
            "inf.read",
            &[window, cfg.read_size],
            &[Activation::Tanh],
            rng,
        );
        let heads_in = cfg.read_size + h + gen.context_dim;
        let mu = Mlp::new(
            store,
            "inf.mu",
            &[heads_in, gen.latent_dim],
            &[Activation::Identity],
            rng,
        );
        let sigma = Mlp::new(
            store,
            "inf.sigma",
            &[heads_in, gen.latent_dim],
            &[Activation::Identity],
            rng,
        );
        Ok(Self {
            cfg: cfg.clone(),
            attention,
            read,
            mu,
            sigma,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    /// Attention read of `x[B, ...datum]`: an affine window placed from the
    /// previous state, flattened through an MLP.
    pub fn read_data<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        h_prev: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let batch = x.shape()[0];
        let datum = self.cfg.datum_shape();
        if x.shape()[1..] != datum[..] {
            return Err(shape_err(format!(
                "read expects [B, {datum:?}], got {:?}",
                x.shape()
            )));
        }
        let mut shape = vec![batch, self.cfg.input_channels];
        shape.extend(&self.cfg.input_extent);
        let n = self.cfg.read_extent.len();
        let att = self
            .attention
            .forward(p, h_prev)?
            .add(x.tape().constant(identity_params(n)))?;
        let window = sample_nd(x.reshape(shape)?, att, &self.cfg.read_extent)?;
        let flat = window.numel() / batch;
        self.read.forward(p, window.reshape([batch, flat])?)
    }

    /// `z = μ + σ∘ε` with `σ = softplus(raw) + floor`.
    pub fn posterior_step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        r: Var<'t, T>,
        h_prev: Var<'t, T>,
        e: Var<'t, T>,
        eps: Var<'t, T>,
    ) -> Result<PosteriorStep<'t, T>> {
        let input = Var::concat(&[r, h_prev, e], 1)?;
        let mu = self.mu.forward(p, input)?;
        let sigma = self
            .sigma
            .forward(p, input)?
            .softplus()
            .add_scalar(T::c(SIGMA_FLOOR));
        if eps.shape() != mu.shape() {
            return Err(shape_err(format!(
                "noise {:?} vs posterior {:?}",
                eps.shape(),
                mu.shape()
            )));
        }
        let z = mu.add(sigma.mul(eps)?)?;
        Ok(PosteriorStep { mu, sigma, z })
    }
}

/// Per-example `Σ_k ½(μ² + σ² − 1 − 2 ln σ)` for `[B, K]` inputs.
pub fn kl_gaussian<'t, T: Scalar>(mu: Var<'t, T>, sigma: Var<'t, T>) -> Result<Var<'t, T>> {
    let terms = mu
        .square()
        .add(sigma.square())?
        .sub(sigma.ln()?.scale(T::c(2.0)))?
        .add_scalar(-T::one());
    Ok(terms.sum(&[1])?.scale(T::c(0.5)))
}

/// KL divergence of `N(μ, diag σ²)` from the standard normal.
pub fn kl_gaussian_value(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(shape_err(format!(
            "{} means vs {} deviations",
            mu.len(),
            sigma.len()
        )));
    }
    let mut kl = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::DomainError(format!(
                "standard deviation {s} is not positive"
            )));
        }
        kl += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    }
    Ok(kl)
}

/// Quantities of one inference-and-generation pass.
pub struct Trace<'t, T: Scalar> {
    pub canvas: Var<'t, T>,
    pub state: LstmState<'t, T>,
    pub steps: Vec<PosteriorStep<'t, T>>,
    /// Closed-form KL per step, each `[B]`.
    pub kl: Vec<Var<'t, T>>,
    /// `Σ_t ln p(z_t) − ln q(z_t)` at the sampled latents, `[B]`.
    pub log_ratio: Var<'t, T>,
}

/// Variational bound terms, all per example `[B]`.
pub struct Elbo<'t, T: Scalar> {
    pub bound: Var<'t, T>,
    pub recon: Var<'t, T>,
    pub kl: Vec<Var<'t, T>>,
    /// Single-sample importance log-weight `ln p(x|z) + ln p(z) − ln q(z|x)`.
    pub log_weight: Var<'t, T>,
    pub trace: Trace<'t, T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seed: u64,
    pub bound: f64,
    pub recon: f64,
    pub kl: Vec<f64>,
}

impl Diagnostics {
    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

/// Generative model paired with its recognition network. Both share the
/// generator's state transition.
#[derive(Clone, Debug)]
pub struct Model {
    pub generator: Generator,
    pub recognizer: Recognizer,
}

impl Model {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        gen: &GenerativeConfig,
        inf: &InferenceConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let generator = Generator::new(store, gen, rng)?;
        let recognizer = Recognizer::new(store, gen, inf, rng)?;
        Ok(Self {
            generator,
            recognizer,
        })
    }

    pub fn steps(&self) -> usize {
        self.generator.config().steps
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.config().latent_dim
    }

    /// Reparameterization noise for a batch: one `[batch, K]` draw per step.
    pub fn draw_noise<T: Scalar>(&self, rng: &mut impl Rng, batch: usize) -> Vec<Tensor<T>> {
        (0..self.steps())
            .map(|_| standard_normal(rng, [batch, self.latent_dim()]))
            .collect()
    }

    /// Runs inference and generation together with the given noise.
    pub fn trace<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        ctx: &Context<T>,
        noise: &[Tensor<T>],
    ) -> Result<Trace<'t, T>> {
        if noise.len() != self.steps() {
            return Err(shape_err(format!(
                "{} noise draws for {} steps",
                noise.len(),
                self.steps()
            )));
        }
        let tape = x.tape();
        let batch = x.shape()[0];
        let g = &self.generator;
        let mut state = g.initial_state(tape, batch);
        let mut canvas = g.initial_canvas(tape, batch);
        let mut steps = Vec::with_capacity(noise.len());
        let mut kl = Vec::with_capacity(noise.len());
        let mut log_ratio = tape.constant(Tensor::zeros([batch]));
        for eps in noise {
            let e = g.read_context(p, ctx, &state)?;
            let r = self.recognizer.read_data(p, x, state.h)?;
            let eps = tape.constant(eps.clone());
            let post = self.recognizer.posterior_step(p, r, state.h, e, eps)?;
            kl.push(kl_gaussian(post.mu, post.sigma)?);
            let step_ratio = eps
                .square()
                .sub(post.z.square())?
                .scale(T::c(0.5))
                .add(post.sigma.ln()?)?
                .sum(&[1])?;
            log_ratio = log_ratio.add(step_ratio)?;
            (state, canvas) = g.step(p, state, post.z, e, canvas)?;
            steps.push(post);
        }
        Ok(Trace {
            canvas,
            state,
            steps,
            kl,
            log_ratio,
        })
    }

    /// Single-sample variational bound `ln p(x|z) − Σ_t KL_t` per example.
    /// `cams` names the target camera of each view in image mode.
    pub fn elbo<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: &Tensor<T>,
        cams: &[usize],
        ctx: &Context<T>,
        noise: &[Tensor<T>],
    ) -> Result<Elbo<'t, T>> {
        let tape = p_tape(p, x)?;
        let xv = tape.constant(x.clone());
        let trace = self.trace(p, xv, ctx, noise)?;
        let logits = self.generator.logits(p, trace.canvas, &trace.state, cams)?;
        let recon = self.generator.log_likelihood(p, xv, logits)?;
        let mut bound = recon;
        for k in &trace.kl {
            bound = bound.sub(*k)?;
        }
        let log_weight = recon.add(trace.log_ratio)?;
        Ok(Elbo {
            bound,
            recon,
            kl: trace.kl.clone(),
            log_weight,
            trace,
        })
    }

    /// Bound for a batch with noise drawn from `seed`, plus per-datum
    /// diagnostics.
    pub fn elbo_seeded<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        cams: &[usize],
        ctx: &Context<T>,
        seed: u64,
    ) -> Result<Diagnostics> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let noise = self.draw_noise(&mut ChaCha8Rng::seed_from_u64(seed), x.shape()[0]);
        let e = self.elbo(&p, x, cams, ctx, &noise)?;
        let b = x.shape()[0] as f64;
        let mean = |v: Var<'_, T>| v.value().sum().to_f64_lossy() / b;
        Ok(Diagnostics {
            seed,
            bound: mean(e.bound),
            recon: mean(e.recon),
            kl: e.kl.iter().map(|&k| mean(k)).collect(),
        })
    }

    /// Importance-weighted bound per example: the log-mean-exp of
    /// `n_importance` single-sample log-weights.
    pub fn iwae_eval<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        cams: &[usize],
        ctx: &Context<T>,
        n_importance: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if n_importance == 0 {
            return Err(Error::InvalidArgument(
                "n_importance must be at least 1".into(),
            ));
        }
        const MAX_ROWS: usize = 1024;
        let batch = x.shape()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(batch);
        // whole examples per chunk when they fit, otherwise one example in
        // slices of its samples
        let examples_per_chunk = (MAX_ROWS / n_importance).max(1);
        let mut start = 0;
        while start < batch {
            let m = examples_per_chunk.min(batch - start);
            let xs = x.rows(start, m)?;
            let cs = ctx.batch_slice(start, m)?;
            let mut weights = vec![Vec::with_capacity(n_importance); m];
            let mut done = 0;
            while done < n_importance {
                let k = (n_importance - done).min(MAX_ROWS / m.max(1)).max(1);
                let xr = repeat_each(&xs, k)?;
                let cr = cs.repeat_each(k)?;
                let tape = Tape::new();
                let p = store.bind_frozen(&tape);
                let noise = self.draw_noise(&mut rng, m * k);
                let e = self.elbo(&p, &xr, cams, &cr, &noise)?;
                for (i, w) in e.log_weight.value().data().iter().enumerate() {
                    weights[i / k].push(w.to_f64_lossy());
                }
                done += k;
            }
            out.extend(weights.iter().map(|w| log_mean_exp(w)));
            start += m;
        }
        Ok(out)
    }
}

fn p_tape<'t, T: Scalar>(p: &Bound<'t, T>, x: &Tensor<T>) -> Result<&'t Tape<T>> {
    if x.rank() < 2 {
        return Err(shape_err(format!(
            "data must have a batch axis, got {:?}",
            x.shape()
        )));
    }
    Ok(p.tape())
}

pub fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}
