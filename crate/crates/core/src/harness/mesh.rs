use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{Context, GenerativeConfig};
use crate::inference::{InferenceConfig, Model};
use crate::mesh_render::{
    cube_mesh, gaussian_nll, mesh_from_param, rasterize, reinforce_grad, Image, Mesh, MeshDecoder,
    RenderConfig, DEFAULT_NOISE_SCALE, DEFAULT_PALETTE, DEFAULT_SAMPLES, PARAM_LEN,
};
use crate::nn::{AdamConfig, AdamState, ParamStore};
use crate::tensor::{Tape, Tensor};

use super::train::{stream_rng, TAG_INIT, TAG_STEP};

/// Single-scene recovery of a mesh through the non-differentiable renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFitConfig {
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub latent_dim: usize,
    pub hidden_size: usize,
    pub read_size: usize,
    pub steps: usize,
    pub samples: usize,
    pub noise_scale: f64,
    pub optimizer: AdamConfig,
    pub grad_clip: f64,
    pub decoder: MeshDecoder,
    pub target_center: [f64; 3],
    pub target_side: f64,
    pub seed: u64,
}

impl Default for MeshFitConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            sigma: 0.1,
            latent_dim: 8,
            hidden_size: 32,
            read_size: 32,
            steps: 300,
            samples: DEFAULT_SAMPLES,
            noise_scale: DEFAULT_NOISE_SCALE,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            grad_clip: 100.0,
            decoder: MeshDecoder {
                radius: 0.6,
                ..MeshDecoder::default()
            },
            target_center: [0.0, 0.0, 4.0],
            target_side: 1.5,
            seed: 0,
        }
    }
}

impl MeshFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.steps == 0 || self.samples < 2 {
            return Err(Error::Config(
                "mesh fit needs a nonempty image, a step budget and at least 2 samples".into(),
            ));
        }
        if !(self.sigma > 0.0) || !(self.noise_scale > 0.0) || !(self.target_side > 0.0) {
            return Err(Error::Config(
                "sigma, noise scale and target side must be positive".into(),
            ));
        }
        if self.target_center[2] - self.target_side <= 0.0 {
            return Err(Error::Config(
                "target must lie in front of the camera".into(),
            ));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig::new(self.width, self.height)
    }

    pub fn target_mesh(&self) -> Mesh {
        cube_mesh(self.target_center, self.target_side, DEFAULT_PALETTE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshFitStats {
    pub step: usize,
    /// Negative log-likelihood of the scene under the posterior-mean mesh.
    pub nll: f64,
    /// `nll` minus its minimum `0.5·N·ln(2πσ²)`: the squared-error part.
    pub excess_nll: f64,
    pub kl: f64,
}

/// One-step mesh generator with a recognition network over the RGB image,
/// trained by the score-function estimate of the rendering likelihood plus
/// the analytic KL.
pub struct MeshFitter {
    pub cfg: MeshFitConfig,
    pub model: Model,
    pub store: ParamStore<f64>,
    pub adam: AdamState<f64>,
    pub target: Image,
    pub step: usize,
}

impl MeshFitter {
    pub fn new(cfg: MeshFitConfig) -> Result<Self> {
        cfg.validate()?;
        let target = rasterize(&cfg.target_mesh(), &cfg.render_config())?;
        Self::with_target(cfg, target)
    }

    pub fn with_target(cfg: MeshFitConfig, target: Image) -> Result<Self> {
        cfg.validate()?;
        if (target.width, target.height) != (cfg.width, cfg.height) {
            return Err(Error::ShapeMismatch(format!(
                "target {}x{} vs config {}x{}",
                target.width, target.height, cfg.width, cfg.height
            )));
        }
        let gen = GenerativeConfig::mesh(PARAM_LEN, cfg.latent_dim, cfg.hidden_size);
        let inf = InferenceConfig {
            input_channels: 3,
            input_extent: vec![cfg.height, cfg.width],
            read_extent: vec![cfg.height, cfg.width],
            read_size: cfg.read_size,
        };
        let mut store = ParamStore::new();
        let model = Model::new(
            &mut store,
            &gen,
            &inf,
            &mut stream_rng(cfg.seed, TAG_INIT, 2),
        )?;
        let adam = AdamState::new(cfg.optimizer);
        Ok(Self {
            cfg,
            model,
            store,
            adam,
            target,
            step: 0,
        })
    }

    fn x(&self) -> Result<Tensor<f64>> {
        let t = self.target.to_tensor::<f64>();
        t.reshape([1, 3, self.cfg.height, self.cfg.width])
    }

    fn nll_of(&self, raw: &[f64]) -> Result<f64> {
        let p = self.cfg.decoder.decode(raw)?;
        let img = rasterize(&mesh_from_param(&p)?, &self.cfg.render_config())?;
        gaussian_nll(&self.target, &img, self.cfg.sigma)
    }

    fn floor(&self) -> f64 {
        let n = (3 * self.cfg.width * self.cfg.height) as f64;
        0.5 * n * (2.0 * std::f64::consts::PI * self.cfg.sigma * self.cfg.sigma).ln()
    }

    /// Raw mesh vector at the posterior mean and the KL of the posterior.
    pub fn posterior_mean(&self) -> Result<(Vec<f64>, f64)> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let x = tape.constant(self.x()?);
        let noise = vec![Tensor::zeros([1, self.cfg.latent_dim])];
        let trace = self.model.trace(&p, x, &Context::None, &noise)?;
        let raw = trace.canvas.value().to_f64_vec();
        let kl = trace.kl.iter().map(|k| k.value().sum()).sum();
        Ok((raw, kl))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        mesh_from_param(&self.cfg.decoder.decode(&self.posterior_mean()?.0)?)
    }

    pub fn stats(&self) -> Result<MeshFitStats> {
        let (raw, kl) = self.posterior_mean()?;
        let nll = self.nll_of(&raw)?;
        Ok(MeshFitStats {
            step: self.step,
            nll,
            excess_nll: nll - self.floor(),
            kl,
        })
    }

    pub fn train_step(&mut self) -> Result<()> {
        let mut rng = stream_rng(self.cfg.seed, TAG_STEP, (2 << 40) + self.step as u64);
        let noise = self.model.draw_noise::<f64>(&mut rng, 1);
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let x = tape.constant(self.x()?);
        let trace = self.model.trace(&p, x, &Context::None, &noise)?;
        let raw = trace.canvas.value().to_f64_vec();
        let seed = rand::Rng::gen(&mut rng);
        let g = reinforce_grad(
            |q| self.nll_of(q),
            &raw,
            self.cfg.samples,
            self.cfg.noise_scale,
            seed,
        )?;
        let g = tape.constant(Tensor::new([1, PARAM_LEN], g)?);
        let mut loss = trace.canvas.mul(g)?.sum_all();
        for k in &trace.kl {
            loss = loss.add(k.sum_all())?;
        }
        tape.backward(loss)?;
        self.store.accumulate_grads(&p)?;
        self.store.clip_grad_norm(self.cfg.grad_clip);
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(())
    }

    /// Trains for the step budget, logging every `log_every` steps. Returns
    /// the statistics at initialization and at the end.
    pub fn run(
        &mut self,
        log_every: usize,
        log: &mut dyn Write,
    ) -> Result<(MeshFitStats, MeshFitStats)> {
        let first = self.stats()?;
        writeln!(
            log,
            "{}",
            serde_json::to_string(&serde_json::json!({"kind": "mesh_fit", "stats": first}))?
        )?;
        while self.step < self.cfg.steps {
            self.train_step()?;
            if log_every > 0 && (self.step % log_every == 0 || self.step == self.cfg.steps) {
                let s = self.stats()?;
                writeln!(
                    log,
                    "{}",
                    serde_json::to_string(&serde_json::json!({"kind": "mesh_fit", "stats": s}))?
                )?;
            }
        }
        Ok((first, self.stats()?))
    }
}
