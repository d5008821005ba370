use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Volume;
use crate::error::{Error, Result};
use crate::genmodel::bernoulli_log_prob_logits;
use crate::nn::{AdamConfig, AdamState, Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

use super::config::{RunConfig, Target};
use super::data::{axis_view, build_split, Split};
use super::train::{mean_stderr, stream_rng, EvalReport, TAG_INIT, TAG_STEP};

pub const BASELINE_LAYERS: usize = 6;
pub const BASELINE_VIEWS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Output channels of the six 3³ convolutions; the last must be 1.
    pub channels: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 16, 32, 32, 32, 1],
            steps: 1500,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != BASELINE_LAYERS
            || self.channels.last() != Some(&1)
            || self.channels.contains(&0)
        {
            return Err(Error::Config(format!(
                "baseline needs {BASELINE_LAYERS} conv layers ending in 1 channel"
            )));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "baseline steps and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Silhouettes along the three axes, each smeared back along its own axis:
/// a `[3, D, H, W]` volume.
pub fn backproject_views(v: &Volume) -> Vec<f32> {
    let [d, h, w] = v.extents();
    let views: Vec<Vec<f32>> = (0..BASELINE_VIEWS).map(|c| axis_view(v, c)).collect();
    let mut out = Vec::with_capacity(BASELINE_VIEWS * d * h * w);
    for (c, img) in views.iter().enumerate() {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    out.push(match c {
                        0 => img[y * w + x],
                        1 => img[z * w + x],
                        _ => img[z * h + y],
                    });
                }
            }
        }
    }
    out
}

/// Deterministic volumetric network from three context views to Bernoulli
/// voxel logits.
#[derive(Clone, Debug)]
pub struct BaselineConvnet {
    layers: Vec<(ParamId, ParamId, usize)>,
}

impl BaselineConvnet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        channels: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cfg = BaselineConfig {
            channels: channels.to_vec(),
            ..Default::default()
        };
        cfg.validate()?;
        let mut cin = BASELINE_VIEWS;
        let mut layers = Vec::with_capacity(channels.len());
        for (i, &c) in channels.iter().enumerate() {
            let w = store.add_glorot(
                format!("baseline.conv{i}.weight"),
                [c, cin, 3, 3, 3],
                cin * 27,
                c * 27,
                rng,
            );
            let b = store.add_zeros(format!("baseline.conv{i}.bias"), [c]);
            layers.push((w, b, c));
            cin = c;
        }
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Logits `[B, D, H, W]` from back-projected views `[B, 3, D, H, W]`.
    pub fn logits<'t, T: Scalar>(&self, p: &Bound<'t, T>, views: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = views.shape();
        let mut y = views;
        let last = self.layers.len() - 1;
        for (i, &(w, b, c)) in self.layers.iter().enumerate() {
            y = y
                .conv(p.get(w), 3, 1, 1)?
                .add(p.get(b).reshape([1, c, 1, 1, 1])?)?;
            if i < last {
                y = y.relu();
            }
        }
        y.reshape([s[0], s[2], s[3], s[4]])
    }

    /// Per-example Bernoulli log-likelihood `[B]`.
    pub fn log_likelihood<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        views: Var<'t, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        bernoulli_log_prob_logits(x, self.logits(p, views)?)
    }
}

fn batch_tensors<T: Scalar>(items: &[&(Volume, Option<usize>)]) -> Result<(Tensor<T>, Tensor<T>)> {
    let [d, h, w] = items[0].0.extents();
    let b = items.len();
    let mut views = Vec::with_capacity(b * BASELINE_VIEWS * d * h * w);
    let mut x = Vec::with_capacity(b * d * h * w);
    for (v, _) in items {
        views.extend(backproject_views(v).into_iter().map(|a| T::c(a as f64)));
        x.extend(v.data().iter().map(|&a| T::c(a as f64)));
    }
    Ok((
        Tensor::new([b, BASELINE_VIEWS, d, h, w], views)?,
        Tensor::new([b, d, h, w], x)?,
    ))
}

pub struct BaselineTrainer<T: Scalar> {
    pub cfg: RunConfig,
    pub net: BaselineConvnet,
    pub store: ParamStore<T>,
    pub adam: AdamState<T>,
    pub split: Split,
    pub step: usize,
}

impl<T: Scalar> BaselineTrainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.baseline.validate()?;
        if cfg.dataset.target != Target::Volume {
            return Err(Error::Config("the baseline predicts volumes".into()));
        }
        let split = build_split(&cfg.dataset, cfg.seed)?;
        let mut store = ParamStore::new();
        let net = BaselineConvnet::new(
            &mut store,
            &cfg.baseline.channels,
            &mut stream_rng(cfg.seed, TAG_INIT, 1),
        )?;
        let adam = AdamState::new(cfg.baseline.optimizer);
        Ok(Self {
            cfg,
            net,
            store,
            adam,
            split,
            step: 0,
        })
    }

    pub fn train_step(&mut self) -> Result<f64> {
        let mut rng = stream_rng(self.cfg.seed, TAG_STEP, (1 << 40) + self.step as u64);
        let n = self.split.train.len();
        let b = self.cfg.baseline.batch_size;
        let items: Vec<_> = (0..b)
            .map(|_| &self.split.train[rng.gen_range(0..n)])
            .collect();
        let (views, x) = batch_tensors::<T>(&items)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let ll = self
            .net
            .log_likelihood(&p, tape.constant(views), tape.constant(x))?;
        let nll = ll.mean_all().neg();
        tape.backward(nll)?;
        self.store.accumulate_grads(&p)?;
        self.store.clip_grad_norm(T::c(self.cfg.grad_clip));
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(nll.item().to_f64_lossy())
    }

    /// Exact held-out negative log-likelihood per volume.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let n = self.cfg.eval_examples.min(self.split.test.len());
        let items: Vec<_> = self.split.test.iter().take(n).collect();
        let mut nats = Vec::with_capacity(n);
        for chunk in items.chunks(64) {
            let (views, x) = batch_tensors::<T>(chunk)?;
            let tape = Tape::new();
            let p = self.store.bind_frozen(&tape);
            let ll = self
                .net
                .log_likelihood(&p, tape.constant(views), tape.constant(x))?;
            nats.extend(ll.value().data().iter().map(|v| -v.to_f64_lossy()));
        }
        let (mean, stderr) = mean_stderr(&nats);
        Ok(EvalReport {
            step: self.step,
            nats: mean,
            stderr,
            examples: n,
            n_importance: 1,
        })
    }

    pub fn run(&mut self, out: Option<&Path>, log: &mut dyn Write) -> Result<EvalReport> {
        let c = self.cfg.clone();
        while self.step < c.baseline.steps {
            let nll = self.train_step()?;
            if self.step % c.log_every == 0 || self.step == c.baseline.steps {
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({"kind": "baseline_train", "step": self.step, "nll": nll})
                )?;
            }
        }
        let report = self.evaluate()?;
        writeln!(
            log,
            "{}",
            serde_json::json!({"kind": "baseline_eval", "step": report.step, "nats": report.nats, "stderr": report.stderr, "examples": report.examples})
        )?;
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            super::checkpoint::save(dir, &c, self.step, &self.store, &self.adam)?;
        }
        Ok(report)
    }
}
