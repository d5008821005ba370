use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::inference::Model;
use crate::nn::{AdamState, ParamStore};
use crate::scalar::Scalar;

use super::checkpoint;
use super::config::RunConfig;
use super::data::{build_split, make_batch, Batch, Split};

pub const METRICS: &str = "metrics.jsonl";
pub const CHECKPOINT: &str = "checkpoint";

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_STEP: u64 = 2;
pub(crate) const TAG_EVAL: u64 = 3;
pub(crate) const TAG_SAMPLE: u64 = 4;

/// Generator for stream `index` of purpose `tag` under `seed`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

/// Held-out importance-weighted bound as positive nats per datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub nats: f64,
    pub stderr: f64,
    pub examples: usize,
    pub n_importance: usize,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogLine<'a> {
    Train(&'a StepStats),
    Eval(&'a EvalReport),
}

fn log_line(log: &mut dyn Write, line: LogLine<'_>) -> Result<()> {
    writeln!(log, "{}", serde_json::to_string(&line)?)?;
    Ok(())
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A model restored from a checkpoint directory.
pub struct LoadedModel<T: Scalar> {
    pub cfg: RunConfig,
    pub model: Model,
    pub store: ParamStore<T>,
    pub adam: AdamState<T>,
    pub step: usize,
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<LoadedModel<T>> {
    let m = checkpoint::load_manifest(dir)?;
    let cfg = m.config.clone();
    cfg.validate()?;
    let mut store = ParamStore::new();
    let model = Model::new(
        &mut store,
        &cfg.model,
        &cfg.inference,
        &mut stream_rng(cfg.seed, TAG_INIT, 0),
    )?;
    let adam = checkpoint::restore(dir, &m, &mut store)?;
    Ok(LoadedModel {
        cfg,
        model,
        store,
        adam,
        step: m.step,
    })
}

/// SGVB training state. Minibatches and noise are drawn from streams keyed
/// by the step index, so a resumed run replays the uninterrupted one.
pub struct Trainer<T: Scalar> {
    pub cfg: RunConfig,
    pub model: Model,
    pub store: ParamStore<T>,
    pub adam: AdamState<T>,
    pub split: Split,
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let split = build_split(&cfg.dataset, cfg.seed)?;
        Self::with_split(cfg, split)
    }

    pub fn with_split(cfg: RunConfig, split: Split) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let model = Model::new(
            &mut store,
            &cfg.model,
            &cfg.inference,
            &mut stream_rng(cfg.seed, TAG_INIT, 0),
        )?;
        let adam = AdamState::new(cfg.optimizer);
        Ok(Self {
            cfg,
            model,
            store,
            adam,
            split,
            step: 0,
        })
    }

    /// Rebuilds the run stored in `dir`. `budget` replaces the step budget.
    pub fn resume(dir: &Path, budget: Option<usize>) -> Result<Self> {
        let mut l = load_model::<T>(dir)?;
        if let Some(b) = budget {
            l.cfg.steps = b;
        }
        l.cfg.validate()?;
        let split = build_split(&l.cfg.dataset, l.cfg.seed)?;
        l.adam.config = l.cfg.optimizer;
        Ok(Self {
            cfg: l.cfg,
            model: l.model,
            store: l.store,
            adam: l.adam,
            split,
            step: l.step,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.cfg, self.step, &self.store, &self.adam)
    }

    pub fn batch(&self, items: &[&(crate::datasets::Volume, Option<usize>)]) -> Result<Batch<T>> {
        make_batch(&self.cfg.dataset, items)
    }

    /// One Adam update on a minibatch; returns the batch statistics before
    /// the update.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let mut rng = stream_rng(self.cfg.seed, TAG_STEP, self.step as u64);
        let n = self.split.train.len();
        let items: Vec<_> = (0..self.cfg.batch_size)
            .map(|_| &self.split.train[rng.gen_range(0..n)])
            .collect();
        let batch = self.batch(&items)?;
        let noise = self.model.draw_noise(&mut rng, self.cfg.batch_size);
        let tape = crate::tensor::Tape::new();
        let p = self.store.bind(&tape);
        let e = self
            .model
            .elbo(&p, &batch.x, &batch.cams, &batch.ctx, &noise)?;
        let b = self.cfg.batch_size as f64;
        let mean = |v: crate::tensor::Var<'_, T>| v.value().sum().to_f64_lossy() / b;
        let kl = e.kl.iter().map(|&k| mean(k)).sum();
        let (elbo, recon) = (mean(e.bound), mean(e.recon));
        tape.backward(e.bound.mean_all().neg())?;
        self.store.accumulate_grads(&p)?;
        let grad_norm = self
            .store
            .clip_grad_norm(T::c(self.cfg.grad_clip))
            .to_f64_lossy();
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            elbo,
            recon,
            kl,
            grad_norm,
        })
    }

    /// Importance-weighted held-out bound over the first `eval_examples`
    /// test items.
    pub fn evaluate(&self, n_importance: usize) -> Result<EvalReport> {
        let n = self.cfg.eval_examples.min(self.split.test.len());
        let items: Vec<_> = self.split.test.iter().take(n).collect();
        let mut bounds = Vec::with_capacity(n);
        for (i, chunk) in items.chunks(64).enumerate() {
            let batch = self.batch(chunk)?;
            let seed = stream_rng(self.cfg.seed, TAG_EVAL, i as u64).gen();
            bounds.extend(self.model.iwae_eval(
                &self.store,
                &batch.x,
                &batch.cams,
                &batch.ctx,
                n_importance,
                seed,
            )?);
        }
        let nats: Vec<f64> = bounds.iter().map(|b| -b).collect();
        let (mean, stderr) = mean_stderr(&nats);
        Ok(EvalReport {
            step: self.step,
            nats: mean,
            stderr,
            examples: n,
            n_importance,
        })
    }

    /// Trains until the step budget, logging JSON lines and writing
    /// checkpoints under `out`. Returns the final evaluation.
    pub fn run(&mut self, out: Option<&Path>, log: &mut dyn Write) -> Result<EvalReport> {
        let c = self.cfg.clone();
        while self.step < c.steps {
            if c.eval_every > 0 && self.step % c.eval_every == 0 {
                log_line(log, LogLine::Eval(&self.evaluate(c.eval_importance)?))?;
            }
            let stats = self.train_step()?;
            if stats.step % c.log_every == 0 || stats.step == c.steps {
                log_line(log, LogLine::Train(&stats))?;
            }
            if let Some(dir) = out {
                if c.checkpoint_every > 0
                    && self.step % c.checkpoint_every == 0
                    && self.step < c.steps
                {
                    self.save(&dir.join(CHECKPOINT))?;
                }
            }
        }
        let report = self.evaluate(c.eval_importance)?;
        log_line(log, LogLine::Eval(&report))?;
        if let Some(dir) = out {
            self.save(&dir.join(CHECKPOINT))?;
        }
        Ok(report)
    }
}

/// Held-out nats of the checkpoint in `dir`.
pub fn eval_benchmark(dir: &Path, n_importance: usize) -> Result<EvalReport> {
    Trainer::<f32>::resume(dir, None)?.evaluate(n_importance)
}
