//! Enumerable 2³ toy with two latent dimensions and one step, whose exact
//! marginals come from a dense quadrature over the latent plane.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxgen::genmodel::{Context, GenerativeConfig};
use voxgen::inference::{InferenceConfig, Model};
use voxgen::nn::{AdamConfig, AdamState, ParamStore};
use voxgen::tensor::{Tape, Tensor};

pub const VOXELS: usize = 8;
pub const STATES: usize = 1 << VOXELS;
pub const EXTENTS: [usize; 3] = [2, 2, 2];

pub struct Toy {
    pub model: Model,
    pub store: ParamStore<f64>,
}

/// Random toy whose generator weights are amplified by `gain` so that the
/// latent visibly shapes the volume.
pub fn toy(seed: u64, gain: f64) -> Toy {
    let gen = GenerativeConfig::volume(EXTENTS, EXTENTS, 1, 2, 4);
    let inf = InferenceConfig::for_volume(EXTENTS, EXTENTS, 8);
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, &gen, &inf, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    for (name, p) in store.iter_mut() {
        if name.starts_with("gen.") {
            p.value = p.value.scale(gain);
        }
    }
    Toy { model, store }
}

/// Binary volume with index bits as voxels, first voxel in the lowest bit.
pub fn state_bits(s: usize) -> [f64; VOXELS] {
    std::array::from_fn(|v| ((s >> v) & 1) as f64)
}

pub fn state_of(bits: &[f64]) -> usize {
    bits.iter()
        .enumerate()
        .map(|(v, &b)| ((b > 0.5) as usize) << v)
        .sum()
}

pub fn volumes(states: &[usize]) -> Tensor<f64> {
    let data: Vec<f64> = states.iter().flat_map(|&s| state_bits(s)).collect();
    Tensor::new([states.len(), 2, 2, 2], data).unwrap()
}

/// Decoder logits `[G, 8]` at latent points `z[G, 2]`.
pub fn decode(t: &Toy, z: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let p = t.store.bind_frozen(&tape);
    let g = &t.model.generator;
    let (canvas, state) = g
        .unroll(&p, &[tape.constant(z.clone())], &Context::None)
        .unwrap();
    let l = g.logits(&p, canvas, &state, &[]).unwrap().value();
    (*l).clone().into_reshaped([z.shape()[0], VOXELS]).unwrap()
}

fn ln_sig(l: f64) -> f64 {
    if l >= 0.0 {
        -(-l).exp().ln_1p()
    } else {
        l - l.exp().ln_1p()
    }
}

/// Exact `ln p(x)` of all 256 volumes: trapezoidal quadrature of the
/// standard-normal prior on `[-8, 8]²` with `n × n` nodes.
pub fn log_marginals(t: &Toy, n: usize) -> Vec<f64> {
    let lim = 8.0;
    let h = 2.0 * lim / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|i| -lim + h * i as f64).collect();
    let log_w0 = 2.0 * h.ln() - (2.0 * std::f64::consts::PI).ln();
    let mut acc = vec![f64::NEG_INFINITY; STATES];
    let chunk = 4096;
    let points: Vec<[f64; 2]> = nodes
        .iter()
        .flat_map(|&a| nodes.iter().map(move |&b| [a, b]))
        .collect();
    for block in points.chunks(chunk) {
        let z = Tensor::new([block.len(), 2], block.iter().flat_map(|p| *p).collect()).unwrap();
        let l = decode(t, &z);
        for (g, p) in block.iter().enumerate() {
            let lw = log_w0 - 0.5 * (p[0] * p[0] + p[1] * p[1]);
            let row = &l.data()[g * VOXELS..(g + 1) * VOXELS];
            let on: Vec<f64> = row.iter().map(|&v| ln_sig(v)).collect();
            let off: Vec<f64> = row.iter().map(|&v| ln_sig(-v)).collect();
            for (s, a) in acc.iter_mut().enumerate() {
                let mut v = lw;
                for k in 0..VOXELS {
                    v += if (s >> k) & 1 == 1 { on[k] } else { off[k] };
                }
                *a = log_add(*a, v);
            }
        }
    }
    acc
}

pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Conditional law of the hidden voxels given the observed ones, indexed by
/// full state; zero for states that disagree with `x` on observed voxels.
pub fn conditional(log_px: &[f64], x: usize, observed: &[bool]) -> Vec<f64> {
    let obs_mask: usize = observed
        .iter()
        .enumerate()
        .map(|(v, &o)| (o as usize) << v)
        .sum();
    let mut p: Vec<f64> = (0..STATES)
        .map(|s| {
            if s & obs_mask == x & obs_mask {
                log_px[s].exp()
            } else {
                0.0
            }
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Fits the recognition network by maximizing `Σ_x p(x)·ELBO(x)` over all
/// volumes with the generator held fixed.
pub fn fit_recognizer(t: &mut Toy, log_px: &[f64], steps: usize, samples: usize, seed: u64) {
    let states: Vec<usize> = (0..STATES)
        .flat_map(|s| std::iter::repeat(s).take(samples))
        .collect();
    let x = volumes(&states);
    let w: Vec<f64> = states
        .iter()
        .map(|&s| log_px[s].exp() / samples as f64)
        .collect();
    let w = Tensor::new([states.len()], w).unwrap();
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        let noise = t.model.draw_noise::<f64>(&mut rng, states.len());
        let tape = Tape::new();
        let p = t.store.bind(&tape);
        let e = t.model.elbo(&p, &x, &[], &Context::None, &noise).unwrap();
        let loss = e
            .bound
            .mul(tape.constant(w.clone()))
            .unwrap()
            .sum_all()
            .neg();
        tape.backward(loss).unwrap();
        t.store.accumulate_grads(&p).unwrap();
        for (name, p) in t.store.iter_mut() {
            if name.starts_with("gen.") {
                p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
        adam.step(&mut t.store).unwrap();
    }
}
