use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ParamId, ParamStore};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
    activation: Activation,
}

/// Stack of affine layers, each followed by its activation. Weights are
/// `[out, in]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

impl Mlp {
    /// `sizes` lists the extents from input to output; `activations` has
    /// one entry per layer (`sizes.len() - 1`).
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        assert_eq!(activations.len(), sizes.len() - 1);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| Layer {
                weight: store.add_glorot(
                    format!("{name}.{i}.weight"),
                    [w[1], w[0]],
                    w[0],
                    w[1],
                    rng,
                ),
                bias: store.add_zeros(format!("{name}.{i}.bias"), [w[1]]),
                activation,
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = (ParamId, ParamId)> + '_ {
        self.layers.iter().map(|l| (l.weight, l.bias))
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_size() {
            return Err(shape_err(format!(
                "MLP expects [batch, {}], got {shape:?}",
                self.input_size()
            )));
        }
        self.layers.iter().try_fold(x, |h, l| {
            Ok(l.activation
                .apply(h.linear(p.get(l.weight), Some(p.get(l.bias)))?))
        })
    }
}
