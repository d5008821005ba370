use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named, ordered parameter collection. Insertion order is the
/// serialization order, so a store built from the same config and seed is
/// reproduced exactly.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: IndexMap<String, Param<T>>,
}

/// Parameters registered as differentiable leaves on one tape.
pub struct Bound<'t, T: Scalar> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }
}

/// Finite-difference check of `f` with respect to every parameter in the
/// store (see [`grad_check_many`](crate::tensor::grad_check_many)).
pub fn grad_check_params<F>(store: &ParamStore<f64>, f: F, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let inputs: Vec<Tensor<f64>> = store.params.values().map(|p| p.value.clone()).collect();
    crate::tensor::grad_check_many(
        |tape, v| {
            f(
                tape,
                &Bound {
                    tape,
                    vars: v.to_vec(),
                },
            )
        },
        &inputs,
        eps,
    )
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "duplicate parameter `{name}`"
        );
        let (idx, _) = self.params.insert_full(name, Param { value, grad: None });
        ParamId(idx)
    }

    /// Glorot-uniform weight: `U(±√(6/(fan_in+fan_out)))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        self.add(
            name,
            super::init::glorot_uniform(shape, fan_in, fan_out, rng),
        )
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: impl Into<Vec<usize>>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            tape,
            vars: self
                .params
                .values()
                .map(|p| tape.var(p.value.clone()))
                .collect(),
        }
    }

    /// Like [`ParamStore::bind`] but records constants: nothing is
    /// differentiated and the backward closures are skipped.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            tape,
            vars: self
                .params
                .values()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Adds the tape gradients of every bound parameter into `grad`.
    pub fn accumulate_grads(&mut self, bound: &Bound<'_, T>) -> Result<()> {
        for (p, v) in self.params.values_mut().zip(&bound.vars) {
            let g = v.grad().ok_or(Error::TapeConsumed)?;
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// Scales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let sq = self
            .params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .fold(T::zero(), |acc, &v| acc + v * v);
        let norm = sq.sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                if let Some(g) = p.grad.as_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| {
                    ka == kb
                        && a.value.shape() == b.value.shape()
                        && a.value
                            .data()
                            .iter()
                            .zip(b.value.data())
                            .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
                })
    }
}
