use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn add_fan_in<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::param(shape, data))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, Tensor::param(shape, vec![value; n]))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Lazily places parameters on a tape, once each, and routes gradients
/// back into the store after the backward pass.
pub struct Binding<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'t, 's> Binding<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    /// A binding that uses the given variables, one per stored parameter in
    /// store order, instead of fresh leaves.
    pub fn with_vars(tape: &'t Tape, store: &'s ParamStore, vars: &[Var<'t>]) -> Result<Self> {
        if vars.len() != store.len() {
            bail!(Dimension, "{} variables for {} parameters", vars.len(), store.len());
        }
        for (i, v) in vars.iter().enumerate() {
            if v.shape() != store.get(ParamId(i)).shape() {
                bail!(Dimension, "variable {} has shape {:?}, parameter {:?}", i, v.shape(), store.get(ParamId(i)).shape());
            }
        }
        Ok(Self {
            tape,
            store,
            vars: RefCell::new(vars.iter().map(|v| Some(*v)).collect()),
        })
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| self.tape.leaf(self.store.get(id)))
    }

    /// Gradients for every bound parameter, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(ParamId, Vec<f64>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = v.as_ref()?;
                grads.get(v).map(|g| (ParamId(i), g.to_vec()))
            })
            .collect()
    }
}

/// Rescales routed gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping. A non-positive `max_norm` disables it.
pub fn clip_grad_norm(grads: &mut [(ParamId, Vec<f64>)], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|(_, g)| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

/// Adds routed gradients into a store.
pub fn accumulate(store: &mut ParamStore, grads: Vec<(ParamId, Vec<f64>)>) -> Result<()> {
    for (id, g) in grads {
        store.get_mut(id).accumulate_grad(&g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_rescales_jointly() {
        let mut g = vec![(ParamId(0), vec![3.0]), (ParamId(1), vec![0.0, 4.0])];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[1].1, vec![0.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1[0] - 0.6).abs() < 1e-15 && (g[1].1[1] - 0.8).abs() < 1e-15);
        let mut h = vec![(ParamId(0), vec![30.0])];
        clip_grad_norm(&mut h, 0.0);
        assert_eq!(h[0].1, vec![30.0]);
    }
}
