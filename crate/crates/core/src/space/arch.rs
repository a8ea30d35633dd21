use rand::Rng;
use serde::{Deserialize, Serialize};

use super::child::ChildGraph;
use super::gumbel::{gumbel_noise, relaxed_softmax_var};
use super::topology::SpaceConfig;
use crate::error::{bail, Result};
use crate::nn::{Binding, ParamId, ParamStore};
use crate::tensor::{argmax, Tape, Tensor, Var};

/// Logits of the depth distribution and of one operation distribution per
/// edge. The edge logits are shared by every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    pub store: ParamStore,
    pub theta_k: ParamId,
    pub theta_o: Vec<ParamId>,
    pub tau: f64,
}

/// One architecture draw as tape values: a vector over depths and one
/// vector over candidate operations per edge.
#[derive(Debug, Clone)]
pub struct ArchSample<'t> {
    pub k: Var<'t>,
    pub edges: Vec<Var<'t>>,
}

impl<'t> ArchSample<'t> {
    /// Constant one-hot vectors encoding a child.
    pub fn fixed(tape: &'t Tape, space: &SpaceConfig, child: &ChildGraph) -> Result<Self> {
        child.validate_for(space)?;
        let one_hot = |n: usize, at: usize| {
            let mut v = vec![0.0; n];
            v[at] = 1.0;
            v
        };
        let k = tape.constant(vec![space.k_max], one_hot(space.k_max, child.k - 1))?;
        let edges = child
            .edges
            .iter()
            .map(|e| {
                let at = space.op_index(e.op).expect("validated");
                tape.constant(vec![space.ops.len()], one_hot(space.ops.len(), at))
            })
            .collect::<Result<_>>()?;
        Ok(Self { k, edges })
    }

    /// Depth selected by this sample (1-based).
    pub fn depth(&self) -> usize {
        argmax(&self.k.value()) + 1
    }

    /// The child whose operations are the per-edge argmax of this sample.
    pub fn child(&self, space: &SpaceConfig) -> Result<ChildGraph> {
        let ops: Vec<_> = self.edges.iter().map(|v| space.ops[argmax(&v.value())]).collect();
        ChildGraph::new(space, self.depth(), &ops)
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

impl ArchParams {
    /// Zero logits, i.e. uniform distributions.
    pub fn new(space: &SpaceConfig, tau: f64) -> Result<Self> {
        space.validate()?;
        if !(tau > 0.0) {
            bail!(Config, "temperature must be positive, got {}", tau);
        }
        let mut store = ParamStore::new();
        let theta_k = store.add("theta_k", Tensor::zeros(vec![space.k_max]));
        let theta_o = (0..space.topology().edges.len())
            .map(|e| store.add(format!("theta_o.{e}"), Tensor::zeros(vec![space.ops.len()])))
            .collect();
        Ok(Self {
            store,
            theta_k,
            theta_o,
            tau,
        })
    }

    /// Logits peaked at `child`: `margin` on the chosen entries, zero elsewhere.
    pub fn peaked(space: &SpaceConfig, child: &ChildGraph, margin: f64) -> Result<Self> {
        child.validate_for(space)?;
        let mut arch = Self::new(space, 1.0)?;
        arch.store.get_mut(arch.theta_k).data_mut()[child.k - 1] = margin;
        for (e, edge) in child.edges.iter().enumerate() {
            let at = space.op_index(edge.op).expect("validated");
            arch.store.get_mut(arch.theta_o[e]).data_mut()[at] = margin;
        }
        Ok(arch)
    }

    pub fn theta_k(&self) -> &[f64] {
        self.store.get(self.theta_k).data()
    }

    pub fn theta_o(&self, edge: usize) -> &[f64] {
        self.store.get(self.theta_o[edge]).data()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn probs_k(&self) -> Vec<f64> {
        softmax(self.theta_k())
    }

    pub fn probs_o(&self, edge: usize) -> Vec<f64> {
        softmax(self.theta_o(edge))
    }

    pub fn entropy_k(&self) -> f64 {
        entropy(&self.probs_k())
    }

    pub fn mean_entropy_o(&self) -> f64 {
        let n = self.theta_o.len();
        (0..n).map(|e| entropy(&self.probs_o(e))).sum::<f64>() / n as f64
    }

    /// Draws Gumbel-Softmax samples for the depth and then for every edge,
    /// in that order. With `straight_through` the forward values are
    /// one-hot while gradients follow the relaxed sample.
    pub fn sample<'t, R: Rng>(
        &self,
        bind: &Binding<'t, '_>,
        rng: &mut R,
        straight_through: bool,
    ) -> Result<ArchSample<'t>> {
        let draw = |id: ParamId, rng: &mut R| -> Result<Var<'t>> {
            let theta = bind.var(id);
            let g = gumbel_noise(theta.shape()[0], rng);
            let y = relaxed_softmax_var(&theta, &g, self.tau)?;
            if straight_through {
                y.straight_through()
            } else {
                Ok(y)
            }
        };
        let k = draw(self.theta_k, rng)?;
        let edges = self.theta_o.iter().map(|&id| draw(id, rng)).collect::<Result<_>>()?;
        Ok(ArchSample { k, edges })
    }

    /// Argmax child; ties go to the lowest index.
    pub fn derive(&self, space: &SpaceConfig) -> Result<ChildGraph> {
        if self.theta_o.len() != space.topology().edges.len() || self.theta_k().len() != space.k_max {
            bail!(Validation, "architecture logits do not match the search space");
        }
        let ops: Vec<_> = (0..self.theta_o.len())
            .map(|e| space.ops[argmax(self.theta_o(e))])
            .collect();
        ChildGraph::new(space, argmax(self.theta_k()) + 1, &ops)
    }
}
