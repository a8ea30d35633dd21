use std::cell::{Cell, RefCell};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::arch::{ArchParams, ArchSample};
use super::child::ChildGraph;
use super::operation::{OpShape, OperationKind};
use super::topology::SpaceConfig;
use crate::data::{EncodedBatch, TaskType, PAD};
use crate::error::{bail, Result};
use crate::nn::{Binding, ParamId, ParamStore};
use crate::tensor::{BatchNormStats, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvWeights {
    kernel: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OpSlot {
    kind: OperationKind,
    conv: Option<ConvWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    edges: Vec<Vec<OpSlot>>,
    node_attn: ParamId,
    pool: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Per-layer results: the attention-pooled representation `[B, C]` and the
/// layer's probe logits `[B, classes]`.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput<'t> {
    pub pooled: Var<'t>,
    pub logits: Var<'t>,
}

/// Stacked cells over an embedding table. Each edge holds weights for one or
/// more candidate operations; every layer owns its weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub store: ParamStore,
    space: SpaceConfig,
    embedding: ParamId,
    layers: Vec<Layer>,
    bn: RefCell<Vec<BatchNormStats>>,
    #[serde(skip)]
    cells_run: Cell<usize>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.store == other.store
            && self.space == other.space
            && self.layers == other.layers
            && self.bn == other.bn
    }
}

impl Network {
    /// Builds `depth` layers where edge `e` carries the operations `edge_ops[e]`.
    /// Weights use uniform fan-in initialization; batch-norm scales start at
    /// one and shifts at zero.
    pub fn new<R: Rng>(
        space: &SpaceConfig,
        depth: usize,
        edge_ops: &[Vec<OperationKind>],
        rng: &mut R,
    ) -> Result<Self> {
        space.validate()?;
        let topo = space.topology();
        if edge_ops.len() != topo.edges.len() {
            bail!(Validation, "{} edge operation lists for {} edges", edge_ops.len(), topo.edges.len());
        }
        if depth == 0 {
            bail!(Validation, "a network needs at least one layer");
        }
        let c = space.embed_dim;
        let mut store = ParamStore::new();
        let mut bn = Vec::new();
        let embedding = store.add_fan_in("embedding", vec![space.vocab_size, c], 1, rng);
        let mut layers = Vec::with_capacity(depth);
        for l in 1..=depth {
            let mut edges = Vec::with_capacity(topo.edges.len());
            for (&(i, j), ops) in topo.edges.iter().zip(edge_ops) {
                let mut slots = Vec::with_capacity(ops.len());
                for &kind in ops {
                    let conv = match kind.shape() {
                        OpShape::Conv { kernel, .. } => {
                            let p = format!("layer{l}.edge{i}-{j}.{kind}");
                            let w = ConvWeights {
                                kernel: store.add_fan_in(format!("{p}.kernel"), vec![c, c, kernel], c * kernel, rng),
                                bias: store.add_fan_in(format!("{p}.bias"), vec![c], c * kernel, rng),
                                gamma: store.add_const(format!("{p}.bn_gamma"), vec![c], 1.0),
                                beta: store.add_const(format!("{p}.bn_beta"), vec![c], 0.0),
                                bn: bn.len(),
                            };
                            bn.push(BatchNormStats::new(c));
                            Some(w)
                        }
                        _ => None,
                    };
                    slots.push(OpSlot { kind, conv });
                }
                edges.push(slots);
            }
            layers.push(Layer {
                edges,
                node_attn: store.add_fan_in(format!("layer{l}.node_attn"), vec![c], c, rng),
                pool: store.add_fan_in(format!("layer{l}.probe.pool"), vec![c], c, rng),
                head_w: store.add_fan_in(format!("layer{l}.probe.weight"), vec![space.num_classes, c], c, rng),
                head_b: store.add_fan_in(format!("layer{l}.probe.bias"), vec![space.num_classes], c, rng),
            });
        }
        Ok(Self {
            store,
            space: space.clone(),
            embedding,
            layers,
            bn: RefCell::new(bn),
            cells_run: Cell::new(0),
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Cells executed since construction or the last reset.
    pub fn cells_run(&self) -> usize {
        self.cells_run.get()
    }

    pub fn reset_cells_run(&self) {
        self.cells_run.set(0);
    }

    pub fn batch_norm_stats(&self) -> Vec<BatchNormStats> {
        self.bn.borrow().clone()
    }

    fn op_forward<'t>(
        &self,
        bind: &Binding<'t, '_>,
        slot: &OpSlot,
        h: Var<'t>,
        train: bool,
    ) -> Result<Option<Var<'t>>> {
        Ok(match slot.kind.shape() {
            OpShape::Conv { dilation, .. } => {
                let w = slot.conv.as_ref().expect("conv slots carry weights");
                let y = h.relu().conv1d(&bind.var(w.kernel), Some(&bind.var(w.bias)), dilation)?;
                let mut bn = self.bn.borrow_mut();
                Some(y.batch_norm(&bind.var(w.gamma), &bind.var(w.beta), &mut bn[w.bn], train)?)
            }
            OpShape::Pool(kind) => Some(h.pool1d(kind)?),
            OpShape::Identity => Some(h),
            OpShape::Zero => None,
        })
    }

    /// Output of one edge, or `None` when it contributes nothing. With a
    /// weight vector the edge is the weighted sum of its candidates; every
    /// candidate runs when the weights need a gradient, otherwise only the
    /// ones with nonzero weight.
    fn edge_forward<'t>(
        &self,
        bind: &Binding<'t, '_>,
        slots: &[OpSlot],
        weights: Option<&Var<'t>>,
        h: Var<'t>,
        train: bool,
    ) -> Result<Option<Var<'t>>> {
        let Some(v) = weights else {
            return self.op_forward(bind, &slots[0], h, train);
        };
        if v.shape() != [slots.len()] {
            bail!(Dimension, "edge weights {:?} for {} candidates", v.shape(), slots.len());
        }
        let w = v.value();
        let all = v.requires_grad();
        let mut items = Vec::with_capacity(slots.len());
        for (slot, &wo) in slots.iter().zip(w.iter()) {
            let out = if all || wo != 0.0 {
                self.op_forward(bind, slot, h, train)?
            } else {
                None
            };
            items.push(out.unwrap_or_else(|| bind.tape().zeros(h.shape())));
        }
        Ok(Some(Var::weighted_sum(v, &items)?))
    }

    fn cell_forward<'t>(
        &self,
        bind: &Binding<'t, '_>,
        layer: &Layer,
        c0: Var<'t>,
        c1: Var<'t>,
        weights: Option<&[Var<'t>]>,
        train: bool,
    ) -> Result<Var<'t>> {
        self.cells_run.set(self.cells_run.get() + 1);
        let topo = self.space.topology();
        let mut states = vec![c0, c1];
        for j in 2..topo.nodes + 2 {
            let mut parts = Vec::new();
            for e in topo.incoming(j) {
                let (i, _) = topo.edges[e];
                if let Some(out) = self.edge_forward(bind, &layer.edges[e], weights.map(|w| &w[e]), states[i], train)? {
                    parts.push(out);
                }
            }
            states.push(match parts.len() {
                0 => bind.tape().zeros(c0.shape()),
                1 => parts[0],
                _ => Var::add_n(&parts)?,
            });
        }
        let attn = bind.var(layer.node_attn);
        let scores = states[2..]
            .iter()
            .map(|s| s.mean_last()?.row_dot(&attn))
            .collect::<Result<Vec<_>>>()?;
        let alpha = Var::stack_columns(&scores)?.softmax()?;
        Var::batched_weighted_sum(&alpha, &states[2..])
    }

    fn probe<'t>(&self, bind: &Binding<'t, '_>, layer: &Layer, h: Var<'t>) -> Result<LayerOutput<'t>> {
        let alpha = h.channel_dot(&bind.var(layer.pool))?.softmax()?;
        let pooled = h.sequence_pool(&alpha)?;
        let logits = pooled.linear(&bind.var(layer.head_w), &bind.var(layer.head_b))?;
        Ok(LayerOutput { pooled, logits })
    }

    /// Embedded layer-one inputs. A single-text batch yields one tensor used
    /// for both inputs.
    pub fn embed<'t>(&self, bind: &Binding<'t, '_>, batch: &EncodedBatch) -> Result<(Var<'t>, Var<'t>)> {
        if batch.batch == 0 {
            bail!(Validation, "empty batch");
        }
        let table = bind.var(self.embedding);
        let a = Var::embedding(&table, &batch.tokens_a, batch.batch, batch.len, Some(PAD))?;
        let b = match self.space.task_type {
            TaskType::SingleText => a,
            TaskType::TextPair => Var::embedding(&table, &batch.tokens_b, batch.batch, batch.len, Some(PAD))?,
        };
        Ok((a, b))
    }

    /// Runs every layer. `edge_weights`, when given, holds one weight vector
    /// per edge over that edge's candidates; otherwise each edge runs its only
    /// operation.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t, '_>,
        batch: &EncodedBatch,
        edge_weights: Option<&[Var<'t>]>,
        train: bool,
    ) -> Result<Vec<LayerOutput<'t>>> {
        if batch.task_type != self.space.task_type {
            bail!(Validation, "a {} batch for a {} network", batch.task_type, self.space.task_type);
        }
        let (a, b) = self.embed(bind, batch)?;
        let mut cells: Vec<Var<'t>> = Vec::with_capacity(self.layers.len());
        let mut outs = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (c0, c1) = match l {
                0 => (a, b),
                1 => (cells[0], cells[0]),
                _ => (cells[l - 2], cells[l - 1]),
            };
            let c = self.cell_forward(bind, layer, c0, c1, edge_weights, train)?;
            outs.push(self.probe(bind, layer, c)?);
            cells.push(c);
        }
        Ok(outs)
    }
}

/// Result of a supernet pass: every layer's outputs and the depth-gated
/// final logits.
#[derive(Debug, Clone)]
pub struct SuperOutput<'t> {
    pub layers: Vec<LayerOutput<'t>>,
    pub logits: Var<'t>,
}

/// The parent network: every candidate operation on every edge of all
/// `k_max` layers, plus the architecture distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperNet {
    pub net: Network,
    pub arch: ArchParams,
}

impl SuperNet {
    pub fn new<R: Rng>(space: &SpaceConfig, tau: f64, rng: &mut R) -> Result<Self> {
        let edges = space.topology().edges.len();
        let net = Network::new(space, space.k_max, &vec![space.ops.clone(); edges], rng)?;
        Ok(Self {
            net,
            arch: ArchParams::new(space, tau)?,
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        self.net.space()
    }

    /// Final logits are `Σ_k y_k · logits_k` over all `k_max` layers.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t, '_>,
        sample: &ArchSample<'t>,
        batch: &EncodedBatch,
        train: bool,
    ) -> Result<SuperOutput<'t>> {
        let layers = self.net.forward(bind, batch, Some(&sample.edges), train)?;
        let logits: Vec<Var<'t>> = layers.iter().map(|o| o.logits).collect();
        let logits = Var::weighted_sum(&sample.k, &logits)?;
        Ok(SuperOutput { layers, logits })
    }
}

/// A derived architecture with its own weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildNet {
    pub graph: ChildGraph,
    pub net: Network,
}

#[derive(Debug, Clone)]
pub struct ChildOutput<'t> {
    pub layers: Vec<LayerOutput<'t>>,
    pub logits: Var<'t>,
}

impl ChildNet {
    /// Fresh weights for `graph`.
    pub fn new<R: Rng>(space: &SpaceConfig, graph: &ChildGraph, rng: &mut R) -> Result<Self> {
        graph.validate_for(space)?;
        let ops: Vec<Vec<OperationKind>> = graph.edges.iter().map(|e| vec![e.op]).collect();
        Ok(Self {
            graph: graph.clone(),
            net: Network::new(space, graph.k, &ops, rng)?,
        })
    }

    /// Copies the matching weights and batch-norm statistics out of a
    /// supernet.
    pub fn from_supernet(supernet: &Network, graph: &ChildGraph) -> Result<Self> {
        let space = supernet.space();
        graph.validate_for(space)?;
        let mut child = Self::new(space, graph, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let copy = |dst: &mut ParamStore, d: ParamId, s: ParamId| {
            dst.get_mut(d).data_mut().copy_from_slice(supernet.store.get(s).data());
        };
        let src_bn = supernet.bn.borrow();
        let mut dst_bn = child.net.bn.borrow_mut();
        let store = &mut child.net.store;
        copy(store, child.net.embedding, supernet.embedding);
        for (dl, sl) in child.net.layers.iter().zip(&supernet.layers) {
            for (dslots, sslots) in dl.edges.iter().zip(&sl.edges) {
                let d = &dslots[0];
                let s = sslots.iter().find(|s| s.kind == d.kind).expect("validated op");
                if let (Some(dw), Some(sw)) = (&d.conv, &s.conv) {
                    copy(store, dw.kernel, sw.kernel);
                    copy(store, dw.bias, sw.bias);
                    copy(store, dw.gamma, sw.gamma);
                    copy(store, dw.beta, sw.beta);
                    dst_bn[dw.bn] = src_bn[sw.bn].clone();
                }
            }
            copy(store, dl.node_attn, sl.node_attn);
            copy(store, dl.pool, sl.pool);
            copy(store, dl.head_w, sl.head_w);
            copy(store, dl.head_b, sl.head_b);
        }
        drop(dst_bn);
        Ok(child)
    }

    /// Runs the `K` layers; the classification logits are layer `K`'s.
    pub fn forward<'t>(&self, bind: &Binding<'t, '_>, batch: &EncodedBatch, train: bool) -> Result<ChildOutput<'t>> {
        let layers = self.net.forward(bind, batch, None, train)?;
        let logits = layers.last().expect("at least one layer").logits;
        Ok(ChildOutput { layers, logits })
    }
}
