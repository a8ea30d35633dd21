use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::space::{ArchSample, ChildGraph, OpShape, OperationKind};
use crate::tensor::Var;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub op: OperationKind,
    pub raw_params: u64,
    pub raw_flops: u64,
    pub size_norm: f64,
    pub flops_norm: f64,
}

impl OpCost {
    /// Normalized size plus normalized FLOPs.
    pub fn combined(&self) -> f64 {
        self.size_norm + self.flops_norm
    }
}

/// Analytic size and FLOPs of every candidate operation for one `[1, C, L]`
/// input, plus their values normalized by the largest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub embed_dim: usize,
    pub seq_len: usize,
    pub entries: Vec<OpCost>,
}

/// Conv blocks count kernel, bias and the two batch-norm affine vectors;
/// a multiply-add counts as two FLOPs. Pools cost one operation per window
/// element and hold no weights; skip and zero are free.
pub fn build_cost_table(embed_dim: usize, seq_len: usize) -> Result<CostTable> {
    if embed_dim == 0 || seq_len == 0 {
        bail!(Config, "cost table needs positive dimensions, got C={} L={}", embed_dim, seq_len);
    }
    let (c, l) = (embed_dim as u64, seq_len as u64);
    let raw: Vec<(OperationKind, u64, u64)> = OperationKind::ALL
        .iter()
        .map(|&op| match op.shape() {
            OpShape::Conv { kernel, .. } => {
                let k = kernel as u64;
                (op, k * c * c + 3 * c, 2 * k * c * c * l)
            }
            OpShape::Pool(_) => (op, 0, 3 * c * l),
            OpShape::Identity | OpShape::Zero => (op, 0, 0),
        })
        .collect();
    let max_p = raw.iter().map(|r| r.1).max().unwrap_or(0).max(1) as f64;
    let max_f = raw.iter().map(|r| r.2).max().unwrap_or(0).max(1) as f64;
    Ok(CostTable {
        embed_dim,
        seq_len,
        entries: raw
            .into_iter()
            .map(|(op, p, f)| OpCost {
                op,
                raw_params: p,
                raw_flops: f,
                size_norm: p as f64 / max_p,
                flops_norm: f as f64 / max_f,
            })
            .collect(),
    })
}

impl CostTable {
    pub fn get(&self, op: OperationKind) -> &OpCost {
        self.entries.iter().find(|e| e.op == op).expect("every operation has a cost")
    }

    /// Combined costs for a candidate list, in list order.
    pub fn combined(&self, ops: &[OperationKind]) -> Vec<f64> {
        ops.iter().map(|&o| self.get(o).combined()).collect()
    }
}

/// `(K / K_max) * Σ_edges Σ_o v_o * (size_o + flops_o)` where
/// `K = Σ_k k * y_k` over the depth vector.
pub fn efficiency_loss(
    edge_weights: &[Vec<f64>],
    depth_weights: &[f64],
    ops: &[OperationKind],
    table: &CostTable,
) -> Result<f64> {
    let costs = table.combined(ops);
    if let Some(v) = edge_weights.iter().find(|v| v.len() != costs.len()) {
        bail!(Dimension, "edge vector of {} entries for {} candidates", v.len(), costs.len());
    }
    if depth_weights.is_empty() {
        bail!(Dimension, "empty depth vector");
    }
    let k: f64 = depth_weights.iter().enumerate().map(|(i, y)| (i + 1) as f64 * y).sum();
    let cell: f64 = edge_weights
        .iter()
        .map(|v| v.iter().zip(&costs).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(k / depth_weights.len() as f64 * cell)
}

/// Tape version of [`efficiency_loss`] for an architecture sample.
pub fn efficiency_loss_var<'t>(
    sample: &ArchSample<'t>,
    ops: &[OperationKind],
    table: &CostTable,
) -> Result<Var<'t>> {
    let tape = sample.k.tape();
    let k_max = sample.k.shape()[0];
    let depths = tape.constant(vec![k_max], (1..=k_max).map(|k| k as f64).collect())?;
    let costs = tape.constant(vec![ops.len()], table.combined(ops))?;
    let per_edge = sample
        .edges
        .iter()
        .map(|v| v.dot(&costs))
        .collect::<Result<Vec<_>>>()?;
    let cell = Var::add_n(&per_edge)?;
    Ok(sample.k.dot(&depths)?.mul(&cell)?.scale(1.0 / k_max as f64))
}

/// Efficiency loss of a discrete child.
pub fn child_efficiency(child: &ChildGraph, k_max: usize, table: &CostTable) -> f64 {
    let cell: f64 = child.edges.iter().map(|e| table.get(e.op).combined()).sum();
    child.k as f64 / k_max as f64 * cell
}

/// Parameter count of a child at inference time. Summaries are the
/// per-layer node-attention vectors and the final sequence-pooling vector.
/// The probe heads of layers below `K` exist only for distillation during
/// training and are listed separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub embedding: u64,
    pub operations: u64,
    pub summaries: u64,
    pub head: u64,
    pub training_only: u64,
}

impl ParamBreakdown {
    pub fn total(&self) -> u64 {
        self.embedding + self.operations + self.summaries + self.head
    }
}

pub fn child_params(child: &ChildGraph, vocab_size: usize, num_classes: usize, table: &CostTable) -> ParamBreakdown {
    let (c, k, n) = (child.embed_dim as u64, child.k as u64, num_classes as u64);
    let cell: u64 = child.edges.iter().map(|e| table.get(e.op).raw_params).sum();
    let probe = c + n * c + n;
    ParamBreakdown {
        embedding: vocab_size as u64 * c,
        operations: k * cell,
        summaries: k * c + c,
        head: n * c + n,
        training_only: (k - 1) * probe,
    }
}

/// FLOPs of the searched operations over all `K` layers.
pub fn child_flops(child: &ChildGraph, table: &CostTable) -> u64 {
    child.k as u64 * child.edges.iter().map(|e| table.get(e.op).raw_flops).sum::<u64>()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub task: String,
    pub k: usize,
    pub params: String,
    pub speedup: String,
}

/// Searched structures reported for the GLUE tasks (layers, parameters,
/// inference speedup over BERT-base), reproduced for context.
pub fn reference_rows() -> Vec<ReferenceRow> {
    [
        ("SST-2", 3, "6.4M", "29.3x"),
        ("MRPC", 4, "7.5M", "19.2x"),
        ("QQP", 5, "8.2M", "16.4x"),
        ("MNLI", 7, "9.5M", "12.7x"),
        ("QNLI", 5, "7.9M", "18.1x"),
        ("RTE", 6, "8.6M", "15.5x"),
    ]
    .into_iter()
    .map(|(t, k, p, s)| ReferenceRow {
        task: t.into(),
        k,
        params: p.into(),
        speedup: s.into(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildCost {
    pub child: String,
    pub k: usize,
    pub params: ParamBreakdown,
    pub total_params: u64,
    pub total_flops: u64,
    pub efficiency_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub embed_dim: usize,
    pub seq_len: usize,
    pub ops: Vec<OpCost>,
    pub child: Option<ChildCost>,
    pub reference: Vec<ReferenceRow>,
}

pub fn cost_report(
    table: &CostTable,
    child: Option<&ChildGraph>,
    vocab_size: usize,
    num_classes: usize,
    k_max: usize,
) -> CostReport {
    CostReport {
        embed_dim: table.embed_dim,
        seq_len: table.seq_len,
        ops: table.entries.clone(),
        child: child.map(|g| {
            let params = child_params(g, vocab_size, num_classes, table);
            ChildCost {
                child: g.encoding(),
                k: g.k,
                params,
                total_params: params.total(),
                total_flops: child_flops(g, table),
                efficiency_loss: child_efficiency(g, k_max, table),
            }
        }),
        reference: reference_rows(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskType;
    use crate::nn::Binding;
    use crate::space::{ArchParams, Network, SpaceConfig};
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> CostTable {
        build_cost_table(128, 128).unwrap()
    }

    #[test]
    fn anchors() {
        let t = table();
        let skip = t.get(OperationKind::Skip);
        assert_eq!((skip.raw_params, skip.raw_flops, skip.size_norm, skip.flops_norm), (0, 0, 0.0, 0.0));
        let c7 = t.get(OperationKind::StdConv7);
        assert_eq!((c7.size_norm, c7.flops_norm), (1.0, 1.0));
        assert_eq!(t.get(OperationKind::DilConv7).size_norm, 1.0);
        assert_eq!(t.get(OperationKind::MaxPool3).raw_params, 0);
    }

    /// Weights actually allocated for one operation, counted tensor by tensor.
    fn built_params(op: OperationKind) -> u64 {
        let space = SpaceConfig { nodes: 1, k_max: 1, ..SpaceConfig::new(TaskType::SingleText, 4, 2) };
        let net = Network::new(&space, 1, &[vec![op], vec![OperationKind::Zero]], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let tag = format!(".{op}.");
        net.store
            .ids()
            .filter(|&id| net.store.name(id).contains(&tag))
            .map(|id| net.store.get(id).len() as u64)
            .sum()
    }

    #[test]
    fn raw_params_match_built_modules() {
        let t = table();
        for op in OperationKind::ALL {
            assert_eq!(t.get(op).raw_params, built_params(op), "{op}");
        }
        let r = t.get(OperationKind::StdConv3).size_norm / t.get(OperationKind::StdConv7).size_norm;
        let counted = built_params(OperationKind::StdConv3) as f64 / built_params(OperationKind::StdConv7) as f64;
        assert!((r - counted).abs() < 1e-15);
    }

    #[test]
    fn efficiency_examples() {
        let t = table();
        let ops = OperationKind::ALL.to_vec();
        let one_hot = |i: usize, n: usize| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        };
        let zero = vec![one_hot(9, 10); 9];
        for k in 0..8 {
            assert_eq!(efficiency_loss(&zero, &one_hot(k, 8), &ops, &t).unwrap(), 0.0);
        }
        let big = vec![one_hot(2, 10); 9];
        assert_eq!(efficiency_loss(&big, &one_hot(7, 8), &ops, &t).unwrap(), 18.0);
    }

    #[test]
    fn tape_version_agrees_and_has_theta_gradient() {
        let t = table();
        let space = SpaceConfig::new(TaskType::SingleText, 10, 2);
        let arch = ArchParams::new(&space, 1.0).unwrap();
        let tape = Tape::new();
        let bind = Binding::new(&tape, &arch.store);
        let s = arch.sample(&bind, &mut ChaCha8Rng::seed_from_u64(3), true).unwrap();
        let e = efficiency_loss_var(&s, &space.ops, &t).unwrap();
        let plain = efficiency_loss(
            &s.edges.iter().map(|v| v.to_vec()).collect::<Vec<_>>(),
            &s.k.to_vec(),
            &space.ops,
            &t,
        )
        .unwrap();
        assert!((e.item() - plain).abs() < 1e-12);
        let child = s.child(&space).unwrap();
        assert!((child_efficiency(&child, 8, &t) - plain).abs() < 1e-12);
        let grads = tape.backward(&e).unwrap();
        let g = grads.get(&bind.var(arch.theta_o[0])).unwrap();
        assert!(g.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn all_skip_child_has_no_operation_params() {
        let t = table();
        let space = SpaceConfig::new(TaskType::SingleText, 1000, 2);
        let child = ChildGraph::new(&space, 3, &[OperationKind::Skip; 9]).unwrap();
        let p = child_params(&child, 1000, 2, &t);
        assert_eq!(p.operations, 0);
        assert_eq!(p.embedding, 128_000);
        assert_eq!(child_flops(&child, &t), 0);
        let report = cost_report(&t, Some(&child), 1000, 2, 8);
        assert_eq!(report.reference.len(), 6);
        assert_eq!(report.reference[0], ReferenceRow { task: "SST-2".into(), k: 3, params: "6.4M".into(), speedup: "29.3x".into() });
    }
}
