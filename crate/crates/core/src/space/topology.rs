use serde::{Deserialize, Serialize};

use super::operation::OperationKind;
use crate::data::TaskType;
use crate::error::{bail, Result};

/// Edges of one cell. Nodes 0 and 1 are the cell inputs, nodes
/// `2..=N+1` the intermediate states; an edge `(i, j)` exists for every
/// `i < j` with `j >= 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl CellTopology {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes == 0 {
            bail!(Config, "a cell needs at least one intermediate node");
        }
        let edges = (2..nodes + 2).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
        Ok(Self { nodes, edges })
    }

    /// Indices into `edges` of the edges entering node `j`.
    pub fn incoming(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.1 == j).map(|(k, _)| k)
    }
}

/// Everything that fixes the shape of a supernet or child network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub task_type: TaskType,
    pub nodes: usize,
    pub k_max: usize,
    pub embed_dim: usize,
    /// Candidate set; the full ten operations unless restricted.
    pub ops: Vec<OperationKind>,
    pub vocab_size: usize,
    pub num_classes: usize,
}

impl SpaceConfig {
    pub fn new(task_type: TaskType, vocab_size: usize, num_classes: usize) -> Self {
        Self {
            task_type,
            nodes: 3,
            k_max: 8,
            embed_dim: 128,
            ops: OperationKind::ALL.to_vec(),
            vocab_size,
            num_classes,
        }
    }

    pub fn topology(&self) -> CellTopology {
        CellTopology::new(self.nodes.max(1)).expect("validated node count")
    }

    pub fn op_index(&self, op: OperationKind) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            bail!(Config, "a cell needs at least one intermediate node");
        }
        if self.k_max == 0 {
            bail!(Config, "k_max must be at least 1");
        }
        if self.embed_dim == 0 {
            bail!(Config, "embedding dimension must be positive");
        }
        if self.ops.is_empty() {
            bail!(Config, "the candidate operation set is empty");
        }
        let mut seen = self.ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ops.len() {
            bail!(Config, "the candidate operation set lists an operation twice");
        }
        if self.vocab_size < 2 {
            bail!(Config, "vocabulary must hold at least the padding and unknown tokens");
        }
        if self.num_classes < 2 {
            bail!(Config, "a classification task needs at least two classes");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_nodes_give_nine_edges() {
        let t = CellTopology::new(3).unwrap();
        assert_eq!(t.edges.len(), 9);
        assert!(t.edges.iter().all(|&(i, j)| i < j && (2..=4).contains(&j)));
        assert_eq!(t.incoming(4).count(), 4);
        assert_eq!(CellTopology::new(1).unwrap().edges, vec![(0, 2), (1, 2)]);
        assert!(CellTopology::new(0).is_err());
    }

    #[test]
    fn edges_are_in_topological_order() {
        let t = CellTopology::new(5).unwrap();
        for w in t.edges.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }
}
