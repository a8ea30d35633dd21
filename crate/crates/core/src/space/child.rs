use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::operation::OperationKind;
use super::topology::{CellTopology, SpaceConfig};
use crate::data::TaskType;
use crate::error::{bail, Error, Result};

pub const CHILD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChildEdge {
    pub from: usize,
    pub to: usize,
    pub op: OperationKind,
}

/// A discrete architecture: depth `k` and one operation per cell edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChildGraph {
    pub schema_version: u32,
    pub task_type: TaskType,
    pub k: usize,
    pub nodes: usize,
    pub embed_dim: usize,
    pub edges: Vec<ChildEdge>,
}

impl ChildGraph {
    /// Builds a child from one operation per topology edge, in edge order.
    pub fn new(space: &SpaceConfig, k: usize, ops: &[OperationKind]) -> Result<Self> {
        let topo = space.topology();
        if ops.len() != topo.edges.len() {
            bail!(Validation, "{} operations for {} edges", ops.len(), topo.edges.len());
        }
        let child = Self {
            schema_version: CHILD_SCHEMA_VERSION,
            task_type: space.task_type,
            k,
            nodes: space.nodes,
            embed_dim: space.embed_dim,
            edges: topo
                .edges
                .iter()
                .zip(ops)
                .map(|(&(from, to), &op)| ChildEdge { from, to, op })
                .collect(),
        };
        child.validate_for(space)?;
        Ok(child)
    }

    pub fn ops(&self) -> Vec<OperationKind> {
        self.edges.iter().map(|e| e.op).collect()
    }

    /// Structural checks that need no search space.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CHILD_SCHEMA_VERSION {
            bail!(Validation, "child schema version {} (expected {})", self.schema_version, CHILD_SCHEMA_VERSION);
        }
        if self.k == 0 {
            bail!(Validation, "child depth must be at least 1");
        }
        let topo = CellTopology::new(self.nodes).map_err(|e| Error::Validation(e.to_string()))?;
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.from, e.to)).collect();
        if edges != topo.edges {
            bail!(Validation, "child edges do not match the {}-node cell", self.nodes);
        }
        Ok(())
    }

    /// Checks the child against a search space: depth, shape and candidate set.
    pub fn validate_for(&self, space: &SpaceConfig) -> Result<()> {
        self.validate()?;
        if self.k > space.k_max {
            bail!(Validation, "child depth {} exceeds k_max {}", self.k, space.k_max);
        }
        if self.nodes != space.nodes || self.embed_dim != space.embed_dim {
            bail!(Validation, "child shape (N={}, C={}) differs from the space (N={}, C={})",
                self.nodes, self.embed_dim, space.nodes, space.embed_dim);
        }
        if self.task_type != space.task_type {
            bail!(Validation, "child is for a {} task, space is {}", self.task_type, space.task_type);
        }
        if let Some(e) = self.edges.iter().find(|e| space.op_index(e.op).is_none()) {
            bail!(Validation, "edge ({}, {}) uses {} which is outside the candidate set", e.from, e.to, e.op);
        }
        Ok(())
    }

    /// Compact sortable key, e.g. `K2:skip,std_conv_3`.
    pub fn encoding(&self) -> String {
        let mut s = format!("K{}:", self.k);
        for (n, e) in self.edges.iter().enumerate() {
            if n > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", e.op);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("child graphs always serialize") + "\n"
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let child: Self = serde_json::from_str(raw)
            .map_err(|e| Error::Validation(format!("malformed child file: {e}")))?;
        child.validate()?;
        Ok(child)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }
}
