//! The macro search space: candidate operations, the cell graph, architecture
//! distributions, and the supernet and child networks.

mod arch;
mod child;
mod gumbel;
mod network;
mod operation;
mod topology;

pub use arch::{ArchParams, ArchSample};
pub use child::{ChildEdge, ChildGraph, CHILD_SCHEMA_VERSION};
pub use gumbel::{gumbel_noise, gumbel_softmax, relaxed_softmax, relaxed_softmax_var};
pub use network::{ChildNet, ChildOutput, LayerOutput, Network, SuperNet, SuperOutput};
pub use operation::{OpShape, OperationKind};
pub use topology::{CellTopology, SpaceConfig};
