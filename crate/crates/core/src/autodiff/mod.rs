//! Reverse-mode differentiation substrate and the RMSprop / Polyak parameter updates.

mod graph;
mod params;
mod tensor;

pub use graph::{Axis, Bound, DiffNode, Graph, NodeId, Primitive};
pub use params::{ParamSet, RmsPropConfig};
pub use tensor::Tensor;
