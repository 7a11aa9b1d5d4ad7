//! Dense-tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: a [`Graph`] is rebuilt for every forward
//! pass and freed afterwards. All arithmetic is 64-bit. Every op validates
//! its output for NaN/Inf and fails loudly instead of propagating poison.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::gradcheck;
pub use graph::{Graph, NodeId, OpKind};
pub use params::{seed_for, BoundParams, ParamSet};
pub use tensor::Tensor;
