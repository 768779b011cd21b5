//! Minimal dense-array and reverse-mode differentiation kernel.

mod array;
mod params;
mod tape;

pub use array::NdArray;
pub use params::{BoundParams, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
