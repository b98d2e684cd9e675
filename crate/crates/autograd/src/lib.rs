//! Reverse-mode automatic differentiation over NCHW tensors.
//!
//! Execution is single-threaded with a fixed evaluation order, so identical
//! inputs and parameters always produce bit-identical outputs. Entropy-coded
//! bitstreams rely on this: encoder and decoder must derive the same
//! probability tables from the same network evaluation.

mod graph;
mod params;
mod real;
mod tensor;

pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;

pub use graph::{sigmoid, softplus, CustomOp, Gradients, Graph, Mode, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
