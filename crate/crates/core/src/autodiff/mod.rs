//! Reverse-mode differentiation over dense `f64` tensors, the layers the
//! networks are built from, Adam, and checkpoint IO.

mod adam;
mod check;
pub mod checkpoint;
mod graph;
pub mod layers;
mod tensor;

pub use adam::{Adam, AdamConfig, DecayClock};
pub use check::{check_gradients, relative_error, GradientMismatch, GradientReport};
pub use graph::{Graph, Var};
pub use tensor::{ParamTree, Tensor};

#[cfg(test)]
mod tests;
