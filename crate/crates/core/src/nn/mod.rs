//! Minimal differentiable computation layer.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod functional;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use adam::Adam;
pub use attention::MultiHeadAttention;
pub use functional::{cross_entropy, gumbel_softmax, gumbel_softmax_soft};
pub use gradcheck::{gradcheck_inputs, gradcheck_params, GradcheckConfig, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{LayerNorm, Linear, Mlp, MlpSpec};
pub use params::{Bound, GradStore, Init, ParamId, ParamStore};

#[cfg(test)]
mod op_tests;
