//! Minimal reverse-mode automatic differentiation over dense arrays.

pub mod check;
pub mod graph;
pub mod rnn;
pub mod tensor;

pub use check::{catalog_reports, grad_check_fn, CheckReport};
pub use graph::{GradientMap, Graph, NodeId};
pub use rnn::{bigru, BiGru, GruDir};
pub use tensor::{Scalar, Tensor};
