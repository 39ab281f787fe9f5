//! Probabilistic modeling on a differentiable computational graph: random
//! variables, variational and Monte Carlo inference, and model criticism.

pub mod error;
pub mod distributions;
pub mod graph;
pub mod model;
pub mod inference;
pub mod criticism;

pub use error::{Error, Result};
pub use distributions::{CustomFamily, Distribution, Family};
pub use graph::{Feed, Graph, NodeId, RngState, Shape, Tensor};
pub use model::{Param, Program, Rv};
