//! Dense `f64` tensors, a small reverse-mode differentiation graph, the
//! layers the forecasting networks are made of, and a finite-difference
//! gradient verifier.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_check, CheckReport, CheckSpec};
pub use graph::{Frozen, Gradients, Graph, Var};
pub use optim::{step_decay_lr, AdamW};
pub use params::{init, ParamStore, Parameter};
pub use tensor::Tensor;
