//! Minimal reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

pub mod gradcheck;
mod kernels;
mod ops;
mod optim;
mod tape;

pub use ops::PROB_EPS;
pub use optim::Sgd;
pub use tape::{Mode, Tape, Var};
