//! Dense reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` matrices recorded on a [`Tape`]. Graph
//! aggregations (`neighbor_mean`, `neighbor_max`, `gcn_aggregate`) take a
//! precomputed [`Adjacency`] instead of a dense `N x N` operator.

mod adjacency;
pub mod gradcheck;
mod matrix;
mod tape;

pub use adjacency::Adjacency;
pub use matrix::Matrix;
pub use tape::{Gradients, Mode, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("loss is not recorded on the active tape")]
    NotOnTape,
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
}
