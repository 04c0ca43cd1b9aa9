//! Graph layers and the four surrogate architectures.
//!
//! | variant | stack |
//! |---|---|
//! | `graph_conv_baseline` | GC 5→50→100→100→50→1, ReLU after each |
//! | `edge_conv_linear` | EC 5→50→100, dropout, node-linear N→N, EC 100→50→1 |
//! | `sage_conv_linear` | as above with SAGE layers |
//! | `pointnet_baseline` | shared MLP 5→50→100, max pool, MLP 200→50→1 |
//!
//! Every stack ends in a ReLU, so predicted wear is never negative.

mod checkpoint;
pub mod layers;
mod model;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{
    glorot_bound, init_params, DropoutPlacement, Model, ModelSpec, Param, Variant, WIDTHS,
};

use crate::autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(
        "graph has {found} nodes but the model was built for {expected}; \
         node-linear models are bound to one die topology"
    )]
    NodeCountMismatch { expected: usize, found: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown variant '{0}' (expected graphconv, pointnet, edgeconv-l or sageconv-l)")]
    UnknownVariant(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
