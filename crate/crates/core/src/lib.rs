// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// The manifest format in the cli docs is tab-delimited.
#![allow(clippy::tabs_in_doc_comments)]

pub mod autodiff;
pub mod cli;
pub mod mesh_io;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod synth;
pub mod train;
