//! Structured prediction over discrete factor graphs with LP-relaxed and
//! exact MAP inference, structured SVM training, and diagnostics for the
//! tightness of the local-polytope relaxation.

pub mod cli;
pub mod data_io;
pub mod error;
pub mod factor_graph;
mod float_serde;
pub mod inference;
pub mod minimal_rep;
pub mod polytope_lp;
pub mod ssvm;
pub mod tightness;

pub use error::{Error, Result};
