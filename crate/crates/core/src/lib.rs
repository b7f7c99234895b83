//! Execution-trace supervision toolkit: instruments small Python functions
//! with state-printing anchors, scores tagged model responses against the
//! resulting traces, and computes step-level and terminal advantages.

pub mod advantage;
pub mod align;
pub mod codec;
pub mod executor;
pub mod instrument;
pub mod literal;
pub mod model;
pub mod pipeline;
pub mod reward;
pub mod sim;

pub use model::*;
