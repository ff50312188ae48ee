//! Reverse-mode differentiation and its finite-difference verifier.

pub mod gradcheck;
pub mod graph;
pub mod store;

pub use gradcheck::{grad_check, run_suite, GradCheckOptions, GradCheckResult, OpReport};
pub use graph::{Fault, Gradients, Graph, NodeId, OpKind};
pub use store::{checksum, NamedStore, ParamStore, StatsStore};
