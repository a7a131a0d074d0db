//! Distributed optimization for networked estimation and control.
//!
//! Three coupled convex-QP classes (shared variable, coupled constraints,
//! coupled cost), decomposition algorithms for each, instance generators and
//! a benchmark harness.

pub mod block;
pub mod consensus;
pub mod dual;
pub mod error;
pub mod generators;
pub mod harness;
pub mod linalg;
pub mod local_solver;
pub mod network;
pub mod oracle;
mod parallel;
pub mod problem;
pub mod trace;

pub use error::{Error, Result};
