//! Signal temporal logic trees with fault-tolerant feasible sets and
//! hierarchical control synthesis.
//!
//! The pipeline goes: parse a nested STL formula over box/halfspace
//! predicates ([`formula`]), compile it into a tree of state-space regions by
//! backward reachability ([`tree`], [`reach`], [`sets`]), precompute
//! fault-tolerant feasible set tables for online monitoring ([`feasible`],
//! [`monitor`]), and synthesize a hierarchical controller (MPC reference
//! planner plus fixed-time CBF quadratic programs, [`ctrl`]) that is
//! exercised in closed loop by [`sim`].
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `stlt` binary for the batch CLI.

pub mod ctrl;
pub mod dynamics;
pub mod error;
pub mod feasible;
pub mod formula;
pub mod monitor;
pub mod qp;
pub mod reach;
// pub mod scenario;
pub mod sets;
// pub mod sim;
pub mod tree;

pub use error::{Error, Result};
