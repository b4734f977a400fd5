//! Decision procedures on desk-scale inputs: linearizability of a history,
//! strong linearizability of an execution tree, and forward simulation
//! between explicit transition systems.

pub mod fwdsim;
pub mod linearizability;
pub mod strong;
pub mod tree;

use thiserror::Error;

use crate::history::MalformedHistory;

pub use fwdsim::{check_forward_simulation, compose, ExplicitLts, FwdSimVerdict, LtsLabel, Relation};
pub use linearizability::{check_linearizable, check_linearizable_with, LinVerdict};
pub use strong::{
    check_strongly_linearizable, check_strongly_linearizable_with, verify_assignment, Assignment, Counterexample,
    StrongConfig, StrongVerdict,
};
pub use tree::ExecutionTree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error(transparent)]
    Malformed(#[from] MalformedHistory),
    #[error("bound exceeded: {size} {what}, limit {bound}")]
    BoundExceeded {
        what: &'static str,
        size: usize,
        bound: usize,
    },
}
