//! Deterministic simulation and checking of message-passing and
//! shared-memory implementations of concurrent objects.

pub mod abd;
pub mod bg;
pub mod checkers;
pub mod digest;
pub mod explore;
pub mod harness;
pub mod history;
pub mod mp;
pub mod object_spec;
pub mod par;
pub mod safe_agreement;
pub mod sm;
pub mod toy;
pub mod trace;
