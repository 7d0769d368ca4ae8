//! Differentiable inductive logic programming.
//!
//! Rules are learned as membership-weighted neural logic functions
//! ([`dnl`]) evaluated inside a differentiable forward-chaining loop
//! ([`chain`]) over a propositionalized grounding ([`ground`]) of an
//! [`IlpProblem`]. After training ([`train`]) the memberships are read back
//! as explicit first-order clauses.

pub mod chain;
pub mod cli;
pub mod continuous;
pub mod datalog;
pub mod dnl;
pub mod eval;
pub mod ground;
pub mod logic;
pub mod train;

pub use logic::{parse_problem, IlpProblem};
