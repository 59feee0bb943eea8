//! Robust multi-label active learning.
//!
//! A kernel classifier is fit per candidate with correntropy-weighted losses
//! (half-quadratic reweighting around an ADMM solve); candidates are scored
//! by uncertainty, representativeness among the pool and redundancy with the
//! labeled set, and the best one is queried. A benchmark harness runs the
//! strategies against baselines and reports learning curves and paired
//! t-test Win/Tie/Loss tables.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod harness;
pub mod kernels;
pub mod seeding;
pub mod selection;
pub mod solver;

pub use error::{Error, Result};
