//! Analysis toolkit for linear time-varying (LTV) control systems.
//!
//! The crate computes state-transition matrices, controllability and
//! observability Gramians, adjoint/dual constructions and their Gramian
//! identities, certifies or refutes growth/Gramian/stability envelopes on
//! sample grids, and synthesizes observer gains through a dual-system
//! Riccati pipeline. A corpus of built-in benchmark scenarios with
//! closed-form oracles exercises every stage.
//!
//! Start with the runnable programs in `examples/` (one per capability) or
//! the `ltvkit` command-line front end.


pub mod domain;
pub mod duality;
pub mod envelope;


pub mod error;
pub mod expr;
pub mod gramian;
pub mod matfun;
pub mod ode;
pub mod propagator;
pub mod quad;
pub mod riccati;
pub mod scenario;



pub mod system;

pub use domain::TimeDomain;
pub use error::{Error, Result};
pub use expr::{Formula2, ScalarExpr};
pub use matfun::MatrixFunction;
pub use system::LtvSystem;
