//! Inverse optimal control for linear-quadratic regulators.
//!
//! Closed-loop dynamics `F` are identified from noisy trajectories by EM on
//! a linear Gaussian state-space model ([`em`]); the plant and cost that
//! produced them are then disentangled from `F` ([`ioc`]).

pub mod em;
pub mod error;
pub mod exec;
pub mod ioc;
pub mod lqr;
pub mod matops;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Exec;
pub use matops::{Matrix, SpdMatrix};
