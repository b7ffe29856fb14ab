//! Stochastic cell transmission models on general traffic networks, and
//! estimation of acceptable designs through sequential Monte Carlo, Gaussian
//! process regression and active learning.

pub mod active;
pub mod cells;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod gpr;
pub mod lp;
pub mod network;
pub mod parallel;
pub mod quadrature;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
