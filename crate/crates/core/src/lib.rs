//! Solvers and Monte Carlo verification tools for time-inconsistent stochastic
//! control problems on a scalar state.
//!
//! The crate is organised bottom-up:
//!
//! * [`sde`] simulates controlled diffusions under feedback laws, including the
//!   spike-perturbed laws used to test equilibrium.
//! * [`reward`] estimates reward functionals and the auxiliary expectations
//!   `f` and `g` by Monte Carlo.
//! * [`equilibrium`] runs spike-perturbation tests on candidate laws.
//! * [`ode`] is a fixed-step RK4 terminal-value integrator.
//! * [`mean_variance`], [`discounting`], [`lq`] and [`cir`] hold the
//!   closed-form and ODE-based solutions of the worked examples.
//! * [`grid`] is the generic finite-difference extended HJB solver.

pub mod cir;
pub mod discounting;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod lq;
pub mod mean_variance;
pub mod ode;
pub mod quad;
pub mod reward;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
