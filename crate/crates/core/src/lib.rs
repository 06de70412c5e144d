//! Spectral-Galerkin simulation and long-time analysis of dissipative
//! hyperbolic PDEs: damped waves, von Karman and Kirchhoff-Boussinesq
//! plates, and Kirchhoff wave models with nonlocal damping.
//!
//! The crate is organised around a Dirichlet sine eigenbasis on intervals
//! and rectangles ([`spectral`]), model definitions in modal coordinates
//! ([`models`]), an energy-auditing implicit midpoint integrator
//! ([`integrator`]), stationary-state solvers ([`equilibria`]),
//! convergence-to-equilibrium machinery ([`longtime`]), trajectory-pair
//! quasi-stability fits ([`quasistab`]) and attractor sampling with
//! box-counting dimension estimates ([`attractor`]).
//!
//! All nonlinear forces are realised as discrete gradients of the
//! quadrature-evaluated potentials, so the semi-discrete energy balance
//! holds to machine precision and audit residuals measure only the time
//! discretisation.

pub mod attractor;
pub mod equilibria;
pub mod error;
pub mod integrator;
pub mod longtime;
pub mod models;
pub mod quasistab;
pub mod spectral;

pub use error::{Error, Result};
