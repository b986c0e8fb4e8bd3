//! Conservative physics-informed neural networks for kinetic equations.
//!
//! Trains tanh multilayer perceptrons against PDE residual losses for the
//! kinetic Fokker--Planck equation and the space-homogeneous Boltzmann
//! equation, while enforcing the physical conservation laws (mass, momentum,
//! kinetic energy) as equality constraints of the optimization problem.
//! Constraints are handled by a quadratic penalty, by Lagrange multipliers
//! with dual ascent, or by the augmented Lagrangian combining both.
//!
//! The crate is organized around:
//! - [`diffnet`]: a minimal differentiable-network engine. Tanh MLPs with
//!   exact input derivatives up to second order ("jets") and exact
//!   reverse-mode gradients of scalar losses with respect to parameters.
//! - [`kinetic`]: the physics. Fokker--Planck residual, initial/boundary
//!   data, the Boltzmann collision operator by quadrature, and the exact
//!   BKW solution used as ground truth.
//! - [`collocation`]: collocation sampling and Gauss--Legendre grids.
//! - [`trainer`]: discretized losses, conservation constraints, the four
//!   training modes, Adam, dual ascent, and the training loop.
//! - [`reference`]: a finite-difference oracle for the Fokker--Planck tests
//!   and error/conservation diagnostics.
//! - [`cli`]: experiment orchestration behind the `kinetic-pinn` binary.

pub mod cli;
pub mod collocation;
pub mod config;
pub mod diffnet;
pub mod kinetic;
pub mod reference;
pub mod report;
pub mod trainer;
