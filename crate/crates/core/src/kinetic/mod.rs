//! The physics: Fokker--Planck residual and data, the Boltzmann collision
//! operator by quadrature, equilibria, and the BKW exact solution.

mod boltzmann;
mod fokker_planck;
pub mod oracle;

pub use boltzmann::{
    bkw, bkw_dt, boltzmann_f0, boltzmann_residual, collision_q, BoltzmannConfig, CollisionQuad,
    MAXWELL_KERNEL_2D,
};
pub use fokker_planck::{
    fp_boundary_pair, fp_initial, fp_residual, maxwellian, FpConfig, FpInitial,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
