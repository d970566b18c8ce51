//! Numerical laboratory for radially symmetric viscous gaseous stars.
//!
//! The crate is organised around four layers:
//!
//! * [`polytrope`]: Lane-Emden steady states (`K = 1`, `G = 1`), their vacuum
//!   radius, scaling laws and the critical mass at `gamma = 4/3`.
//! * [`functionals`]: mass, energy, `Q`, `S_mu`, the best-constant ratio and the
//!   admissibility gates on radial density/velocity fields.
//! * [`simulator`]: a staggered Lagrangian (mass coordinate) solver for the
//!   free-boundary Navier-Stokes-Poisson system with a semi-implicit viscous step.
//! * [`diagnostics`]: virial functionals, energy residuals and expansion-rate fits
//!   on run records.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod functionals;
pub mod ode;
pub mod polytrope;
pub mod quadrature;
pub mod simulator;
pub mod tridiag;

pub use functionals::{EnergyBreakdown, RadialField};
pub use polytrope::PolytropeProfile;
pub use simulator::{SimConfig, StarState, ViscosityModel};

/// `gamma` values closer than this to 4/3 are treated as the mass-critical case.
pub const CRITICAL_GAMMA_TOL: f64 = 1e-12;

/// Returns true when `gamma` is (numerically) the mass-critical exponent 4/3.
pub fn is_mass_critical(gamma: f64) -> bool {
    (gamma - 4.0 / 3.0).abs() < CRITICAL_GAMMA_TOL
}
