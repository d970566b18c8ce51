//! Free-boundary Navier-Stokes-Poisson in Lagrangian mass coordinates.
//!
//! Staggered layout: interfaces `j = 0..=N` carry the mass coordinate `x_j`,
//! radius `r_j` and velocity `u_j`; cells `j = 0..N` carry the density `ρ_j`
//! and the cell mass `Δx_j`. Interface `0` sits at the inner cutoff `ξ` with
//! `u = 0`; interface `N` is the free boundary `a = r_N`.
//!
//! The momentum equation at an interface reads
//!
//! ```text
//! u̇_j = -4π r_j² (σ_j - σ_{j-1}) / m_j - x_j / r_j² - 16π ε r_j u_j (ρ_j^α - ρ_{j-1}^α) / m_j
//! ```
//!
//! with `σ = ρ^γ - ν ρ^α D`, `ν = η + 4ε/3`, the cell divergence
//! `D_j = 4π ρ_j (r_{j+1}² u_{j+1} - r_j² u_j) / Δx_j` and the interface mass
//! `m_j = (Δx_{j-1} + Δx_j) / 2`. Pressure and gravity are explicit, the
//! `ν ρ^α D` part is backward Euler (tridiagonal in `r² u`), radii are
//! advanced with the new velocity and densities follow from the cell volumes,
//! so `r_{j+1}³ - r_j³ = 3Δx_j / (4π ρ_j)` holds after every step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::RunRecord;
use crate::functionals::{FunctionalError, RadialField};
use crate::polytrope::{self, PolytropeError};
use crate::quadrature;
use crate::tridiag::{self, TridiagError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("initial density is not positive in cell {0}")]
    NonPositiveDensity(usize),
    #[error("total mass {0:e} is below the configured floor")]
    MassBelowFloor(f64),
    #[error("cell {cell} inverted at t = {t:e}")]
    CellInversion { cell: usize, t: f64 },
    #[error("non-finite state at t = {0:e}")]
    NonFinite(f64),
    #[error("implicit viscous solve failed: {0}")]
    Tridiag(#[from] TridiagError),
    #[error(transparent)]
    Polytrope(#[from] PolytropeError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

/// Shear `ε`, bulk `η` and density exponent `α` of `ε ρ^α`, `η ρ^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscosityModel {
    pub epsilon: f64,
    pub eta: f64,
    pub alpha: f64,
}

impl ViscosityModel {
    pub fn new(epsilon: f64, eta: f64, alpha: f64) -> Result<Self, SimError> {
        let m = Self { epsilon, eta, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn constant(epsilon: f64, eta: f64) -> Result<Self, SimError> {
        Self::new(epsilon, eta, 0.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.epsilon >= 0.0 && self.eta >= 0.0 && self.alpha >= 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "viscosity coefficients must be non-negative: {self:?}"
            )));
        }
        if !(self.epsilon.max(self.eta) > 0.0) {
            return Err(SimError::InvalidConfig("at least one of epsilon, eta must be positive".into()));
        }
        Ok(())
    }

    /// `η + 4ε/3`.
    pub fn nu(&self) -> f64 {
        self.eta + 4.0 * self.epsilon / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    /// Kick, implicit viscous solve, drift.
    #[default]
    Lie,
    /// Half drift, kick and viscous solve at the midpoint geometry, half drift.
    Strang,
}

/// Per-run switches that travel with the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub cfl: f64,
    pub splitting: Splitting,
    pub pressure: bool,
    pub gravity: bool,
    pub track_dissipation: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { cfl: 0.5, splitting: Splitting::Lie, pressure: true, gravity: true, track_dissipation: true }
    }
}

impl SolverSettings {
    /// Without pressure the outer ghost copies the last cell's viscous stress,
    /// otherwise the normal stress vanishes there.
    fn extrapolated_stress(&self) -> bool {
        !self.pressure
    }
}

/// Lagrangian snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarState {
    pub tau: f64,
    pub x_grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub a: f64,
    pub xi: f64,
    pub gamma: f64,
    pub visc: ViscosityModel,
    pub solver: SolverSettings,
    /// Accumulated viscous dissipation.
    pub dissipation: f64,
    /// Accumulated `∫∫ ρ^{2γ} r⁸ dr dt`.
    pub rho2gamma_r8: f64,
    pub steps: u64,
}

impl StarState {
    pub fn n_cells(&self) -> usize {
        self.rho.len()
    }

    pub fn total_mass(&self) -> f64 {
        *self.x_grid.last().unwrap()
    }

    pub fn cell_mass(&self, j: usize) -> f64 {
        self.x_grid[j + 1] - self.x_grid[j]
    }

    /// Mass attached to interface `j` (half cells at both ends).
    pub fn node_mass(&self, j: usize) -> f64 {
        let n = self.n_cells();
        let left = if j > 0 { self.cell_mass(j - 1) } else { 0.0 };
        let right = if j < n { self.cell_mass(j) } else { 0.0 };
        0.5 * (left + right)
    }

    pub fn cell_volume(&self, j: usize) -> f64 {
        4.0 * PI / 3.0 * (self.r[j + 1].powi(3) - self.r[j].powi(3))
    }

    /// Radius splitting the cell volume in half.
    pub fn cell_center(&self, j: usize) -> f64 {
        (0.5 * (self.r[j].powi(3) + self.r[j + 1].powi(3))).cbrt()
    }

    pub fn pressure(&self, j: usize) -> f64 {
        if self.solver.pressure {
            self.rho[j].powf(self.gamma)
        } else {
            0.0
        }
    }

    pub fn kinetic(&self) -> f64 {
        (0..=self.n_cells()).map(|j| 0.5 * self.node_mass(j) * self.u[j] * self.u[j]).sum()
    }

    /// `Σ Δx_j ρ_j^{γ-1} / (γ - 1)`.
    pub fn internal(&self) -> f64 {
        if !self.solver.pressure {
            return 0.0;
        }
        let g = self.gamma;
        (0..self.n_cells()).map(|j| self.cell_mass(j) * self.rho[j].powf(g - 1.0)).sum::<f64>() / (g - 1.0)
    }

    /// `Σ m_j x_j / r_j`, the magnitude of the gravitational energy.
    pub fn gravitational(&self) -> f64 {
        if !self.solver.gravity {
            return 0.0;
        }
        (1..=self.n_cells()).map(|j| self.node_mass(j) * self.x_grid[j] / self.r[j]).sum()
    }

    pub fn energy(&self) -> f64 {
        self.kinetic() + self.internal() - self.gravitational()
    }

    /// `3(γ - 1) internal - gravitational`.
    pub fn q(&self) -> f64 {
        3.0 * (self.gamma - 1.0) * self.internal() - self.gravitational()
    }

    /// Cell divergence `∂_r u + 2u/r`.
    pub fn divergence(&self, j: usize) -> f64 {
        let v1 = self.r[j + 1] * self.r[j + 1] * self.u[j + 1];
        let v0 = self.r[j] * self.r[j] * self.u[j];
        4.0 * PI * self.rho[j] * (v1 - v0) / self.cell_mass(j)
    }

    /// Viscous normal stress `ν ρ^α D` in cell `j`.
    pub fn viscous_stress(&self, j: usize) -> f64 {
        self.visc.nu() * self.rho[j].powf(self.visc.alpha) * self.divergence(j)
    }

    /// Effective viscous flux `σ = ρ^γ - ν ρ^α D`.
    pub fn sigma(&self, j: usize) -> f64 {
        self.pressure(j) - self.viscous_stress(j)
    }

    /// `ρ^γ` extrapolated linearly from the last two cells to `r = a`, floored at 0.
    pub fn boundary_pressure(&self) -> f64 {
        let n = self.n_cells();
        let (c1, c2) = (self.cell_center(n - 2), self.cell_center(n - 1));
        let (p1, p2) = (self.pressure(n - 2), self.pressure(n - 1));
        (p2 + (p2 - p1) * (self.a - c2) / (c2 - c1)).max(0.0)
    }

    /// Largest relative violation of `r_{j+1}³ - r_j³ = 3Δx_j / (4π ρ_j)`.
    pub fn geometric_consistency_error(&self) -> f64 {
        (0..self.n_cells())
            .map(|j| {
                let lhs = self.r[j + 1].powi(3) - self.r[j].powi(3);
                let rhs = 3.0 * self.cell_mass(j) / (4.0 * PI * self.rho[j]);
                ((lhs - rhs) / rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Explicit accelerations: pressure, gravity and the `ε ∂ρ^α` cross term.
    pub fn explicit_acceleration(&self) -> Vec<f64> {
        let n = self.n_cells();
        let mut acc = vec![0.0; n + 1];
        let eps = self.visc.epsilon;
        let alpha = self.visc.alpha;
        let cross = eps > 0.0 && alpha > 0.0;
        for j in 1..=n {
            let m = self.node_mass(j);
            let r = self.r[j];
            // ghost stress at the boundary is zero (pressure and viscous parts cancel)
            let p_hi = if j < n { self.pressure(j) } else { 0.0 };
            let mut a = -4.0 * PI * r * r * (p_hi - self.pressure(j - 1)) / m;
            if self.solver.gravity {
                a -= self.x_grid[j] / (r * r);
            }
            if cross {
                let hi = if j < n { self.rho[j].powf(alpha) } else { 0.0 };
                a -= 16.0 * PI * eps * r * self.u[j] * (hi - self.rho[j - 1].powf(alpha)) / m;
            }
            acc[j] = a;
        }
        acc
    }

    /// Dissipation rate of the current velocity field.
    pub fn dissipation_rate(&self) -> f64 {
        let v = &self.visc;
        let shear = v.epsilon > 0.0 && v.alpha > 0.0;
        (0..self.n_cells())
            .map(|j| {
                let vol = self.cell_volume(j);
                let ra = self.rho[j].powf(v.alpha);
                let d = self.divergence(j);
                if shear {
                    let dr = self.r[j + 1] - self.r[j];
                    let ur = |k: usize| if self.r[k] > 0.0 { self.u[k] / self.r[k] } else { self.u[k + 1] / self.r[k + 1] };
                    let s = (self.u[j + 1] - self.u[j]) / dr - 0.5 * (ur(j) + ur(j + 1));
                    vol * ra * (v.eta * d * d + 4.0 / 3.0 * v.epsilon * s * s)
                } else {
                    vol * v.nu() * ra * d * d
                }
            })
            .sum()
    }

    /// `(2K + Q - 3 Σ V τ + 4π ξ³ σ₀ + cross)`: the exact second derivative of
    /// `H = ½ Σ m r²` under the semi-discrete equations.
    pub fn virial_second_derivative(&self) -> f64 {
        let n = self.n_cells();
        let tau_work: f64 = (0..n).map(|j| self.cell_volume(j) * self.viscous_stress(j)).sum();
        let cutoff = 4.0 * PI * self.r[0].powi(3) * self.sigma(0);
        let mut cross = 0.0;
        let v = &self.visc;
        if v.epsilon > 0.0 && v.alpha > 0.0 {
            for j in 1..=n {
                let hi = if j < n { self.rho[j].powf(v.alpha) } else { 0.0 };
                cross -= 16.0 * PI * v.epsilon * self.r[j].powi(2) * self.u[j] * (hi - self.rho[j - 1].powf(v.alpha));
            }
        }
        2.0 * self.kinetic() + self.q() - 3.0 * tau_work + cutoff + cross
    }

    /// Minimum density over cells whose centre mass lies in `[0, 0.9 M]`.
    pub fn min_interior_rho(&self) -> f64 {
        let m = self.total_mass();
        (0..self.n_cells())
            .filter(|&j| 0.5 * (self.x_grid[j] + self.x_grid[j + 1]) <= 0.9 * m)
            .map(|j| self.rho[j])
            .fold(f64::INFINITY, f64::min)
    }

    /// Node radii with cell densities, closed by `ρ(a) = 0`, as a field.
    pub fn to_radial_field(&self) -> Result<RadialField, FunctionalError> {
        let n = self.n_cells();
        let mut r = vec![self.r[0]];
        let mut rho = vec![self.rho[0]];
        let mut u = vec![self.u[0]];
        for j in 0..n {
            r.push(self.cell_center(j));
            rho.push(self.rho[j]);
            u.push(0.5 * (self.u[j] + self.u[j + 1]));
        }
        r.push(self.a);
        rho.push(0.0);
        u.push(self.u[n]);
        RadialField::new(r, rho, self.gamma)?.with_velocity(u)
    }

    fn recompute_density(&mut self) -> Result<(), SimError> {
        for j in 0..self.n_cells() {
            let dv = self.r[j + 1].powi(3) - self.r[j].powi(3);
            if !(dv > 0.0) {
                return Err(SimError::CellInversion { cell: j, t: self.tau });
            }
            self.rho[j] = 3.0 * self.cell_mass(j) / (4.0 * PI * dv);
        }
        self.a = *self.r.last().unwrap();
        Ok(())
    }

    fn drift(&mut self, dt: f64) -> Result<(), SimError> {
        for j in 1..self.r.len() {
            self.r[j] += dt * self.u[j];
        }
        self.recompute_density()
    }

    /// Backward-Euler solve of `u̇ = 4π r² ∂_x(ν ρ^α D) / m` for the new velocity.
    fn implicit_viscous(&mut self, dt: f64) -> Result<(), SimError> {
        let n = self.n_cells();
        let nu = self.visc.nu();
        let k: Vec<f64> = (0..n)
            .map(|j| 4.0 * PI * nu * self.rho[j].powf(1.0 + self.visc.alpha) / self.cell_mass(j))
            .collect();
        let extrap = self.solver.extrapolated_stress();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for row in 0..n {
            let j = row + 1;
            let m = self.node_mass(j);
            let r2 = self.r[j] * self.r[j];
            diag[row] = m / (r2 * r2);
            rhs[row] = m * self.u[j] / r2;
            // a copied ghost stress cancels the last cell's stress in the boundary row
            let boundary_cancels = j == n && extrap;
            if !boundary_cancels {
                diag[row] += 4.0 * PI * dt * k[j - 1];
                if j > 1 {
                    lower[row] = -4.0 * PI * dt * k[j - 1];
                }
            }
            if j < n {
                diag[row] += 4.0 * PI * dt * k[j];
                upper[row] = -4.0 * PI * dt * k[j];
            }
        }
        let v = tridiag::solve(&lower, &diag, &upper, &rhs)?;
        for row in 0..n {
            let j = row + 1;
            self.u[j] = v[row] / (self.r[j] * self.r[j]);
        }
        self.u[0] = 0.0;
        Ok(())
    }

    fn kick(&mut self, dt: f64) {
        let acc = self.explicit_acceleration();
        for (u, a) in self.u.iter_mut().zip(&acc).skip(1) {
            *u += dt * a;
        }
    }

    /// Advances by `dt` in place.
    pub fn advance(&mut self, dt: f64) -> Result<(), SimError> {
        match self.solver.splitting {
            Splitting::Lie => {
                self.kick(dt);
                self.implicit_viscous(dt)?;
                if self.solver.track_dissipation {
                    self.dissipation += dt * self.dissipation_rate();
                }
                self.drift(dt)?;
            }
            Splitting::Strang => {
                self.drift(0.5 * dt)?;
                self.kick(dt);
                self.implicit_viscous(dt)?;
                if self.solver.track_dissipation {
                    self.dissipation += dt * self.dissipation_rate();
                }
                self.drift(0.5 * dt)?;
            }
        }
        self.tau += dt;
        self.steps += 1;
        self.rho2gamma_r8 += dt * self.rho2gamma_r8_rate();
        if !(self.a.is_finite() && self.u.iter().all(|v| v.is_finite())) {
            return Err(SimError::NonFinite(self.tau));
        }
        Ok(())
    }

    fn rho2gamma_r8_rate(&self) -> f64 {
        (0..self.n_cells())
            .map(|j| self.rho[j].powf(2.0 * self.gamma) * self.cell_center(j).powi(8) * (self.r[j + 1] - self.r[j]))
            .sum()
    }
}

/// One step of size `dt`; the input state is left untouched.
pub fn step(state: &StarState, dt: f64) -> Result<StarState, SimError> {
    let mut next = state.clone();
    next.advance(dt)?;
    Ok(apply_boundary(next))
}

/// Enforces `u(0) = 0`, `r_0 = ξ` and `a = r_N`. The outer stress closure is
/// built into the momentum update; see [`StarState::boundary_pressure`] for the
/// pressure it balances.
pub fn apply_boundary(mut state: StarState) -> StarState {
    state.u[0] = 0.0;
    state.r[0] = state.xi;
    state.a = *state.r.last().unwrap();
    state
}

/// The individual time-step limits; `dt` is `cfl` times their minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtLimits {
    pub acoustic: f64,
    pub acceleration: f64,
    pub velocity: f64,
    pub dt: f64,
}

pub fn dt_limits(state: &StarState) -> DtLimits {
    let n = state.n_cells();
    let dr: Vec<f64> = (0..n).map(|j| state.r[j + 1] - state.r[j]).collect();
    let mut acoustic = f64::INFINITY;
    if state.solver.pressure {
        for j in 0..n {
            let cs = (state.gamma * state.rho[j].powf(state.gamma - 1.0)).sqrt();
            if cs > 0.0 {
                acoustic = acoustic.min(dr[j] / cs);
            }
        }
    }
    let acc = state.explicit_acceleration();
    let mut acceleration = f64::INFINITY;
    for j in 1..=n {
        let width = if j < n { dr[j - 1].min(dr[j]) } else { dr[n - 1] };
        if acc[j] != 0.0 {
            acceleration = acceleration.min((width / acc[j].abs()).sqrt());
        }
    }
    let mut velocity = f64::INFINITY;
    for j in 0..n {
        let du = (state.u[j + 1] - state.u[j]).abs();
        if du > 0.0 {
            velocity = velocity.min(dr[j] / du);
        }
    }
    let dt = state.solver.cfl * acoustic.min(acceleration).min(velocity);
    DtLimits { acoustic, acceleration, velocity, dt }
}

pub fn stable_dt(state: &StarState) -> f64 {
    dt_limits(state).dt
}

/// How the inner cutoff radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffSpec {
    /// Smallest convenient `ξ` whose excised mass is below `excised_fraction · M`.
    Auto { excised_fraction: f64 },
    Radius(f64),
}

impl Default for CutoffSpec {
    fn default() -> Self {
        CutoffSpec::Auto { excised_fraction: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialData {
    /// `factor · λ³ ρ_μ(λ r)`; `λ = factor = 1` is the steady state itself.
    LaneEmden { mu: f64, lambda: f64, density_factor: f64 },
    UniformBall { rho0: f64, radius: f64 },
    /// Tabulated density, positive before the last point and zero at it.
    Table { r: Vec<f64>, rho: Vec<f64> },
}

impl InitialData {
    pub fn lane_emden(mu: f64) -> Self {
        InitialData::LaneEmden { mu, lambda: 1.0, density_factor: 1.0 }
    }

    pub fn scaled_lane_emden(mu: f64, lambda: f64) -> Self {
        InitialData::LaneEmden { mu, lambda, density_factor: 1.0 }
    }

    /// Sampled density on `[0, a₀]`.
    pub fn sample(&self, gamma: f64, tol: f64) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        match self {
            InitialData::LaneEmden { mu, lambda, density_factor } => {
                if !(*lambda > 0.0 && *density_factor > 0.0) {
                    return Err(SimError::InvalidConfig("lambda and density factor must be positive".into()));
                }
                let p = polytrope::solve_profile(gamma, *mu, tol)?;
                p.radius_or_err()?;
                let l3 = lambda.powi(3) * density_factor;
                Ok((
                    p.r_samples.iter().map(|r| r / lambda).collect(),
                    p.rho_samples.iter().map(|d| d * l3).collect(),
                ))
            }
            InitialData::UniformBall { rho0, radius } => {
                if !(*rho0 > 0.0 && *radius > 0.0) {
                    return Err(SimError::InvalidConfig("uniform ball needs positive density and radius".into()));
                }
                let n = 2001;
                let r: Vec<f64> = (0..n).map(|i| radius * i as f64 / (n - 1) as f64).collect();
                Ok((r, vec![*rho0; n]))
            }
            InitialData::Table { r, rho } => {
                if r.len() != rho.len() || r.len() < 4 {
                    return Err(SimError::InvalidConfig("density table needs ≥ 4 matching rows".into()));
                }
                if r.windows(2).any(|w| !(w[1] > w[0])) || r[0] < 0.0 {
                    return Err(SimError::InvalidConfig("density table radii must increase".into()));
                }
                Ok((r.clone(), rho.clone()))
            }
        }
    }

    /// The sampled initial data as a [`RadialField`] with the given velocity.
    pub fn field(&self, gamma: f64, tol: f64, velocity: &VelocitySpec) -> Result<RadialField, SimError> {
        let (r, rho) = self.sample(gamma, tol)?;
        let u = r.iter().map(|&r| velocity.at(r)).collect();
        Ok(RadialField::new(r, rho, gamma)?.with_velocity(u)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum VelocitySpec {
    Zero,
    Linear { c: f64 },
    Table { r: Vec<f64>, u: Vec<f64> },
}

impl VelocitySpec {
    pub fn at(&self, r: f64) -> f64 {
        match self {
            VelocitySpec::Zero => 0.0,
            VelocitySpec::Linear { c } => c * r,
            VelocitySpec::Table { r: rs, u } => quadrature::interp_linear(rs, u, r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub gamma: f64,
    pub visc: ViscosityModel,
    pub n_cells: usize,
    pub xi: CutoffSpec,
    pub cfl: f64,
    pub t_end: f64,
    pub initial_data: InitialData,
    pub velocity: VelocitySpec,
    /// Record every `output_stride` steps (0 disables step-based output).
    pub output_stride: usize,
    /// Additionally record at multiples of `output_dt`, landing on them exactly.
    pub output_dt: Option<f64>,
    pub splitting: Splitting,
    pub pressure: bool,
    pub gravity: bool,
    pub track_dissipation: bool,
    /// Steady-state solver tolerance for Lane-Emden initial data.
    pub profile_tol: f64,
    pub mass_floor: f64,
    /// Upper bound on a single step.
    pub dt_max: Option<f64>,
    pub max_steps: u64,
}

impl SimConfig {
    pub fn new(gamma: f64, visc: ViscosityModel, n_cells: usize, t_end: f64, initial_data: InitialData) -> Self {
        Self {
            gamma,
            visc,
            n_cells,
            xi: CutoffSpec::default(),
            cfl: 0.5,
            t_end,
            initial_data,
            velocity: VelocitySpec::Zero,
            output_stride: 0,
            output_dt: Some((t_end / 200.0).max(f64::MIN_POSITIVE)),
            splitting: Splitting::Lie,
            pressure: true,
            gravity: true,
            track_dissipation: true,
            profile_tol: 1e-10,
            mass_floor: 1e-12,
            dt_max: None,
            max_steps: 50_000_000,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.gamma > 1.0) {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        self.visc.validate()?;
        if self.visc.alpha > self.gamma {
            return bad(format!("alpha = {} exceeds gamma = {}", self.visc.alpha, self.gamma));
        }
        if self.n_cells < 16 {
            return bad(format!("N must be at least 16, got {}", self.n_cells));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad(format!("cfl must lie in (0, 1), got {}", self.cfl));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be finite and non-negative, got {}", self.t_end));
        }
        if let Some(dt) = self.output_dt {
            if !(dt > 0.0) {
                return bad("output_dt must be positive".into());
            }
        }
        match self.xi {
            CutoffSpec::Auto { excised_fraction } if !(excised_fraction > 0.0 && excised_fraction < 1.0) => {
                return bad("excised fraction must lie in (0, 1)".into())
            }
            CutoffSpec::Radius(x) if !(x >= 0.0) => return bad("cutoff radius must be non-negative".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            cfl: self.cfl,
            splitting: self.splitting,
            pressure: self.pressure,
            gravity: self.gravity,
            track_dissipation: self.track_dissipation,
        }
    }
}

/// Builds the initial Lagrangian state.
///
/// The density is sampled, the core `r < ξ` is removed and the remaining
/// density rescaled by `M / (M - M_ξ)` so the total mass is unchanged. The
/// mass grid is uniform; interface radii invert the cumulative mass of the
/// rescaled density and cell densities follow from the cell volumes.
pub fn init(config: &SimConfig) -> Result<StarState, SimError> {
    config.validate()?;
    let gamma = config.gamma;
    let (rs, rho_s) = config.initial_data.sample(gamma, config.profile_tol)?;
    let n_s = rs.len();
    if let Some(i) = rho_s[..n_s - 1].iter().position(|&p| !(p > 0.0)) {
        return Err(SimError::NonPositiveDensity(i));
    }
    let dm: Vec<f64> = rs.iter().zip(&rho_s).map(|(r, p)| 4.0 * PI * p * r * r).collect();
    let cum = quadrature::cumulative(&rs, &dm);
    let total = *cum.last().unwrap();
    if !(total > config.mass_floor) {
        return Err(SimError::MassBelowFloor(total));
    }
    if cum.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(SimError::NonPositiveDensity(0));
    }
    let a0 = rs[n_s - 1];
    let xi = match config.xi {
        CutoffSpec::Radius(x) => x,
        CutoffSpec::Auto { excised_fraction } => {
            // aim at half the allowed excised mass using the central density,
            // then back off until the tabulated mass agrees
            let mut x = (0.5 * excised_fraction * total * 3.0 / (4.0 * PI * rho_s[0])).cbrt();
            while quadrature::interp_linear(&rs, &cum, x) >= excised_fraction * total {
                x *= 0.5;
            }
            x
        }
    };
    if !(xi < a0) {
        return Err(SimError::InvalidConfig(format!("cutoff {xi} is outside the support {a0}")));
    }
    let m_xi = if xi > 0.0 { quadrature::interp_linear(&rs, &cum, xi) } else { 0.0 };

    let n = config.n_cells;
    let x_grid: Vec<f64> = (0..=n).map(|j| total * j as f64 / n as f64).collect();
    let mut r = vec![0.0; n + 1];
    r[0] = xi;
    for j in 1..n {
        let target = m_xi + x_grid[j] * (total - m_xi) / total;
        r[j] = quadrature::invert_monotone(&rs, &cum, target);
    }
    r[n] = a0;
    let u: Vec<f64> = r.iter().enumerate().map(|(j, &r)| if j == 0 { 0.0 } else { config.velocity.at(r) }).collect();
    let mut state = StarState {
        tau: 0.0,
        x_grid,
        rho: vec![0.0; n],
        u,
        r,
        a: a0,
        xi,
        gamma,
        visc: config.visc,
        solver: config.solver_settings(),
        dissipation: 0.0,
        rho2gamma_r8: 0.0,
        steps: 0,
    };
    state.recompute_density().map_err(|e| match e {
        SimError::CellInversion { cell, .. } => SimError::NonPositiveDensity(cell),
        other => other,
    })?;
    Ok(state)
}

/// Runs to `config.t_end`; see [`run_with_state`].
pub fn run(config: &SimConfig) -> Result<RunRecord, SimError> {
    Ok(run_with_state(config)?.0)
}

/// Runs to `t_end`, recording diagnostics at the configured cadence and at
/// `t_end`. A failing step ends the run early; the partial record carries the
/// error as an event and `completed = false`.
pub fn run_with_state(config: &SimConfig) -> Result<(RunRecord, StarState), SimError> {
    let mut state = init(config)?;
    let mut record = RunRecord::start(config, &state);
    let mut next_output = config.output_dt;
    let mut since_output = 0usize;
    while state.tau < config.t_end {
        if state.steps >= config.max_steps {
            record.fail(state.tau, format!("step limit {} reached", config.max_steps));
            return Ok((record, state));
        }
        let mut target = config.t_end;
        let mut dt = stable_dt(&state).min(config.dt_max.unwrap_or(f64::INFINITY));
        if let Some(t_out) = next_output {
            target = target.min(t_out);
        }
        let landing = state.tau + dt >= target * (1.0 - 1e-12);
        if landing {
            dt = target - state.tau;
        }
        if let Err(e) = state.advance(dt) {
            record.fail(state.tau, e.to_string());
            return Ok((record, state));
        }
        state = apply_boundary(state);
        since_output += 1;
        let mut output_hit = false;
        if landing {
            state.tau = target;
            if let (Some(t_out), Some(every)) = (next_output, config.output_dt) {
                if target >= t_out {
                    output_hit = true;
                    next_output = Some(((t_out / every).round() + 1.0) * every);
                }
            }
        }
        let stride_hit = config.output_stride > 0 && since_output >= config.output_stride;
        if output_hit || stride_hit || state.tau >= config.t_end {
            record.push(&state);
            since_output = 0;
        }
    }
    record.finish(&state);
    Ok((record, state))
}
