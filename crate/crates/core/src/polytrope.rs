//! Lane-Emden steady states with `K = 1` and unit gravitational constant.
//!
//! The hydrostatic balance `(ρ^γ)' = -ρ m / r²`, `m' = 4π ρ r²` is integrated
//! in the enthalpy variable `h = ρ^(γ-1)`, for which `h' = -((γ-1)/γ) m / r²`.
//! `h` vanishes linearly at the vacuum radius for every `γ`, which keeps the
//! zero crossing well conditioned.
//! The removable singularity at the centre is bridged with the power series
//! of the solution, and the internal and gravitational energy integrals are
//! carried along as extra ODE components.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{self, Dopri5Options, OdeError, Tolerances};
use crate::quadrature;

#[derive(Debug, Error)]
pub enum PolytropeError {
    #[error("gamma must lie in (1, 2), got {0}")]
    InvalidGamma(f64),
    #[error("central density must be positive, got {0}")]
    InvalidCentralDensity(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("scaling factor must be positive, got {0}")]
    InvalidScale(f64),
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("series start failed: r0 = {0:e}")]
    StartFailed(f64),
    #[error("tolerance not achieved: sampled mass differs from integrated mass by {0:e} (relative)")]
    ToleranceNotAchieved(f64),
    #[error("profile has infinite support (integrated to r_max = {0:e})")]
    InfiniteSupport(f64),
    #[error("only {0} samples in the fit window; need at least {1}")]
    InsufficientSamples(usize, usize),
    #[error("profile table: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs of the outward integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Where to give up looking for a vacuum radius.
    pub r_max: f64,
    /// Number of stored samples (including `r = 0` and `r = R`).
    pub n_samples: usize,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { r_max: 1e4, n_samples: 4001, max_steps: 2_000_000 }
    }
}

/// A sampled Lane-Emden steady state `ρ_μ(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytropeProfile {
    pub gamma: f64,
    /// Central density.
    pub mu: f64,
    pub r_samples: Vec<f64>,
    pub rho_samples: Vec<f64>,
    /// Vacuum radius; `None` when no zero was found before `r_max`.
    pub radius: Option<f64>,
    /// Outermost sampled radius (`R` or `r_max`).
    pub r_outer: f64,
    /// `4π ∫ ρ r² dr` up to `r_outer`.
    pub mass: f64,
    /// `4π ∫ ρ^γ r² dr`.
    pub pressure_integral: f64,
    /// `4π ∫ 4π ρ r (∫ ρ s² ds) dr`, the magnitude of the gravitational energy.
    pub gravitational: f64,
    /// `pressure_integral / (γ - 1) - gravitational`.
    pub energy: f64,
    /// Relative agreement between the stored-sample quadrature of the mass and `mass`.
    pub quadrature_tol: f64,
}

impl PolytropeProfile {
    pub fn has_finite_support(&self) -> bool {
        self.radius.is_some()
    }

    pub fn radius_or_err(&self) -> Result<f64, PolytropeError> {
        self.radius.ok_or(PolytropeError::InfiniteSupport(self.r_outer))
    }

    /// `Φ_μ(R_μ) = -M_μ / R_μ`, the potential at the vacuum boundary.
    pub fn boundary_potential(&self) -> Result<f64, PolytropeError> {
        Ok(-self.mass / self.radius_or_err()?)
    }

    /// Linear interpolation of the stored samples; zero beyond the support.
    pub fn density_at(&self, r: f64) -> f64 {
        if r > self.r_outer {
            return 0.0;
        }
        quadrature::interp_linear(&self.r_samples, &self.rho_samples, r).max(0.0)
    }

    /// Writes the columnar text form: `#`-prefixed header lines followed by `r rho` rows.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# lane-emden profile")?;
        writeln!(out, "# gamma = {:e}", self.gamma)?;
        writeln!(out, "# mu = {:e}", self.mu)?;
        match self.radius {
            Some(r) => writeln!(out, "# R = {r:e}")?,
            None => writeln!(out, "# R = inf")?,
        }
        writeln!(out, "# r_outer = {:e}", self.r_outer)?;
        writeln!(out, "# M = {:e}", self.mass)?;
        writeln!(out, "# E = {:e}", self.energy)?;
        writeln!(out, "# pressure_integral = {:e}", self.pressure_integral)?;
        writeln!(out, "# gravitational = {:e}", self.gravitational)?;
        writeln!(out, "# quadrature_tol = {:e}", self.quadrature_tol)?;
        writeln!(out, "# columns: r rho")?;
        for (r, rho) in self.r_samples.iter().zip(&self.rho_samples) {
            writeln!(out, "{r:e} {rho:e}")?;
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(input: R) -> Result<Self, PolytropeError> {
        let mut header = std::collections::HashMap::new();
        let mut r_samples = Vec::new();
        let mut rho_samples = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64, PolytropeError> {
                s.ok_or_else(|| PolytropeError::Format(format!("line {}: missing column", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| PolytropeError::Format(format!("line {}: {e}", lineno + 1)))
            };
            r_samples.push(parse(cols.next())?);
            rho_samples.push(parse(cols.next())?);
        }
        let get = |k: &str| -> Result<f64, PolytropeError> {
            let v = header
                .get(k)
                .ok_or_else(|| PolytropeError::Format(format!("missing header `{k}`")))?;
            v.parse::<f64>().map_err(|e| PolytropeError::Format(format!("header `{k}`: {e}")))
        };
        let radius = match header.get("R").map(String::as_str) {
            Some("inf") => None,
            Some(_) => Some(get("R")?),
            None => return Err(PolytropeError::Format("missing header `R`".into())),
        };
        Ok(Self {
            gamma: get("gamma")?,
            mu: get("mu")?,
            r_samples,
            rho_samples,
            radius,
            r_outer: get("r_outer")?,
            mass: get("M")?,
            pressure_integral: get("pressure_integral")?,
            gravitational: get("gravitational")?,
            energy: get("E")?,
            quadrature_tol: get("quadrature_tol")?,
        })
    }
}

/// Length scale of the Lane-Emden variable: `r = α ξ`.
fn length_scale(gamma: f64, mu: f64) -> f64 {
    let n = 1.0 / (gamma - 1.0);
    ((n + 1.0) * mu.powf((1.0 - n) / n) / (4.0 * PI)).sqrt()
}

/// `(M, ∫4πρ^γ r², W)` by quadrature on samples.
pub(crate) fn sample_integrals(r: &[f64], rho: &[f64], gamma: f64) -> (f64, f64, f64) {
    let dm: Vec<f64> = r.iter().zip(rho).map(|(&r, &p)| 4.0 * PI * p * r * r).collect();
    let enclosed = quadrature::cumulative(r, &dm);
    let p: Vec<f64> = r.iter().zip(rho).map(|(&r, &p)| 4.0 * PI * p.powf(gamma) * r * r).collect();
    let w: Vec<f64> = r
        .iter()
        .zip(rho)
        .zip(&enclosed)
        .map(|((&r, &p), &m)| 4.0 * PI * p * r * m)
        .collect();
    (*enclosed.last().unwrap(), quadrature::integrate(r, &p), quadrature::integrate(r, &w))
}

fn check_inputs(gamma: f64, mu: f64, tol: f64) -> Result<(), PolytropeError> {
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(PolytropeError::InvalidGamma(gamma));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(PolytropeError::InvalidCentralDensity(mu));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(PolytropeError::InvalidTolerance(tol));
    }
    Ok(())
}

/// Solves for the steady state with central density `mu` using default options.
pub fn solve_profile(gamma: f64, mu: f64, tol: f64) -> Result<PolytropeProfile, PolytropeError> {
    solve_profile_with(gamma, mu, tol, &SolverOptions::default())
}

pub fn solve_profile_with(
    gamma: f64,
    mu: f64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<PolytropeProfile, PolytropeError> {
    check_inputs(gamma, mu, tol)?;
    let n = 1.0 / (gamma - 1.0);
    let alpha = length_scale(gamma, mu);
    let h_c = mu.powf(gamma - 1.0);

    // θ(ξ) = 1 - ξ²/6 + nξ⁴/120 - n(8n-5)ξ⁶/15120 + ...; keep the dropped ξ⁶ term
    // two orders below tol.
    let c6 = (n * (8.0 * n - 5.0)).abs() / 15120.0;
    let xi0 = (1e-2 * tol / c6.max(1e-300)).powf(1.0 / 6.0).min(0.05);
    let r0 = alpha * xi0;
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(PolytropeError::StartFailed(r0));
    }
    let m_scale = 4.0 * PI * alpha.powi(3) * mu;
    let u_scale = 4.0 * PI * alpha.powi(3) * mu.powf(gamma);
    let w_scale = m_scale * m_scale / alpha;
    let theta0 = 1.0 - xi0 * xi0 / 6.0 + n * xi0.powi(4) / 120.0;
    let y0 = [
        h_c * theta0,
        m_scale * (xi0.powi(3) / 3.0 - n * xi0.powi(5) / 30.0),
        u_scale * (xi0.powi(3) / 3.0 - (n + 1.0) * xi0.powi(5) / 30.0),
        w_scale * xi0.powi(5) / 15.0,
    ];

    let kappa = (gamma - 1.0) / gamma;
    let rhs = move |r: f64, y: &[f64; 4]| {
        let h = y[0].max(0.0);
        let rho = h.powf(n);
        [
            -kappa * y[1] / (r * r),
            4.0 * PI * r * r * rho,
            4.0 * PI * r * r * rho * h,
            4.0 * PI * rho * r * y[1],
        ]
    };
    let options = Dopri5Options {
        tol: Tolerances { rtol: tol, atol: [tol * h_c, tol * m_scale, tol * u_scale, tol * w_scale] },
        h_init: r0,
        h_max: f64::INFINITY,
        max_steps: opts.max_steps,
    };
    let traj = ode::integrate(rhs, r0, y0, opts.r_max, &options, Some(|_r: f64, y: &[f64; 4]| y[0]))?;

    let r_outer = traj.t_final;
    let radius = traj.event.then_some(r_outer);
    let n_samples = opts.n_samples.max(8);
    let r_samples: Vec<f64> = (0..n_samples)
        .map(|i| {
            let s = i as f64 / (n_samples - 1) as f64;
            if radius.is_some() {
                r_outer * s
            } else {
                r_outer * s * s * s
            }
        })
        .collect();
    let rho_samples: Vec<f64> = r_samples
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if radius.is_some() && i == n_samples - 1 {
                0.0
            } else if r < r0 {
                let xi = r / alpha;
                mu * (1.0 - xi * xi / 6.0 + n * xi.powi(4) / 120.0).powf(n)
            } else {
                traj.eval(r)[0].max(0.0).powf(n)
            }
        })
        .collect();

    let [_, mass, pressure_integral, gravitational] = traj.y_final;
    let (m_quad, _, _) = sample_integrals(&r_samples, &rho_samples, gamma);
    let quadrature_tol = ((m_quad - mass) / mass).abs();
    if radius.is_some() && quadrature_tol > (1e4 * tol).max(1e-6) {
        return Err(PolytropeError::ToleranceNotAchieved(quadrature_tol));
    }

    Ok(PolytropeProfile {
        gamma,
        mu,
        r_samples,
        rho_samples,
        radius,
        r_outer,
        mass,
        pressure_integral,
        gravitational,
        energy: pressure_integral / (gamma - 1.0) - gravitational,
        quadrature_tol,
    })
}

/// `β^{2/(2-γ)} ρ_base(β r)`: another steady state, with central density
/// `μ_base β^{2/(2-γ)}` and radius `R_base / β`. Samples are carried over
/// exactly; mass and energy are re-evaluated by quadrature.
pub fn scaled_profile(base: &PolytropeProfile, beta: f64) -> Result<PolytropeProfile, PolytropeError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PolytropeError::InvalidScale(beta));
    }
    let gamma = base.gamma;
    if !(gamma > 1.2 && gamma < 2.0) {
        return Err(PolytropeError::InvalidGamma(gamma));
    }
    let radius = base.radius_or_err()?;
    let factor = beta.powf(2.0 / (2.0 - gamma));
    let r_samples: Vec<f64> = base.r_samples.iter().map(|r| r / beta).collect();
    let rho_samples: Vec<f64> = base.rho_samples.iter().map(|p| p * factor).collect();
    let (mass, pressure_integral, gravitational) = sample_integrals(&r_samples, &rho_samples, gamma);
    Ok(PolytropeProfile {
        gamma,
        mu: base.mu * factor,
        r_samples,
        rho_samples,
        radius: Some(radius / beta),
        r_outer: radius / beta,
        mass,
        pressure_integral,
        gravitational,
        energy: pressure_integral / (gamma - 1.0) - gravitational,
        quadrature_tol: base.quadrature_tol,
    })
}

/// Mass of the `γ = 4/3` steady state (independent of the central density).
pub fn chandrasekhar_mass(tol: f64) -> Result<f64, PolytropeError> {
    Ok(solve_profile(4.0 / 3.0, 1.0, tol)?.mass)
}

/// Default fit window for [`vacuum_exponent`], as a fraction of `R`.
pub const VACUUM_FIT_WINDOW: f64 = 0.05;

/// Exponent `p` in `ρ ≈ C (R - r)^p` near the vacuum radius.
pub fn vacuum_exponent(profile: &PolytropeProfile) -> Result<f64, PolytropeError> {
    vacuum_exponent_with_window(profile, VACUUM_FIT_WINDOW)
}

/// Least-squares slope of `ln ρ` against `ln(R - r)` over the decade
/// `R - r ∈ [window R / 10, window R]`.
pub fn vacuum_exponent_with_window(profile: &PolytropeProfile, window: f64) -> Result<f64, PolytropeError> {
    const MIN_SAMPLES: usize = 8;
    let radius = profile.radius_or_err()?;
    let hi = window * radius;
    let lo = hi / 10.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = profile
        .r_samples
        .iter()
        .zip(&profile.rho_samples)
        .filter_map(|(&r, &rho)| {
            let d = radius - r;
            (d >= lo && d <= hi && rho > 0.0).then(|| (d.ln(), rho.ln()))
        })
        .unzip();
    if xs.len() < MIN_SAMPLES {
        return Err(PolytropeError::InsufficientSamples(xs.len(), MIN_SAMPLES));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
