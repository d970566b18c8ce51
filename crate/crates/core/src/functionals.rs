//! Mass, energy and variational functionals of radial density/velocity pairs,
//! and the admissibility gates built from them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polytrope::{self, PolytropeError, PolytropeProfile};
use crate::quadrature;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("grid, density and velocity lengths differ ({0}, {1}, {2})")]
    Shape(usize, usize, usize),
    #[error("need at least two grid points")]
    TooFewPoints,
    #[error("radii must be non-negative and strictly increasing (index {0})")]
    NonMonotoneGrid(usize),
    #[error("negative or non-finite density at index {0}")]
    NegativeDensity(usize),
    #[error("gamma = {0} is outside the admissible range {1}")]
    GammaOutOfRange(f64, &'static str),
    #[error("density vanishes identically")]
    ZeroDensity,
    #[error(transparent)]
    Polytrope(#[from] PolytropeError),
}

/// Radial density (and optional velocity) on `[0, a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialField {
    pub r_grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub u: Option<Vec<f64>>,
    pub a: f64,
    pub gamma: f64,
}

impl RadialField {
    pub fn new(r_grid: Vec<f64>, rho: Vec<f64>, gamma: f64) -> Result<Self, FunctionalError> {
        if r_grid.len() != rho.len() {
            return Err(FunctionalError::Shape(r_grid.len(), rho.len(), r_grid.len()));
        }
        if r_grid.len() < 2 {
            return Err(FunctionalError::TooFewPoints);
        }
        if !(r_grid[0] >= 0.0) {
            return Err(FunctionalError::NonMonotoneGrid(0));
        }
        if let Some(i) = r_grid.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(FunctionalError::NonMonotoneGrid(i + 1));
        }
        if let Some(i) = rho.iter().position(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(FunctionalError::NegativeDensity(i));
        }
        let a = *r_grid.last().unwrap();
        Ok(Self { r_grid, rho, u: None, a, gamma })
    }

    pub fn with_velocity(mut self, u: Vec<f64>) -> Result<Self, FunctionalError> {
        if u.len() != self.r_grid.len() {
            return Err(FunctionalError::Shape(self.r_grid.len(), self.rho.len(), u.len()));
        }
        self.u = Some(u);
        Ok(self)
    }

    /// Linear velocity `u = c r`.
    pub fn with_linear_velocity(self, c: f64) -> Self {
        let u = self.r_grid.iter().map(|r| c * r).collect();
        Self { u: Some(u), ..self }
    }

    pub fn from_profile(profile: &PolytropeProfile) -> Result<Self, FunctionalError> {
        profile.radius_or_err()?;
        Self::new(profile.r_samples.clone(), profile.rho_samples.clone(), profile.gamma)
    }

    /// Constant density `rho0` on `n` equispaced points of `[0, a]`.
    pub fn uniform_ball(rho0: f64, a: f64, gamma: f64, n: usize) -> Result<Self, FunctionalError> {
        let r: Vec<f64> = (0..n).map(|i| a * i as f64 / (n - 1).max(1) as f64).collect();
        Self::new(r, vec![rho0; n], gamma)
    }

    pub fn scale_density(&self, c: f64) -> Self {
        Self { rho: self.rho.iter().map(|p| c * p).collect(), ..self.clone() }
    }

    /// `λ³ ρ(λ r)` together with `u(λ r)`: mass preserving, support `a / λ`.
    pub fn dilate(&self, lambda: f64) -> Self {
        let l3 = lambda.powi(3);
        Self {
            r_grid: self.r_grid.iter().map(|r| r / lambda).collect(),
            rho: self.rho.iter().map(|p| l3 * p).collect(),
            u: self.u.clone(),
            a: self.a / lambda,
            gamma: self.gamma,
        }
    }

    fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        let y: Vec<f64> = (0..self.r_grid.len()).map(f).collect();
        quadrature::integrate(&self.r_grid, &y)
    }

    /// Enclosed mass `m(r) = 4π ∫₀^r ρ s² ds` at every grid point.
    pub fn enclosed_mass(&self) -> Vec<f64> {
        let y: Vec<f64> = self.r_grid.iter().zip(&self.rho).map(|(r, p)| 4.0 * PI * p * r * r).collect();
        quadrature::cumulative(&self.r_grid, &y)
    }

    /// `4π ∫ ρ^γ r² dr`.
    pub fn pressure_integral(&self) -> f64 {
        let g = self.gamma;
        self.integrate(|i| 4.0 * PI * self.rho[i].powf(g) * self.r_grid[i].powi(2))
    }

    /// `∫ ρ^γ r² dr`, the variable of the comparison function in [`kl_gate`].
    pub fn kl_s(&self) -> f64 {
        self.pressure_integral() / (4.0 * PI)
    }

    pub fn kinetic(&self) -> f64 {
        match &self.u {
            None => 0.0,
            Some(u) => self.integrate(|i| 2.0 * PI * self.rho[i] * u[i] * u[i] * self.r_grid[i].powi(2)),
        }
    }
}

/// Total mass `4π ∫ ρ r² dr`.
pub fn mass(f: &RadialField) -> f64 {
    *f.enclosed_mass().last().unwrap()
}

/// Two independent evaluations of the gravitational energy magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravitationalEnergy {
    /// `∫ 4π ρ r m(r) dr`.
    pub direct: f64,
    /// `m(a)² / (2a) + ∫ m(r)² / (2r²) dr`.
    pub identity: f64,
}

pub fn gravitational_energy(f: &RadialField) -> GravitationalEnergy {
    let m = f.enclosed_mass();
    let direct = f.integrate(|i| 4.0 * PI * f.rho[i] * f.r_grid[i] * m[i]);
    let tail = f.integrate(|i| {
        let r = f.r_grid[i];
        if r > 0.0 {
            m[i] * m[i] / (2.0 * r * r)
        } else {
            0.0
        }
    });
    let m_a = *m.last().unwrap();
    let boundary = if f.a > 0.0 { m_a * m_a / (2.0 * f.a) } else { 0.0 };
    GravitationalEnergy { direct, identity: boundary + tail }
}

/// Energy split of a radial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    /// `4π ∫ ρ^γ r² dr / (γ - 1)`.
    pub internal: f64,
    /// Magnitude of the (negative) gravitational energy.
    pub gravitational: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "S_mu", skip_serializing_if = "Option::is_none", default)]
    pub s_mu: Option<f64>,
    pub mass: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dissipation: Option<f64>,
}

impl EnergyBreakdown {
    /// `kinetic + Q + ((4 - 3γ)/(γ - 1)) 4π∫ρ^γ r²`; equals `e` up to rounding.
    pub fn decomposed_energy(&self, gamma: f64) -> f64 {
        self.kinetic + self.q + (4.0 - 3.0 * gamma) * self.internal
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("flat record serializes")
    }
}

pub fn energy(f: &RadialField) -> EnergyBreakdown {
    let kinetic = f.kinetic();
    let p = f.pressure_integral();
    let internal = p / (f.gamma - 1.0);
    let gravitational = gravitational_energy(f).direct;
    EnergyBreakdown {
        kinetic,
        internal,
        gravitational,
        e: kinetic + internal - gravitational,
        q: 3.0 * p - gravitational,
        s_mu: None,
        mass: mass(f),
        dissipation: None,
    }
}

/// [`energy`] with `S_μ` filled from `reference`.
pub fn energy_with_reference(f: &RadialField, reference: &PolytropeProfile) -> Result<EnergyBreakdown, FunctionalError> {
    let mut e = energy(f);
    e.s_mu = Some(e.internal - e.gravitational - reference.boundary_potential()? * e.mass);
    Ok(e)
}

/// `internal - gravitational - Φ_μ(R_μ) M` with `Φ_μ(R_μ) = -M_μ / R_μ`.
pub fn s_mu(f: &RadialField, reference: &PolytropeProfile) -> Result<f64, FunctionalError> {
    let phi = reference.boundary_potential()?;
    let e = energy(f);
    Ok(e.internal - e.gravitational - phi * e.mass)
}

/// `ρ_{λ,μ}(r) = λ³ ρ_μ(λ r)` on `[0, R_μ / λ]`, at rest.
pub fn mass_preserving_scaling(profile: &PolytropeProfile, lambda: f64) -> Result<RadialField, FunctionalError> {
    Ok(RadialField::from_profile(profile)?.dilate(lambda))
}

/// `∬ ρρ/|x-y| / (M^{2/3} ∫ρ^{4/3} dx)`.
pub fn hls_ratio(f: &RadialField) -> Result<f64, FunctionalError> {
    let m = mass(f);
    if !(m > 0.0) {
        return Err(FunctionalError::ZeroDensity);
    }
    let l43 = f.integrate(|i| 4.0 * PI * f.rho[i].powf(4.0 / 3.0) * f.r_grid[i].powi(2));
    Ok(2.0 * gravitational_energy(f).direct / (m.powf(2.0 / 3.0) * l43))
}

/// The `μ = 1` steady state of a given `γ` and its level `l₁ = S₁(ρ₁)`.
#[derive(Debug, Clone)]
pub struct ReferenceProfile {
    pub profile: PolytropeProfile,
    pub l1: f64,
}

impl ReferenceProfile {
    pub fn m1(&self) -> f64 {
        self.profile.mass
    }

    pub fn r1(&self) -> f64 {
        self.profile.radius.expect("reference profiles have finite support")
    }
}

/// Solver tolerance used for cached reference profiles.
pub const REFERENCE_TOL: f64 = 1e-11;

type CacheMap = HashMap<u64, Arc<ReferenceProfile>>;

fn cache() -> &'static RwLock<CacheMap> {
    static CACHE: OnceLock<RwLock<CacheMap>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Cached `μ = 1` reference profile for `gamma`. Safe to call from many threads;
/// a profile may be solved twice under contention but only one copy is kept.
pub fn reference_profile(gamma: f64) -> Result<Arc<ReferenceProfile>, FunctionalError> {
    let key = gamma.to_bits();
    if let Some(hit) = cache().read().unwrap().get(&key) {
        return Ok(Arc::clone(hit));
    }
    let profile = polytrope::solve_profile(gamma, 1.0, REFERENCE_TOL)?;
    let field = RadialField::from_profile(&profile)?;
    let l1 = s_mu(&field, &profile)?;
    let entry = Arc::new(ReferenceProfile { profile, l1 });
    let mut w = cache().write().unwrap();
    Ok(Arc::clone(w.entry(key).or_insert(entry)))
}

/// `M_ch` from the cached `γ = 4/3` reference.
pub fn critical_mass() -> Result<f64, FunctionalError> {
    Ok(reference_profile(4.0 / 3.0)?.m1())
}

/// Strictness knobs for the admissibility gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOptions {
    /// Required excess in each strict inequality.
    pub margin: f64,
    /// Values within this fraction of the natural scale of an inequality count
    /// as equality (quadrature noise), i.e. as non-members.
    pub noise_floor: f64,
}

impl Default for GateOptions {
    fn default() -> Self {
        Self { margin: 0.0, noise_floor: 1e-9 }
    }
}

impl GateOptions {
    fn strictly_positive(&self, value: f64, scale: f64) -> bool {
        value > self.margin && value > self.noise_floor * scale.abs()
    }
}

/// Mass bound defining `𝓘` for `γ ∈ (6/5, 4/3)`; `+∞` when `energy ≤ 0`.
pub fn invariant_mass_bound(gamma: f64, energy: f64, m1: f64, r1: f64, l1: f64) -> f64 {
    if energy <= 0.0 {
        return f64::INFINITY;
    }
    let k = 5.0 * gamma - 6.0;
    let g1 = gamma - 1.0;
    let j = 4.0 - 3.0 * gamma;
    (k / (2.0 * g1)).powf(2.0 * g1 / k)
        * (j / k).powf(j / k)
        * l1.powf(2.0 * g1 / k)
        * (r1 / m1)
        * energy.powf((3.0 * gamma - 4.0) / k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSetDecision {
    pub member: bool,
    pub gamma: f64,
    pub mass: f64,
    /// `M_ch` at `γ = 4/3`, the energy-dependent bound otherwise.
    pub mass_bound: f64,
    pub mass_margin: f64,
    /// `None` at `γ = 4/3`, where only the mass is tested.
    pub q: Option<f64>,
    pub energy: f64,
    pub m1: f64,
    pub r1: f64,
    pub l1: f64,
}

pub fn invariant_set_check(f: &RadialField) -> Result<InvariantSetDecision, FunctionalError> {
    invariant_set_check_with(f, &GateOptions::default())
}

pub fn invariant_set_check_with(f: &RadialField, opts: &GateOptions) -> Result<InvariantSetDecision, FunctionalError> {
    let gamma = f.gamma;
    let critical = crate::is_mass_critical(gamma);
    if !(gamma > 1.2 && (gamma < 4.0 / 3.0 || critical)) {
        return Err(FunctionalError::GammaOutOfRange(gamma, "(6/5, 4/3]"));
    }
    let reference = reference_profile(if critical { 4.0 / 3.0 } else { gamma })?;
    let e = energy(f);
    let (m1, r1, l1) = (reference.m1(), reference.r1(), reference.l1);
    if critical {
        let margin = m1 - e.mass;
        return Ok(InvariantSetDecision {
            member: opts.strictly_positive(margin, m1),
            gamma,
            mass: e.mass,
            mass_bound: m1,
            mass_margin: margin,
            q: None,
            energy: e.e,
            m1,
            r1,
            l1,
        });
    }
    let bound = invariant_mass_bound(gamma, e.e, m1, r1, l1);
    let margin = bound - e.mass;
    let q_ok = opts.strictly_positive(e.q, 3.0 * (gamma - 1.0) * e.internal);
    Ok(InvariantSetDecision {
        member: q_ok && opts.strictly_positive(margin, e.mass),
        gamma,
        mass: e.mass,
        mass_bound: bound,
        mass_margin: margin,
        q: Some(e.q),
        energy: e.e,
        m1,
        r1,
        l1,
    })
}

/// Exponents of the comparison inequality `W/4π ≤ B M^p s^q`, with
/// `κ = q - 1`.
#[derive(Debug, Clone, Copy)]
struct KlExponents {
    p: f64,
    q: f64,
    kappa: f64,
}

fn kl_exponents(gamma: f64) -> KlExponents {
    let g1 = gamma - 1.0;
    KlExponents {
        p: (5.0 * gamma - 6.0) / (3.0 * g1),
        q: 1.0 / (3.0 * g1),
        kappa: (4.0 - 3.0 * gamma) / (3.0 * g1),
    }
}

/// `W / (4π M^p s^q)` for one density; any valid `B` is at least this.
pub fn kl_ratio(f: &RadialField) -> Result<f64, FunctionalError> {
    let m = mass(f);
    if !(m > 0.0) {
        return Err(FunctionalError::ZeroDensity);
    }
    let ex = kl_exponents(f.gamma);
    Ok(gravitational_energy(f).direct / (4.0 * PI * m.powf(ex.p) * f.kl_s().powf(ex.q)))
}

/// `f(s) = s/(γ-1) - B M^p s^q`.
pub fn kl_f(s: f64, gamma: f64, b: f64, mass: f64) -> f64 {
    let ex = kl_exponents(gamma);
    s / (gamma - 1.0) - b * mass.powf(ex.p) * s.powf(ex.q)
}

/// Maximiser of [`kl_f`].
pub fn kl_s_star(gamma: f64, b: f64, mass: f64) -> f64 {
    let j = 4.0 - 3.0 * gamma;
    (b / 3.0).powf(-3.0 * (gamma - 1.0) / j) * mass.powf(-(5.0 * gamma - 6.0) / j)
}

/// Closed form of `f(s*)`.
pub fn kl_f_max(gamma: f64, b: f64, mass: f64) -> f64 {
    (4.0 - 3.0 * gamma) / (gamma - 1.0) * kl_s_star(gamma, b, mass)
}

/// Random densities that are positive on `[0, a)` and vanish at `a`.
pub fn random_trial_density<R: Rng>(rng: &mut R, gamma: f64, n: usize) -> RadialField {
    let a = rng.gen_range(0.5..4.0);
    let amp = rng.gen_range(0.1..10.0);
    let kind = rng.gen_range(0..4);
    let p1 = rng.gen_range(1.0..4.0);
    let p2 = rng.gen_range(0.5..4.0);
    let w = rng.gen_range(0.1..1.0);
    let c = rng.gen_range(0.1..0.9);
    let r: Vec<f64> = (0..n).map(|i| a * i as f64 / (n - 1) as f64).collect();
    let rho: Vec<f64> = r
        .iter()
        .map(|&r| {
            let x = r / a;
            let v = match kind {
                // truncated Gaussian
                0 => (-(x / w).powi(2)).exp() - (-(1.0 / w).powi(2)).exp(),
                // polynomial cap
                1 => (1.0 - x.powf(p1)).max(0.0).powf(p2),
                // hollow-ish core with an off-centre bump
                2 => (1.0 - x * x).max(0.0).powf(p2) * (0.2 + (-((x - c) / w).powi(2)).exp()),
                // two-level step, smoothed
                _ => (1.0 - x).max(0.0).powf(p2) * (1.0 + p1 * (1.0 - (x / c).min(1.0))),
            };
            amp * v.max(0.0)
        })
        .collect();
    RadialField::new(r, rho, gamma).expect("trial grid is valid")
}

/// Lower estimate of the constant `B`: the best [`kl_ratio`] over the steady
/// state of this `γ` and `n_trials` seeded random densities.
pub fn estimate_kl_constant(gamma: f64, seed: u64, n_trials: usize) -> Result<f64, FunctionalError> {
    let reference = reference_profile(gamma)?;
    let mut best = kl_ratio(&RadialField::from_profile(&reference.profile)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_trials {
        let trial = random_trial_density(&mut rng, gamma, 1201);
        best = best.max(kl_ratio(&trial)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlGateReport {
    pub gamma: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub mass: f64,
    /// `∫ ρ^γ r² dr`.
    pub s: f64,
    /// Kinetic plus internal energy.
    pub e_tilde: f64,
    pub s_star: f64,
    pub f_s_star: f64,
    pub critical_mass: f64,
    pub below_critical_mass: bool,
    /// `Q / 4π`.
    pub chain_lhs: f64,
    /// `C₀ M^p s^q` with `C₀ = B (2^κ - 1)`.
    pub chain_rhs: f64,
    pub c0: f64,
    /// `B M^p s (s*^κ - s^κ)`, the lower bound that holds along the flow.
    pub control_bound: f64,
    pub chain_holds: bool,
}

pub fn kl_gate(f: &RadialField, b: f64) -> Result<KlGateReport, FunctionalError> {
    let gamma = f.gamma;
    if !(gamma > 1.2 && gamma < 4.0 / 3.0) || crate::is_mass_critical(gamma) {
        return Err(FunctionalError::GammaOutOfRange(gamma, "(6/5, 4/3)"));
    }
    let ex = kl_exponents(gamma);
    let e = energy(f);
    let m = e.mass;
    let s = f.kl_s();
    let e_tilde = e.kinetic + e.internal;
    let j = 4.0 - 3.0 * gamma;
    let k = 5.0 * gamma - 6.0;
    let critical_mass = ((j / (gamma - 1.0)) * (b / 3.0).powf(-3.0 * (gamma - 1.0) / j)).powf(j / k)
        * (e_tilde / (4.0 * PI)).powf(-j / k);
    let s_star = kl_s_star(gamma, b, m);
    let c0 = b * (2f64.powf(ex.kappa) - 1.0);
    let chain_lhs = e.q / (4.0 * PI);
    let chain_rhs = c0 * m.powf(ex.p) * s.powf(ex.q);
    Ok(KlGateReport {
        gamma,
        b,
        mass: m,
        s,
        e_tilde,
        s_star,
        f_s_star: kl_f_max(gamma, b, m),
        critical_mass,
        below_critical_mass: m < critical_mass,
        chain_lhs,
        chain_rhs,
        c0,
        control_bound: b * m.powf(ex.p) * s * (s_star.powf(ex.kappa) - s.powf(ex.kappa)),
        chain_holds: chain_lhs >= chain_rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(gamma: f64) -> (PolytropeProfile, RadialField) {
        let p = polytrope::solve_profile(gamma, 1.0, 1e-10).unwrap();
        let f = RadialField::from_profile(&p).unwrap();
        (p, f)
    }

    #[test]
    fn uniform_ball_closed_forms() {
        let (rho0, a) = (0.7, 1.9);
        let f = RadialField::uniform_ball(rho0, a, 1.3, 2001).unwrap();
        let m = 4.0 * PI / 3.0 * rho0 * a.powi(3);
        assert!((mass(&f) - m).abs() < 1e-10 * m);
        let w = 16.0 * PI * PI / 15.0 * rho0 * rho0 * a.powi(5);
        let g = gravitational_energy(&f);
        assert!((g.direct / w - 1.0).abs() < 1e-8);
        assert!((g.identity / w - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_density_is_all_zero() {
        let f = RadialField::uniform_ball(0.0, 1.0, 1.3, 101).unwrap();
        let e = energy(&f);
        assert_eq!((e.kinetic, e.internal, e.gravitational, e.e, e.q, e.mass), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let g = gravitational_energy(&f);
        assert_eq!((g.direct, g.identity), (0.0, 0.0));
        assert!(matches!(hls_ratio(&f), Err(FunctionalError::ZeroDensity)));
        let (p, _) = le(1.3);
        assert_eq!(s_mu(&f, &p).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(matches!(
            RadialField::new(vec![0.0, 1.0, 1.0], vec![1.0; 3], 1.3),
            Err(FunctionalError::NonMonotoneGrid(2))
        ));
        assert!(matches!(
            RadialField::new(vec![0.0, 1.0], vec![1.0, -1.0], 1.3),
            Err(FunctionalError::NegativeDensity(1))
        ));
    }

    #[test]
    fn steady_state_has_vanishing_q() {
        let (_, f) = le(1.3);
        let e = energy(&f);
        assert!(e.q.abs() < 1e-6 * e.internal, "Q = {}", e.q);
        assert!((e.decomposed_energy(1.3) - e.e).abs() < 1e-12 * e.internal);
    }

    #[test]
    fn dilation_is_mass_preserving_and_q_positive() {
        let (p, f) = le(1.3);
        let m = mass(&f);
        let mut last_q = f64::INFINITY;
        for lambda in [0.9, 0.95, 0.99] {
            let g = mass_preserving_scaling(&p, lambda).unwrap();
            assert!((mass(&g) - m).abs() < 1e-8 * m);
            let q = energy(&g).q;
            assert!(q > 0.0 && q < last_q);
            last_q = q;
            assert!(s_mu(&g, &p).unwrap() < s_mu(&f, &p).unwrap());
        }
        let same = mass_preserving_scaling(&p, 1.0).unwrap();
        assert_eq!(same, f);
    }

    #[test]
    fn s_derivative_along_dilations_is_q_over_lambda() {
        let (p, _) = le(1.3);
        let s = |l: f64| s_mu(&mass_preserving_scaling(&p, l).unwrap(), &p).unwrap();
        for lambda in [0.8, 0.95, 1.1] {
            let h = 1e-4;
            let fd = (s(lambda + h) - s(lambda - h)) / (2.0 * h);
            let q = energy(&mass_preserving_scaling(&p, lambda).unwrap()).q;
            assert!((fd - q / lambda).abs() < 1e-6 * q.abs().max(1e-3), "{fd} vs {}", q / lambda);
        }
    }

    #[test]
    fn hls_ratio_of_the_critical_steady_state() {
        let (p, f) = le(4.0 / 3.0);
        let ratio = hls_ratio(&f).unwrap();
        let expected = 6.0 * p.mass.powf(-2.0 / 3.0);
        assert!((ratio / expected - 1.0).abs() < 1e-4, "{ratio} vs {expected}");
    }

    // Independent route to the mass bound: maximise over μ the largest mass
    // allowed by S_μ < l_μ, using M_μ/R_μ = (M₁/R₁) μ^{γ-1}, l_μ = l₁ μ^{(5γ-6)/2}.
    fn bound_by_scan(gamma: f64, e: f64, m1: f64, r1: f64, l1: f64) -> f64 {
        let g = |lm: f64| {
            let mu: f64 = lm.exp();
            (l1 * mu.powf((5.0 * gamma - 6.0) / 2.0) - e) / ((m1 / r1) * mu.powf(gamma - 1.0))
        };
        let (mut lo, mut hi) = (-600.0f64, 600.0f64);
        for _ in 0..400 {
            let m1_ = lo + (hi - lo) / 3.0;
            let m2_ = hi - (hi - lo) / 3.0;
            if g(m1_) < g(m2_) {
                lo = m1_;
            } else {
                hi = m2_;
            }
        }
        g(0.5 * (lo + hi))
    }

    #[test]
    fn mass_bound_matches_supremum_over_steady_states() {
        for (gamma, e) in [(1.3, 0.7), (1.25, 3.0), (1.22, 0.01)] {
            let (m1, r1, l1) = (1.7, 2.3, 0.9);
            let closed = invariant_mass_bound(gamma, e, m1, r1, l1);
            let scan = bound_by_scan(gamma, e, m1, r1, l1);
            assert!((closed / scan - 1.0).abs() < 1e-8, "{closed} vs {scan}");
        }
        assert_eq!(invariant_mass_bound(1.3, -1.0, 1.0, 1.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn invariant_set_decisions() {
        let (p, f) = le(1.3);
        let near = mass_preserving_scaling(&p, 0.95).unwrap().with_linear_velocity(1e-3);
        let d = invariant_set_check(&near).unwrap();
        assert!(d.member, "{d:?}");
        assert!(d.q.unwrap() > 0.0 && d.mass_margin > 0.0);

        let d = invariant_set_check(&f).unwrap();
        assert!(!d.member, "{d:?}");

        let (pc, fc) = le(4.0 / 3.0);
        let heavy = fc.scale_density(2.0);
        let d = invariant_set_check(&heavy).unwrap();
        assert!(!d.member);
        assert!((d.mass_margin + pc.mass).abs() < 1e-6 * pc.mass);
        let light = fc.scale_density(0.5);
        assert!(invariant_set_check(&light).unwrap().member);

        let out = RadialField::uniform_ball(1.0, 1.0, 1.5, 11).unwrap();
        assert!(matches!(invariant_set_check(&out), Err(FunctionalError::GammaOutOfRange(..))));
    }

    #[test]
    fn cache_returns_shared_entry() {
        let a = reference_profile(1.31).unwrap();
        let b = reference_profile(1.31).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn kl_maximiser_matches_scan() {
        let (gamma, b, m) = (1.3, 0.8, 2.0);
        let s_star = kl_s_star(gamma, b, m);
        let f_max = kl_f_max(gamma, b, m);
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 1..200_000 {
            let s = s_star * 3.0 * i as f64 / 200_000.0;
            let v = kl_f(s, gamma, b, m);
            if v > best.1 {
                best = (s, v);
            }
        }
        assert!((best.0 / s_star - 1.0).abs() < 1e-4);
        assert!((best.1 / f_max - 1.0).abs() < 1e-8);
        assert!((kl_f(s_star, gamma, b, m) / f_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_gate_rejects_near_steady_data() {
        let (p, _) = le(1.3);
        let b = estimate_kl_constant(1.3, 7, 20).unwrap();
        let near = mass_preserving_scaling(&p, 0.99).unwrap().with_linear_velocity(1e-3);
        let r = kl_gate(&near, b).unwrap();
        assert!(!r.chain_holds && !r.below_critical_mass, "{r:?}");
        assert!(invariant_set_check(&near).unwrap().member);
    }

    #[test]
    fn energy_breakdown_json_is_flat() {
        let (_, f) = le(1.3);
        let v: serde_json::Value = serde_json::from_str(&energy(&f).to_json()).unwrap();
        let obj = v.as_object().unwrap();
        for key in ["kinetic", "internal", "gravitational", "E", "Q", "mass"] {
            assert!(obj[key].is_number(), "{key}");
        }
        assert!(obj.values().all(|v| v.is_number()));
    }
}
