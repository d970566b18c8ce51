//! Post-processing of runs: virial functionals, energy residuals, expansion
//! exponent fits and the per-run verdict.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{SimConfig, StarState, ViscosityModel};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("only {0} samples in the fit window; need at least {1}")]
    InsufficientSamples(usize, usize),
    #[error("record spans t in [{0:e}, {1:e}], less than one decade")]
    InsufficientSpan(f64, f64),
    #[error("a(t) is not increasing in the fit window (t = {0:e})")]
    NonMonotone(f64),
    #[error("virial functional I needs gamma = 4/3, got {0}")]
    NotMassCritical(f64),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column names of the time-series CSV, in order.
pub const CSV_COLUMNS: [&str; 15] = [
    "t",
    "a",
    "u_boundary",
    "E",
    "kinetic",
    "internal",
    "gravitational",
    "Q",
    "dissipation_accum",
    "energy_residual",
    "H",
    "Hp",
    "Hpp",
    "min_interior_rho",
    "rho2gamma_r8_accum",
];

/// One row of the time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub a: f64,
    pub u_boundary: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub gravitational: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub dissipation_accum: f64,
    pub energy_residual: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "Hp")]
    pub hp: f64,
    #[serde(rename = "Hpp")]
    pub hpp: f64,
    pub min_interior_rho: f64,
    pub rho2gamma_r8_accum: f64,
}

impl Sample {
    /// `e0` and `floor` set the normalisation of `energy_residual`.
    pub fn from_state(state: &StarState, e0: f64, floor: f64) -> Self {
        let (h, hp, hpp) = virial_h(state);
        let kinetic = state.kinetic();
        let internal = state.internal();
        let gravitational = state.gravitational();
        let e = kinetic + internal - gravitational;
        Self {
            t: state.tau,
            a: state.a,
            u_boundary: *state.u.last().unwrap(),
            e,
            kinetic,
            internal,
            gravitational,
            q: 3.0 * (state.gamma - 1.0) * internal - gravitational,
            dissipation_accum: state.dissipation,
            energy_residual: (e + state.dissipation - e0) / e0.abs().max(floor),
            h,
            hp,
            hpp,
            min_interior_rho: state.min_interior_rho(),
            rho2gamma_r8_accum: state.rho2gamma_r8,
        }
    }

    pub fn values(&self) -> [f64; 15] {
        [
            self.t,
            self.a,
            self.u_boundary,
            self.e,
            self.kinetic,
            self.internal,
            self.gravitational,
            self.q,
            self.dissipation_accum,
            self.energy_residual,
            self.h,
            self.hp,
            self.hpp,
            self.min_interior_rho,
            self.rho2gamma_r8_accum,
        ]
    }

    pub fn from_values(v: [f64; 15]) -> Self {
        Self {
            t: v[0],
            a: v[1],
            u_boundary: v[2],
            e: v[3],
            kinetic: v[4],
            internal: v[5],
            gravitational: v[6],
            q: v[7],
            dissipation_accum: v[8],
            energy_residual: v[9],
            h: v[10],
            hp: v[11],
            hpp: v[12],
            min_interior_rho: v[13],
            rho2gamma_r8_accum: v[14],
        }
    }
}

pub fn write_csv<W: Write>(samples: &[Sample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for s in samples {
        let row: Vec<String> = s.values().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<Sample>, DiagError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(DiagError::Csv { line: 1, msg: "empty file".into() })??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols != CSV_COLUMNS {
        return Err(DiagError::Csv { line: 1, msg: format!("unexpected header `{}`", header.trim()) });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v = [0.0; 15];
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 15 {
            return Err(DiagError::Csv { line: i + 2, msg: format!("expected 15 fields, got {}", fields.len()) });
        }
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| DiagError::Csv { line: i + 2, msg: format!("`{f}`: {e}") })?;
        }
        out.push(Sample::from_values(v));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub tag: String,
    pub message: String,
}

/// Constants fixed at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: SimConfig,
    pub gamma: f64,
    pub visc: ViscosityModel,
    pub n_cells: usize,
    pub xi: f64,
    pub mass: f64,
    pub e0: f64,
    /// Normalisation floor of the energy residual.
    pub residual_floor: f64,
    /// `l₁` of the reference steady state, when one applies.
    pub l1: Option<f64>,
}

/// Pointwise checks accumulated over every recorded state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateChecks {
    pub holder_nodes: u64,
    pub holder_violations: u64,
    /// Largest `x / bound` seen; at most 1 when the chain holds.
    pub holder_worst_ratio: f64,
    pub geometric_error_max: f64,
    pub mass_drift_max: f64,
}

impl Default for StateChecks {
    fn default() -> Self {
        Self { holder_nodes: 0, holder_violations: 0, holder_worst_ratio: 0.0, geometric_error_max: 0.0, mass_drift_max: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub checks: StateChecks,
    pub completed: bool,
    pub steps: u64,
}

/// Relative slack allowed in the particle-path chain before a node counts as a violation.
pub const HOLDER_TOL: f64 = 1e-12;

impl RunRecord {
    pub fn start(config: &SimConfig, state: &StarState) -> Self {
        let scale = state.kinetic() + state.internal() + state.gravitational();
        let mut rec = Self {
            meta: RunMeta {
                config: config.clone(),
                gamma: state.gamma,
                visc: state.visc,
                n_cells: state.n_cells(),
                xi: state.xi,
                mass: state.total_mass(),
                e0: state.energy(),
                residual_floor: 1e-12 * scale.max(f64::MIN_POSITIVE),
                l1: None,
            },
            samples: Vec::new(),
            events: Vec::new(),
            checks: StateChecks::default(),
            completed: false,
            steps: 0,
        };
        rec.push(state);
        rec
    }

    /// Builds a record directly from samples, e.g. one read back from CSV.
    pub fn from_samples(meta: RunMeta, samples: Vec<Sample>) -> Self {
        Self { meta, samples, events: Vec::new(), checks: StateChecks::default(), completed: true, steps: 0 }
    }

    pub fn push(&mut self, state: &StarState) {
        self.samples.push(Sample::from_state(state, self.meta.e0, self.meta.residual_floor));
        let chain = holder_chain(state);
        self.checks.holder_nodes += chain.nodes;
        self.checks.holder_violations += chain.violations;
        self.checks.holder_worst_ratio = self.checks.holder_worst_ratio.max(chain.worst_ratio);
        if chain.violations > 0 {
            self.event(state.tau, "holder", format!("{} nodes violate the particle-path bound", chain.violations));
        }
        self.checks.geometric_error_max = self.checks.geometric_error_max.max(state.geometric_consistency_error());
        let drift = ((state.total_mass() - self.meta.mass) / self.meta.mass).abs();
        self.checks.mass_drift_max = self.checks.mass_drift_max.max(drift);
        self.steps = state.steps;
    }

    pub fn event(&mut self, t: f64, tag: &str, message: String) {
        self.events.push(Event { t, tag: tag.to_string(), message });
    }

    pub fn fail(&mut self, t: f64, message: String) {
        self.event(t, "error", message);
        self.completed = false;
    }

    pub fn finish(&mut self, state: &StarState) {
        self.steps = state.steps;
        self.completed = true;
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_csv(&self.samples, out)
    }

    fn column(&self, f: impl Fn(&Sample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

/// `(H, H', H'')` with `H = ½ Σ m r²`, `H' = Σ m r u` and `H''` from the
/// virial identity (not by differencing).
pub fn virial_h(state: &StarState) -> (f64, f64, f64) {
    let n = state.n_cells();
    let mut h = 0.0;
    let mut hp = 0.0;
    for j in 0..=n {
        let m = state.node_mass(j);
        h += 0.5 * m * state.r[j] * state.r[j];
        hp += m * state.r[j] * state.u[j];
    }
    (h, hp, state.virial_second_derivative())
}

/// `I = H - (1+t) H' + (1+t)² E` at `γ = 4/3`.
pub fn virial_i(state: &StarState) -> Result<f64, DiagError> {
    if !crate::is_mass_critical(state.gamma) {
        return Err(DiagError::NotMassCritical(state.gamma));
    }
    let (h, hp, _) = virial_h(state);
    let s = 1.0 + state.tau;
    Ok(h - s * hp + s * s * state.energy())
}

/// `½ Σ m (r - (1+t) u)² + (1+t)² (internal - gravitational)`: the defining sum of `I`.
pub fn virial_i_direct(state: &StarState) -> Result<f64, DiagError> {
    if !crate::is_mass_critical(state.gamma) {
        return Err(DiagError::NotMassCritical(state.gamma));
    }
    let s = 1.0 + state.tau;
    let moment: f64 = (0..=state.n_cells())
        .map(|j| 0.5 * state.node_mass(j) * (state.r[j] - s * state.u[j]).powi(2))
        .sum();
    Ok(moment + s * s * (state.internal() - state.gravitational()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderChain {
    pub nodes: u64,
    pub violations: u64,
    pub worst_ratio: f64,
}

/// Checks `x_j ≤ (Σ_{k<j} V_k ρ_k^γ)^{1/γ} (4π r_j³ / 3)^{(γ-1)/γ}` at every interface.
pub fn holder_chain(state: &StarState) -> HolderChain {
    let g = state.gamma;
    let mut acc = 0.0;
    let mut out = HolderChain { nodes: 0, violations: 0, worst_ratio: 0.0 };
    for j in 1..=state.n_cells() {
        acc += state.cell_volume(j - 1) * state.rho[j - 1].powf(g);
        let bound = acc.powf(1.0 / g) * (4.0 * PI * state.r[j].powi(3) / 3.0).powf((g - 1.0) / g);
        let ratio = state.x_grid[j] / bound;
        out.nodes += 1;
        out.worst_ratio = out.worst_ratio.max(ratio);
        if ratio > 1.0 + HOLDER_TOL {
            out.violations += 1;
        }
    }
    out
}

/// Predicted late-time exponent of `a(t)` and the accepted band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentTarget {
    pub target: f64,
    pub band: (f64, f64),
    /// Lower rate when only an interval of rates is predicted (`γ = 4/3`).
    pub lower_rate: Option<f64>,
}

pub fn exponent_target(gamma: f64, visc: &ViscosityModel) -> ExponentTarget {
    let alpha = visc.alpha;
    if visc.eta == 0.0 || alpha >= 2.0 / 3.0 {
        return ExponentTarget { target: 1.0, band: (0.9, f64::INFINITY), lower_rate: None };
    }
    if alpha > 0.0 {
        let t = 1.0 / (3.0 * (1.0 - alpha));
        return ExponentTarget { target: t, band: (t - 0.08, t + 0.10), lower_rate: None };
    }
    if crate::is_mass_critical(gamma) {
        return ExponentTarget { target: 1.0 / 3.0, band: (0.22, 0.36), lower_rate: Some(0.25) };
    }
    ExponentTarget { target: 1.0 / 3.0, band: (0.28, 0.38), lower_rate: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub window: (f64, f64),
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub target: f64,
    pub band: (f64, f64),
    pub in_band: bool,
}

/// Default share of log-time used by [`fit_exponent`].
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
pub const MIN_FIT_SAMPLES: usize = 10;

/// `[t_lo, t_hi]` covering the last `fraction` of `log t`, starting from the
/// first positive time.
pub fn log_time_window(t: &[f64], fraction: f64) -> Option<(f64, f64)> {
    let first = t.iter().copied().find(|&v| v > 0.0)?;
    let last = *t.last()?;
    if !(last > first) {
        return None;
    }
    let lo = (last.ln() - fraction * (last.ln() - first.ln())).exp();
    Some((lo, last))
}

/// Least-squares slope of `ln a` against `ln t` over the last `window_fraction`
/// of log-time.
pub fn fit_exponent_series(
    t: &[f64],
    a: &[f64],
    window_fraction: f64,
    target: ExponentTarget,
) -> Result<ExponentFit, DiagError> {
    let (lo, hi) = log_time_window(t, window_fraction).ok_or(DiagError::InsufficientSamples(0, MIN_FIT_SAMPLES))?;
    let first = t.iter().copied().find(|&v| v > 0.0).unwrap();
    if hi < 10.0 * first {
        return Err(DiagError::InsufficientSpan(first, hi));
    }
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= lo * (1.0 - 1e-12) && t[i] <= hi).collect();
    if idx.len() < MIN_FIT_SAMPLES {
        return Err(DiagError::InsufficientSamples(idx.len(), MIN_FIT_SAMPLES));
    }
    for w in idx.windows(2) {
        if !(a[w[1]] > a[w[0]]) {
            return Err(DiagError::NonMonotone(t[w[1]]));
        }
    }
    let xs: Vec<f64> = idx.iter().map(|&i| t[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| a[i].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(ExponentFit {
        window: (t[idx[0]], t[*idx.last().unwrap()]),
        samples: idx.len(),
        slope,
        intercept,
        r_squared,
        target: target.target,
        band: target.band,
        in_band: slope >= target.band.0 && slope <= target.band.1,
    })
}

pub fn fit_exponent(record: &RunRecord, window_fraction: f64) -> Result<ExponentFit, DiagError> {
    fit_exponent_series(
        &record.column(|s| s.t),
        &record.column(|s| s.a),
        window_fraction,
        exponent_target(record.meta.gamma, &record.meta.visc),
    )
}

/// `(E + D - E₀) / max(|E₀|, floor)` per sample, recomputed from the columns.
pub fn energy_residual(record: &RunRecord) -> Vec<f64> {
    let e0 = record.samples.first().map(|s| s.e).unwrap_or(0.0);
    let floor = record.meta.residual_floor;
    record.samples.iter().map(|s| (s.e + s.dissipation_accum - e0) / e0.abs().max(floor)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QPersistence {
    pub min_q: f64,
    pub argmin_t: f64,
    /// `min_q` relative to the initial internal-energy scale `3(γ-1) internal(0)`.
    pub relative: f64,
    pub positive: bool,
}

pub fn q_persistence(record: &RunRecord) -> QPersistence {
    let mut min_q = f64::INFINITY;
    let mut argmin_t = f64::NAN;
    for s in &record.samples {
        if s.q < min_q {
            min_q = s.q;
            argmin_t = s.t;
        }
    }
    let scale = record
        .samples
        .first()
        .map(|s| 3.0 * (record.meta.gamma - 1.0) * s.internal)
        .unwrap_or(1.0)
        .max(f64::MIN_POSITIVE);
    QPersistence { min_q, argmin_t, relative: min_q / scale, positive: min_q > 0.0 }
}

/// Derivatives of a non-uniformly sampled series by three-point formulas at
/// interior samples: `(t, f', f'')`.
pub fn finite_differences(t: &[f64], f: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for i in 1..t.len().saturating_sub(1) {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        if !(h0 > 0.0 && h1 > 0.0) {
            continue;
        }
        let d1 = (h0 * h0 * f[i + 1] - h1 * h1 * f[i - 1] + (h1 * h1 - h0 * h0) * f[i]) / (h0 * h1 * (h0 + h1));
        let d2 = 2.0 * (h0 * f[i + 1] - (h0 + h1) * f[i] + h1 * f[i - 1]) / (h0 * h1 * (h0 + h1));
        out.push((t[i], d1, d2));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    /// RMS of (difference quotient - column) over RMS of the column.
    pub rms_relative: f64,
    pub samples: usize,
    pub window: (f64, f64),
    pub pass: bool,
}

fn rms_relative(pairs: &[(f64, f64)]) -> f64 {
    let num: f64 = pairs.iter().map(|(fd, c)| (fd - c).powi(2)).sum();
    let den: f64 = pairs.iter().map(|(_, c)| c * c).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Compares difference quotients of the `H` column with `Hp` (first
/// derivative) and `Hpp` (second derivative) on the late log-time window.
pub fn h_consistency(record: &RunRecord, window_fraction: f64, tol: f64) -> (ConsistencyCheck, ConsistencyCheck) {
    let t = record.column(|s| s.t);
    let h = record.column(|s| s.h);
    let window = log_time_window(&t, window_fraction).unwrap_or((0.0, f64::INFINITY));
    let fd = finite_differences(&t, &h);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (k, &(tk, d1, d2)) in fd.iter().enumerate() {
        if tk < window.0 || tk > window.1 {
            continue;
        }
        let s = &record.samples[k + 1];
        first.push((d1, s.hp));
        second.push((d2, s.hpp));
    }
    let mk = |pairs: &[(f64, f64)]| {
        let rms = rms_relative(pairs);
        ConsistencyCheck { rms_relative: rms, samples: pairs.len(), window, pass: !pairs.is_empty() && rms <= tol }
    };
    (mk(&first), mk(&second))
}

/// Worst violation of an inequality `lhs ≤ rhs` along a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    /// `max(lhs - rhs)`; non-positive when the inequality holds everywhere.
    pub max_excess: f64,
    pub at_t: f64,
    /// Excess relative to the largest `|rhs|`.
    pub relative_excess: f64,
    pub pass: bool,
}

fn inequality(record: &RunRecord, tol: f64, f: impl Fn(&Sample) -> (f64, f64)) -> InequalityCheck {
    let mut worst = (f64::NEG_INFINITY, f64::NAN);
    let mut scale: f64 = 0.0;
    for s in &record.samples {
        let (lhs, rhs) = f(s);
        scale = scale.max(rhs.abs()).max(lhs.abs());
        if lhs - rhs > worst.0 {
            worst = (lhs - rhs, s.t);
        }
    }
    let rel = worst.0 / scale.max(f64::MIN_POSITIVE);
    InequalityCheck { max_excess: worst.0, at_t: worst.1, relative_excess: rel, pass: rel <= tol }
}

/// `Λ t + C₀ ≤ H'(t) + 4πν a³` with `Λ = min Q` and `C₀` its value at `t = 0`.
pub fn virial_lower_check(record: &RunRecord, tol: f64) -> InequalityCheck {
    let nu = record.meta.visc.nu();
    let lambda = q_persistence(record).min_q;
    let s0 = record.samples[0];
    let c0 = s0.hp + 4.0 * PI * nu * s0.a.powi(3);
    inequality(record, tol, |s| (lambda * s.t + c0, s.hp + 4.0 * PI * nu * s.a.powi(3)))
}

/// `4πν a³ - 4π M^{1/2} E₀ a ≤ 2 E₀ t + C₁` with `C₁ = H'(0) + 4πν a(0)³`.
pub fn virial_upper_check(record: &RunRecord, tol: f64) -> InequalityCheck {
    let nu = record.meta.visc.nu();
    let s0 = record.samples[0];
    let e0 = s0.e;
    let c1 = s0.hp + 4.0 * PI * nu * s0.a.powi(3);
    let root_m = record.meta.mass.sqrt();
    inequality(record, tol, |s| {
        (4.0 * PI * nu * s.a.powi(3) - 4.0 * PI * root_m * e0 * s.a, 2.0 * e0 * s.t + c1)
    })
}

/// `I(t)/(1+t) - 4πν a³` must not increase (`γ = 4/3`); reports the largest rise.
pub fn virial_i_monotonicity(record: &RunRecord, tol: f64) -> InequalityCheck {
    let nu = record.meta.visc.nu();
    let g = |s: &Sample| {
        let k = 1.0 + s.t;
        (s.h - k * s.hp + k * k * s.e) / k - 4.0 * PI * nu * s.a.powi(3)
    };
    let mut worst = (f64::NEG_INFINITY, f64::NAN);
    let mut scale: f64 = 0.0;
    for w in record.samples.windows(2) {
        let (g0, g1) = (g(&w[0]), g(&w[1]));
        scale = scale.max(g0.abs()).max(g1.abs());
        if g1 - g0 > worst.0 {
            worst = (g1 - g0, w[1].t);
        }
    }
    let rel = worst.0 / scale.max(f64::MIN_POSITIVE);
    InequalityCheck { max_excess: worst.0, at_t: worst.1, relative_excess: rel, pass: rel <= tol }
}

/// Which diagnostics a verdict should contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    ExponentFit,
    EnergyResidual,
    QPersistence,
    VirialLower,
    VirialUpper,
    VirialI,
    HConsistency,
    Holder,
    Integrability,
    DensityPositivity,
}

impl DiagnosticKind {
    pub const ALL: [DiagnosticKind; 10] = [
        DiagnosticKind::ExponentFit,
        DiagnosticKind::EnergyResidual,
        DiagnosticKind::QPersistence,
        DiagnosticKind::VirialLower,
        DiagnosticKind::VirialUpper,
        DiagnosticKind::VirialI,
        DiagnosticKind::HConsistency,
        DiagnosticKind::Holder,
        DiagnosticKind::Integrability,
        DiagnosticKind::DensityPositivity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DiagnosticKind::ExponentFit => "exponent_fit",
            DiagnosticKind::EnergyResidual => "energy_residual",
            DiagnosticKind::QPersistence => "q_persistence",
            DiagnosticKind::VirialLower => "virial_lower",
            DiagnosticKind::VirialUpper => "virial_upper",
            DiagnosticKind::VirialI => "virial_i",
            DiagnosticKind::HConsistency => "h_consistency",
            DiagnosticKind::Holder => "holder",
            DiagnosticKind::Integrability => "integrability",
            DiagnosticKind::DensityPositivity => "density_positivity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictOptions {
    pub window_fraction: f64,
    pub energy_tol: f64,
    pub virial_tol: f64,
    pub h_tol: f64,
}

impl Default for VerdictOptions {
    fn default() -> Self {
        Self { window_fraction: DEFAULT_WINDOW_FRACTION, energy_tol: 1e-2, virial_tol: 1e-3, h_tol: 0.05 }
    }
}

/// Outcome of one requested diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `None` when the diagnostic does not apply or could not be evaluated.
    pub pass: Option<bool>,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub completed: bool,
    pub pass: bool,
    pub diagnostics: std::collections::BTreeMap<String, Outcome>,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("diagnostic records serialize")
}

pub fn verdict(record: &RunRecord, requested: &[DiagnosticKind], opts: &VerdictOptions) -> Verdict {
    let mut diagnostics = std::collections::BTreeMap::new();
    let mut kinds = requested.to_vec();
    kinds.sort();
    kinds.dedup();
    let gamma = record.meta.gamma;
    for kind in kinds {
        let outcome = match kind {
            DiagnosticKind::ExponentFit => match fit_exponent(record, opts.window_fraction) {
                Ok(fit) => Outcome { pass: Some(fit.in_band), detail: json(&fit) },
                Err(e) => Outcome { pass: Some(false), detail: serde_json::json!({ "error": e.to_string() }) },
            },
            DiagnosticKind::EnergyResidual => {
                let res = energy_residual(record);
                let max = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
                let terminal = res.last().copied().unwrap_or(0.0);
                Outcome {
                    pass: Some(terminal.abs() <= opts.energy_tol),
                    detail: serde_json::json!({ "energy_residual_max": max, "terminal": terminal, "tol": opts.energy_tol }),
                }
            }
            DiagnosticKind::QPersistence => {
                let q = q_persistence(record);
                Outcome { pass: Some(q.positive), detail: json(&q) }
            }
            DiagnosticKind::VirialLower => {
                if record.meta.visc.alpha == 0.0 && gamma > 1.2 && gamma < 4.0 / 3.0 && !crate::is_mass_critical(gamma) {
                    let c = virial_lower_check(record, opts.virial_tol);
                    Outcome { pass: Some(c.pass), detail: json(&c) }
                } else {
                    Outcome { pass: None, detail: serde_json::json!({ "skipped": "needs alpha = 0 and gamma in (6/5, 4/3)" }) }
                }
            }
            DiagnosticKind::VirialUpper => {
                if record.meta.e0 > 0.0 && record.meta.visc.alpha == 0.0 {
                    let c = virial_upper_check(record, opts.virial_tol);
                    Outcome { pass: Some(c.pass), detail: json(&c) }
                } else {
                    Outcome { pass: None, detail: serde_json::json!({ "skipped": "needs E0 > 0 and alpha = 0" }) }
                }
            }
            DiagnosticKind::VirialI => {
                if crate::is_mass_critical(gamma) {
                    let c = virial_i_monotonicity(record, opts.virial_tol);
                    Outcome { pass: Some(c.pass), detail: json(&c) }
                } else {
                    Outcome { pass: None, detail: serde_json::json!({ "skipped": "needs gamma = 4/3" }) }
                }
            }
            DiagnosticKind::HConsistency => {
                let (first, second) = h_consistency(record, opts.window_fraction, opts.h_tol);
                Outcome {
                    pass: Some(first.pass && second.pass),
                    detail: serde_json::json!({ "first_derivative": json(&first), "second_derivative": json(&second) }),
                }
            }
            DiagnosticKind::Holder => Outcome {
                pass: Some(record.checks.holder_violations == 0),
                detail: serde_json::json!({
                    "nodes": record.checks.holder_nodes,
                    "violations": record.checks.holder_violations,
                    "worst_ratio": record.checks.holder_worst_ratio,
                }),
            },
            DiagnosticKind::Integrability => {
                let last = record.samples.last().map(|s| s.rho2gamma_r8_accum).unwrap_or(0.0);
                Outcome { pass: Some(last.is_finite()), detail: serde_json::json!({ "rho2gamma_r8_accum": last }) }
            }
            DiagnosticKind::DensityPositivity => {
                let min = record.samples.iter().map(|s| s.min_interior_rho).fold(f64::INFINITY, f64::min);
                Outcome { pass: Some(min > 0.0), detail: serde_json::json!({ "min_interior_rho": min }) }
            }
        };
        diagnostics.insert(kind.name().to_string(), outcome);
    }
    let pass = record.completed && diagnostics.values().all(|o| o.pass != Some(false));
    Verdict { completed: record.completed, pass, diagnostics }
}
