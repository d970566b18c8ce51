//! Embedded Dormand-Prince 5(4) integrator with dense output and
//! sign-change event location.
//!
//! Only what the polytrope solver needs: fixed-size states, a scalar event
//! function, and a stored continuous extension so the solution can be
//! resampled after the fact.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0:e}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances<const N: usize> {
    pub rtol: f64,
    pub atol: [f64; N],
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options<const N: usize> {
    pub tol: Tolerances<N>,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

/// Continuous extension of one accepted step.
#[derive(Debug, Clone)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> Segment<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        let mut y = [0.0; N];
        for i in 0..N {
            y[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
        y
    }
}

/// Result of an integration that may have stopped on an event.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    pub segments: Vec<Segment<N>>,
    pub t_final: f64,
    pub y_final: [f64; N],
    /// Set when the event function changed sign; `t_final` is then the root.
    pub event: bool,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

impl<const N: usize> Trajectory<N> {
    /// Dense evaluation anywhere in `[t_start, t_final]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let idx = self
            .segments
            .partition_point(|s| s.t1() < t)
            .min(self.segments.len() - 1);
        self.segments[idx].eval(t)
    }

    pub fn t_start(&self) -> f64 {
        self.segments[0].t0
    }
}

// Dormand-Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` towards `t_end`.
///
/// If `event` is given, integration stops at the first point where it changes
/// sign from positive to non-positive; the crossing is located by bisection on
/// the dense output to within a few ulps of `t`.
pub fn integrate<const N: usize, F, G>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Dopri5Options<N>,
    event: Option<G>,
) -> Result<Trajectory<N>, OdeError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> f64,
{
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h_init.min(t_end - t0).min(opts.h_max);
    let mut k1 = f(t, &y);
    let mut segments = Vec::new();
    let mut accepted = 0;
    let mut rejected = 0;
    let mut g_old = event.as_ref().map(|g| g(t, &y));

    while t < t_end {
        if accepted + rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            t + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h, &y_new);

        let mut err = 0.0;
        for i in 0..N {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.tol.atol[i] + opts.tol.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::NonFinite(t));
            }
            h *= 0.2;
            rejected += 1;
            continue;
        }

        if err <= 1.0 {
            let mut rcont = [[0.0; N]; 5];
            for i in 0..N {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[0][i] = y[i];
                rcont[1][i] = ydiff;
                rcont[2][i] = bspl;
                rcont[3][i] = ydiff - h * k7[i] - bspl;
                rcont[4][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                        + D7 * k7[i]);
            }
            let seg = Segment { t0: t, h, rcont };
            accepted += 1;

            if let (Some(g), Some(g0)) = (event.as_ref(), g_old) {
                let g1 = g(t + h, &y_new);
                if g0 > 0.0 && g1 <= 0.0 {
                    let (mut lo, mut hi) = (t, t + h);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if g(mid, &seg.eval(mid)) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let t_root = 0.5 * (lo + hi);
                    let y_root = seg.eval(t_root);
                    segments.push(seg);
                    return Ok(Trajectory {
                        segments,
                        t_final: t_root,
                        y_final: y_root,
                        event: true,
                        steps_accepted: accepted,
                        steps_rejected: rejected,
                    });
                }
                g_old = Some(g1);
            }

            segments.push(seg);
            t += h;
            y = y_new;
            k1 = k7;
            if last {
                break;
            }
            let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            h = (h * fac).min(opts.h_max);
        } else {
            rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }

    Ok(Trajectory {
        segments,
        t_final: t,
        y_final: y,
        event: false,
        steps_accepted: accepted,
        steps_rejected: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(tol: f64) -> Dopri5Options<2> {
        Dopri5Options {
            tol: Tolerances { rtol: tol, atol: [tol; 2] },
            h_init: 1e-3,
            h_max: 1.0,
            max_steps: 100_000,
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let traj =
            integrate(f, 0.0, [0.0, 1.0], 10.0, &opts(1e-10), None::<fn(f64, &[f64; 2]) -> f64>)
                .unwrap();
        assert!(!traj.event);
        for k in 0..=200 {
            let t = 10.0 * k as f64 / 200.0;
            let y = traj.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-8, "t={t} y={:?}", y);
            assert!((y[1] - t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn event_locates_first_zero() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let traj = integrate(
            f,
            0.0,
            [1.0, 0.0],
            10.0,
            &opts(1e-11),
            Some(|_t: f64, y: &[f64; 2]| y[0]),
        )
        .unwrap();
        assert!(traj.event);
        assert!((traj.t_final - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn too_many_steps_is_reported() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let mut o = opts(1e-12);
        o.max_steps = 5;
        let res = integrate(f, 0.0, [1.0, 0.0], 100.0, &o, None::<fn(f64, &[f64; 2]) -> f64>);
        assert_eq!(res.unwrap_err(), OdeError::TooManySteps(5));
    }
}
