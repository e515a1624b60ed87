//! The scale functionals P and Sigma, the second-order ODE for the leafwise
//! volume root, zero detection, comparison bounds and the invariance check.
//!
//! With `q = (P + Sigma/4)/(n-1)` the volume root obeys `lambdaddot = -q lambda`,
//! a linear equation whose nonzero solutions have only simple zeros.

use crate::gauge::{pullback_scalar_curve, pullback_metric_curve, DiffeoFamily, GaugeError};
use crate::grid::{GridField, MetricCurve, ScalarCurve, SGrid};
use crate::interp;
use crate::riemann::MetricOps;
use crate::split::{tt_part, SplitError};
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Riemann(#[from] crate::riemann::RiemannError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error("initial data (0, 0) only generates the zero solution")]
    ZeroInitialData,
    #[error("anchor s = {0} outside the sampled interval")]
    AnchorOutOfRange(f64),
    #[error("supplied bound {name} = {value} is not a valid {side} bound of the coefficient (extremum {extremum})")]
    InvalidBound {
        name: &'static str,
        value: f64,
        side: &'static str,
        extremum: f64,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampled scale functionals of a curve `(g_s, rho_s)`.
#[derive(Clone, Debug)]
pub struct ScaleData {
    pub sgrid: SGrid,
    /// mean of rho_s over the leaf
    pub p: Vec<f64>,
    /// mean of |sigma_s|^2, sigma the TT part of gdot_s
    pub sigma: Vec<f64>,
    /// leaf dimension n - 1
    pub dim: usize,
}

impl ScaleData {
    /// ODE coefficient `q_s = (P_s + Sigma_s/4) / (n-1)`.
    pub fn coefficient(&self) -> Vec<f64> {
        self.p
            .iter()
            .zip(&self.sigma)
            .map(|(p, s)| (p + 0.25 * s) / self.dim as f64)
            .collect()
    }
}

/// Means `P_s` of the Ricci profile and `Sigma_s` of the squared TT motion.
pub fn compute_scale_data(
    curve: &MetricCurve,
    rho: &ScalarCurve,
    tol: f64,
) -> Result<ScaleData, ScaleError> {
    let der = curve.derivative_samples();
    let rows: Result<Vec<(f64, f64)>, ScaleError> = (0..curve.len())
        .into_par_iter()
        .map(|i| {
            let ops = MetricOps::from_tensor(curve.sample(i).clone())?;
            let p = ops.mean_scalar(rho.sample(i));
            let sigma_tensor = tt_part(&ops, &der[i], tol)?;
            let sigma = ops.mean_scalar(&ops.norm_sq_symtensor(&sigma_tensor));
            Ok((p, sigma))
        })
        .collect();
    let rows = rows?;
    Ok(ScaleData {
        sgrid: curve.sgrid(),
        p: rows.iter().map(|r| r.0).collect(),
        sigma: rows.iter().map(|r| r.1).collect(),
        dim: curve.grid().dim(),
    })
}

/// A solved scale factor: samples of `lambda` and its derivative, the ODE
/// coefficient, and the located zeros.
#[derive(Clone, Debug)]
pub struct LambdaSolution {
    pub sgrid: SGrid,
    pub lambda: Vec<f64>,
    pub lambda_dot: Vec<f64>,
    pub coefficient: Vec<f64>,
    pub zeros: Vec<f64>,
    pub anchor_s: f64,
}

fn rk4_step(q: impl Fn(f64) -> f64, s: f64, h: f64, y: [f64; 2]) -> [f64; 2] {
    let f = |s: f64, y: [f64; 2]| [y[1], -q(s) * y[0]];
    let k1 = f(s, y);
    let k2 = f(
        s + h / 2.0,
        [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]],
    );
    let k3 = f(
        s + h / 2.0,
        [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]],
    );
    let k4 = f(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates `lambdaddot = -q lambda` from `(lambda0, lambda0_dot)` at
/// `s_star` over the sampled interval; RK4 with cubic interpolation of the
/// coefficient, zeros located by sign change and bisection of the Hermite
/// interpolant.
pub fn solve_lambda(
    data: &ScaleData,
    s_star: f64,
    lambda0: f64,
    lambda0_dot: f64,
) -> Result<LambdaSolution, ScaleError> {
    if lambda0 == 0.0 && lambda0_dot == 0.0 {
        return Err(ScaleError::ZeroInitialData);
    }
    let sgrid = data.sgrid;
    if s_star < sgrid.start() - 1e-12 || s_star > sgrid.stop() + 1e-12 {
        return Err(ScaleError::AnchorOutOfRange(s_star));
    }
    let coeff = data.coefficient();
    let q = |s: f64| interp::interp_values(sgrid, &coeff, s, 4.min(sgrid.len()));

    let m = sgrid.len();
    let mut lambda = vec![0.0; m];
    let mut lambda_dot = vec![0.0; m];
    // nearest sample left of (or at) the anchor
    let base = ((s_star - sgrid.start()) / sgrid.ds()).floor().max(0.0) as usize;
    let base = base.min(m - 1);
    // partial first steps from the anchor to the two neighboring samples
    let mut right = [lambda0, lambda0_dot];
    let mut s = s_star;
    if (sgrid.s(base) - s_star).abs() < 1e-13 {
        lambda[base] = lambda0;
        lambda_dot[base] = lambda0_dot;
    } else {
        // step back to the base sample
        let y = rk4_step(&q, s_star, sgrid.s(base) - s_star, [lambda0, lambda0_dot]);
        lambda[base] = y[0];
        lambda_dot[base] = y[1];
    }
    // march right from the anchor
    for i in base + 1..m {
        let target = sgrid.s(i);
        right = rk4_step(&q, s, target - s, right);
        s = target;
        lambda[i] = right[0];
        lambda_dot[i] = right[1];
    }
    // march left from the base sample
    for i in (0..base).rev() {
        let y = rk4_step(&q, sgrid.s(i + 1), -sgrid.ds(), [lambda[i + 1], lambda_dot[i + 1]]);
        lambda[i] = y[0];
        lambda_dot[i] = y[1];
    }

    let zeros = locate_zeros(sgrid, &lambda, &lambda_dot);
    Ok(LambdaSolution {
        sgrid,
        lambda,
        lambda_dot,
        coefficient: coeff,
        zeros,
        anchor_s: s_star,
    })
}

/// Cubic Hermite value between two samples.
fn hermite(s0: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64, s: f64) -> f64 {
    let t = (s - s0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + d0 * h * (t3 - 2.0 * t2 + t)
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + d1 * h * (t3 - t2)
}

fn locate_zeros(sgrid: SGrid, lambda: &[f64], lambda_dot: &[f64]) -> Vec<f64> {
    let mut zeros = Vec::new();
    for i in 0..lambda.len() - 1 {
        let (a, b) = (lambda[i], lambda[i + 1]);
        if a == 0.0 {
            zeros.push(sgrid.s(i));
            continue;
        }
        if a * b < 0.0 {
            let s0 = sgrid.s(i);
            let h = sgrid.ds();
            let f = |s: f64| hermite(s0, h, a, lambda_dot[i], b, lambda_dot[i + 1], s);
            let (mut lo, mut hi) = (s0, s0 + h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            zeros.push(0.5 * (lo + hi));
        }
    }
    if let Some(last) = lambda.last() {
        if *last == 0.0 {
            zeros.push(sgrid.stop());
        }
    }
    zeros
}

impl LambdaSolution {
    /// Derivative sample interpolated at a zero; simple zeros have it nonzero.
    pub fn slope_at(&self, s: f64) -> f64 {
        interp::interp_values(self.sgrid, &self.lambda_dot, s, 4.min(self.sgrid.len()))
    }

    pub fn value_at(&self, s: f64) -> f64 {
        interp::interp_values(self.sgrid, &self.lambda, s, 4.min(self.sgrid.len()))
    }

    /// Sample index ranges `[lo, hi]` of the connected components of the
    /// complement of the zero set, ordered left to right.
    pub fn components(&self) -> Vec<(usize, usize)> {
        let mut cuts = vec![self.sgrid.start()];
        cuts.extend(self.zeros.iter().copied());
        cuts.push(self.sgrid.stop());
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b - a < self.sgrid.ds() {
                continue;
            }
            // strictly interior samples, keeping clear of the zeros
            let lo = ((a - self.sgrid.start()) / self.sgrid.ds()).ceil() as usize;
            let hi = ((b - self.sgrid.start()) / self.sgrid.ds()).floor() as usize;
            let mut lo = lo.min(self.sgrid.len() - 1);
            let mut hi = hi.min(self.sgrid.len() - 1);
            while lo <= hi && self.lambda[lo].abs() < 1e-9 {
                lo += 1;
            }
            while hi > lo && self.lambda[hi].abs() < 1e-9 {
                hi -= 1;
            }
            if hi > lo {
                out.push((lo, hi));
            }
        }
        out
    }

    /// Residual of the ODE on the interior samples, via 4th-order finite
    /// differences of the sampled derivative.
    pub fn ode_residual(&self) -> f64 {
        let m = self.sgrid.len();
        let ds = self.sgrid.ds();
        let mut worst = 0.0f64;
        for i in 2..m - 2 {
            let ddot = (-self.lambda_dot[i + 2] + 8.0 * self.lambda_dot[i + 1]
                - 8.0 * self.lambda_dot[i - 1]
                + self.lambda_dot[i - 2])
                / (12.0 * ds);
            worst = worst.max((ddot + self.coefficient[i] * self.lambda[i]).abs());
        }
        worst
    }
}

/// The two-solution basis with initial data `(1,0)` and `(0,1)` at `s_star`.
pub fn solution_basis(
    data: &ScaleData,
    s_star: f64,
) -> Result<(LambdaSolution, LambdaSolution), ScaleError> {
    Ok((
        solve_lambda(data, s_star, 1.0, 0.0)?,
        solve_lambda(data, s_star, 0.0, 1.0)?,
    ))
}

/// Outcome of the zero-spacing comparison checks.
#[derive(Clone, Debug)]
pub struct ZeroSpacingReport {
    /// minimal spacing of consecutive zeros, if two or more exist
    pub min_spacing: Option<f64>,
    /// maximal zero-free component length
    pub max_component: f64,
    pub spacing_bound_ok: bool,
    pub component_bound_ok: bool,
    /// with a zero lower bound on the full line: a zero must exist unless the
    /// coefficient vanishes identically
    pub existence_ok: bool,
    pub offending_pair: Option<(f64, f64)>,
}

/// Checks the comparison bounds: consecutive zeros at least `pi/sqrt(C)`
/// apart when `C > 0` bounds the coefficient above, components at most
/// `pi/sqrt(c)` long when `c > 0` bounds it below; for `c = 0` on periodic
/// full-line data a zero exists unless the coefficient is identically zero.
pub fn check_zero_spacing(
    sol: &LambdaSolution,
    upper: f64,
    lower: f64,
    periodic_full_line: bool,
) -> Result<ZeroSpacingReport, ScaleError> {
    let qmax = sol.coefficient.iter().cloned().fold(f64::MIN, f64::max);
    let qmin = sol.coefficient.iter().cloned().fold(f64::MAX, f64::min);
    if upper < qmax - 1e-12 {
        return Err(ScaleError::InvalidBound {
            name: "C",
            value: upper,
            side: "upper",
            extremum: qmax,
        });
    }
    if lower > qmin + 1e-12 {
        return Err(ScaleError::InvalidBound {
            name: "c",
            value: lower,
            side: "lower",
            extremum: qmin,
        });
    }

    let mut min_spacing = None;
    let mut offending_pair = None;
    let mut spacing_bound_ok = true;
    if sol.zeros.len() >= 2 {
        let mut ms = f64::INFINITY;
        for w in sol.zeros.windows(2) {
            let gap = w[1] - w[0];
            if gap < ms {
                ms = gap;
            }
            if upper > 0.0 && gap < std::f64::consts::PI / upper.sqrt() - 1e-9 {
                spacing_bound_ok = false;
                offending_pair = Some((w[0], w[1]));
            }
        }
        min_spacing = Some(ms);
    }
    if upper <= 0.0 && sol.zeros.len() > 1 {
        // nonpositive coefficient admits at most one zero
        spacing_bound_ok = false;
        offending_pair = Some((sol.zeros[0], sol.zeros[1]));
    }

    // components of the sampled interval
    let mut cuts = vec![sol.sgrid.start()];
    cuts.extend(sol.zeros.iter().copied());
    cuts.push(sol.sgrid.stop());
    let mut max_component = 0.0f64;
    for w in cuts.windows(2) {
        max_component = max_component.max(w[1] - w[0]);
    }
    let component_bound_ok = if lower > 0.0 {
        // interior components are bounded; boundary components are truncated
        // by the interval and can only be shorter
        cuts.windows(2)
            .all(|w| w[1] - w[0] <= std::f64::consts::PI / lower.sqrt() + 1e-9)
    } else {
        true
    };

    let coeff_zero = sol.coefficient.iter().all(|q| q.abs() < 1e-12);
    let existence_ok = if periodic_full_line && lower >= 0.0 {
        coeff_zero || !sol.zeros.is_empty() || {
            // extend periodically until a zero (or give up)
            extend_periodically_until_zero(sol, 400.0).is_some()
        }
    } else {
        true
    };

    Ok(ZeroSpacingReport {
        min_spacing,
        max_component,
        spacing_bound_ok,
        component_bound_ok,
        existence_ok,
        offending_pair,
    })
}

/// Continues the integration with the coefficient extended periodically past
/// the right end; returns the first zero location if one appears before
/// `s_max` beyond the interval start.
pub fn extend_periodically_until_zero(sol: &LambdaSolution, s_max: f64) -> Option<f64> {
    let sgrid = sol.sgrid;
    let period = sgrid.stop() - sgrid.start();
    let q = |s: f64| {
        let wrapped = sgrid.start() + (s - sgrid.start()).rem_euclid(period);
        interp::interp_values(sgrid, &sol.coefficient, wrapped, 4.min(sgrid.len()))
    };
    let h = sgrid.ds();
    let mut s = sgrid.stop();
    let m = sgrid.len();
    let mut y = [sol.lambda[m - 1], sol.lambda_dot[m - 1]];
    if y[0] == 0.0 {
        return Some(s);
    }
    let sign = y[0].signum();
    while s < sgrid.start() + s_max {
        let next = rk4_step(&q, s, h, y);
        if next[0].signum() != sign || next[0] == 0.0 {
            // bisect the Hermite interpolant on the crossing step
            let f = |t: f64| hermite(s, h, y[0], y[1], next[0], next[1], t);
            let (mut lo, mut hi) = (s, s + h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        y = next;
        s += h;
    }
    None
}

/// Residuals of the invariance of `(P, Sigma)` under pulling the curve data
/// back along a family and rescaling with a positive function of `s`.
#[derive(Clone, Copy, Debug)]
pub struct InvarianceReport {
    pub p_residual: f64,
    pub sigma_residual: f64,
}

pub fn check_invariance(
    curve: &MetricCurve,
    rho: &ScalarCurve,
    family: &DiffeoFamily,
    scaling: &[f64],
    tol: f64,
) -> Result<InvarianceReport, ScaleError> {
    assert_eq!(scaling.len(), curve.len());
    let base = compute_scale_data(curve, rho, tol)?;
    let pulled_g = pullback_metric_curve(family, curve)?;
    let pulled_rho = pullback_scalar_curve(family, rho)?;
    // scaled curve c_s phi^* g_s with derivative cdot phi^*g + c d/ds(phi^*g)
    let cdot = {
        let vals = scaling.to_vec();
        let sg = curve.sgrid();
        let mut out = vec![0.0; vals.len()];
        let ds = sg.ds();
        for i in 0..vals.len() {
            out[i] = if i == 0 {
                (-25.0 * vals[0] + 48.0 * vals[1] - 36.0 * vals[2] + 16.0 * vals[3]
                    - 3.0 * vals[4])
                    / (12.0 * ds)
            } else if i == 1 {
                (-3.0 * vals[0] - 10.0 * vals[1] + 18.0 * vals[2] - 6.0 * vals[3] + vals[4])
                    / (12.0 * ds)
            } else if i == vals.len() - 2 {
                let m = vals.len();
                -(-3.0 * vals[m - 1] - 10.0 * vals[m - 2] + 18.0 * vals[m - 3]
                    - 6.0 * vals[m - 4]
                    + vals[m - 5])
                    / (12.0 * ds)
            } else if i == vals.len() - 1 {
                let m = vals.len();
                -(-25.0 * vals[m - 1] + 48.0 * vals[m - 2] - 36.0 * vals[m - 3]
                    + 16.0 * vals[m - 4]
                    - 3.0 * vals[m - 5])
                    / (12.0 * ds)
            } else {
                (vals[i - 2] - 8.0 * vals[i - 1] + 8.0 * vals[i + 1] - vals[i + 2]) / (12.0 * ds)
            };
        }
        out
    };
    let pulled_der = pulled_g.derivative_samples();
    let scaled_samples: Vec<_> = (0..curve.len())
        .map(|i| pulled_g.sample(i).scaled(scaling[i]))
        .collect();
    let scaled_der: Vec<_> = (0..curve.len())
        .map(|i| {
            pulled_der[i]
                .scaled(scaling[i])
                .axpy(cdot[i], pulled_g.sample(i))
        })
        .collect();
    let scaled = MetricCurve::with_derivative(curve.sgrid(), scaled_samples, Some(scaled_der))?;
    let transformed = compute_scale_data(&scaled, &pulled_rho, tol)?;
    let p_residual = base
        .p
        .iter()
        .zip(&transformed.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let sigma_residual = base
        .sigma
        .iter()
        .zip(&transformed.sigma)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(InvarianceReport {
        p_residual,
        sigma_residual,
    })
}

/// Writes `(s, lambda, lambda_dot, P, Sigma)` rows for plotting.
pub fn write_series_csv(
    path: &std::path::Path,
    sol: &LambdaSolution,
    data: &ScaleData,
) -> Result<(), ScaleError> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "s,lambda,lambda_dot,P,Sigma")?;
    for i in 0..sol.sgrid.len() {
        writeln!(
            file,
            "{},{},{},{},{}",
            sol.sgrid.s(i),
            sol.lambda[i],
            sol.lambda_dot[i],
            data.p[i],
            data.sigma[i]
        )?;
    }
    Ok(())
}
