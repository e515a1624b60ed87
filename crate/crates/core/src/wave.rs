//! The Lorentzian block metric `dv ds + ds dv + u^{-2} ds^2 + g_s`, its
//! closed-form Ricci blocks, assembly with a prescribed null Ricci profile,
//! initial-data extraction, the Killing development, and the rigidity
//! verdict for periodic families.

use crate::elliptic::{poisson_scalar, SolveError};
use crate::grid::{
    integrate, spectral_diff, CovectorField, FieldCurve, GridError, GridField, MetricCurve,
    ScalarCurve, ScalarField, SGrid, SymTensorField, TorusGrid,
};
use crate::riemann::{curvature, j_residual_at, MetricField, MetricOps, RiemannError};
use crate::scale::{extend_periodically_until_zero, LambdaSolution, ScaleData, ScaleError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Riemann(#[from] RiemannError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error("lapse must be positive everywhere (min {0:.3e})")]
    NonPositiveLapse(f64),
    #[error("curve is not gauged: divergence residual {div:.3e}, trace residual {tr:.3e} (tolerance {tol:.3e})")]
    NotGauged { div: f64, tr: f64, tol: f64 },
    #[error("lambda vanishes on the requested samples")]
    LambdaVanishes,
    #[error("component index {0} out of range ({1} components)")]
    BadComponent(usize, usize),
    #[error("Poisson solvability violated: |mean| = {mean:.3e} exceeds 1e-9 * {scale:.3e}")]
    Solvability { mean: f64, scale: f64 },
    #[error("second fundamental form disagrees with the lightlike-parallel one: residual {0:.3e}")]
    NotLightlikeParallel(f64),
    #[error("oracle point too close to the interval ends (sample {0})")]
    OracleBoundary(usize),
    #[error("family is not periodic: defect {0:.3e}")]
    NotPeriodic(f64),
    #[error("Ricci profile is negative somewhere (min {0:.3e}); energy condition fails")]
    EnergyCondition(f64),
}

/// Scale-factor data attached to an assembled metric: the spatial part is
/// `lambda^2 base`, and the coefficient samples let the trace derivative be
/// evaluated without finite-differencing through zeros of `lambda`.
#[derive(Clone, Debug)]
pub struct LambdaData {
    pub lambda: Vec<f64>,
    pub lambda_dot: Vec<f64>,
    pub coefficient: Vec<f64>,
    pub base: MetricCurve,
}

/// The block Lorentzian metric: lapse curve `u_s > 0` and spatial curve
/// `g_s`, both sampled over the same interval; no `v` grid is stored since
/// nothing depends on `v`.
#[derive(Clone, Debug)]
pub struct PPWaveMetric {
    u: ScalarCurve,
    spatial: MetricCurve,
    lambda: Option<LambdaData>,
}

impl PPWaveMetric {
    pub fn new(u: ScalarCurve, spatial: MetricCurve) -> Result<Self, WaveError> {
        if u.sgrid() != spatial.sgrid() || u.grid() != spatial.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let min_u = u
            .samples()
            .iter()
            .map(|f| f.min_value())
            .fold(f64::INFINITY, f64::min);
        if !(min_u > 0.0) {
            return Err(WaveError::NonPositiveLapse(min_u));
        }
        for g in spatial.samples() {
            MetricField::new(g.clone())?;
        }
        Ok(Self {
            u,
            spatial,
            lambda: None,
        })
    }

    pub fn with_lambda(
        u: ScalarCurve,
        spatial: MetricCurve,
        lambda: LambdaData,
    ) -> Result<Self, WaveError> {
        let mut wave = Self::new(u, spatial)?;
        wave.lambda = Some(lambda);
        Ok(wave)
    }

    /// Product metric: unit lapse over a constant spatial metric.
    pub fn product(sgrid: SGrid, g: SymTensorField) -> Result<Self, WaveError> {
        let grid = g.grid();
        let u = FieldCurve::from_fn(sgrid, |_| ScalarField::constant(grid, 1.0))?;
        let spatial = FieldCurve::from_fn_with_derivative(
            sgrid,
            |_| g.clone(),
            |_| SymTensorField::zeros(grid),
        )?;
        Self::new(u, spatial)
    }

    pub fn sgrid(&self) -> SGrid {
        self.u.sgrid()
    }

    pub fn grid(&self) -> TorusGrid {
        self.u.grid()
    }

    pub fn u_curve(&self) -> &ScalarCurve {
        &self.u
    }

    pub fn spatial(&self) -> &MetricCurve {
        &self.spatial
    }

    pub fn lambda_data(&self) -> Option<&LambdaData> {
        self.lambda.as_ref()
    }

    /// Samples of `w = u^{-2}`, the lapse coefficient of the `ds^2` block.
    pub fn w_samples(&self) -> Vec<ScalarField> {
        self.u
            .samples()
            .iter()
            .map(|u| {
                let mut w = u.clone();
                for v in w.data_mut() {
                    *v = 1.0 / (*v * *v);
                }
                w
            })
            .collect()
    }

    /// Leafwise volume root `vol^{1/d}` per sample.
    pub fn leaf_volume_roots(&self) -> Result<Vec<f64>, WaveError> {
        let d = self.grid().dim() as f64;
        self.spatial
            .samples()
            .iter()
            .map(|g| {
                let m = MetricField::new(g.clone())?;
                Ok(m.volume().powf(1.0 / d))
            })
            .collect()
    }
}

/// The nonvanishing Ricci blocks of the block metric in closed form:
/// `ric_ij = ric(g_s)`, `ric_si = (div gdot - d tr gdot)/2` and the profile
/// `rho = Delta(u^{-2})/2 - (d/ds tr gdot)/2 - |gdot|^2/4` (geometer sign of
/// the Laplacian).
#[derive(Clone, Debug)]
pub struct ClosedFormRicci {
    pub spatial: Vec<SymTensorField>,
    pub mixed: Vec<CovectorField>,
    pub rho: ScalarCurve,
}

impl ClosedFormRicci {
    pub fn max_spatial(&self) -> f64 {
        self.spatial.iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }

    pub fn max_mixed(&self) -> f64 {
        self.mixed.iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }
}

pub fn ricci_closed_form(wave: &PPWaveMetric) -> Result<ClosedFormRicci, WaveError> {
    let sgrid = wave.sgrid();
    let m = sgrid.len();
    let gdot = wave.spatial().derivative_samples();
    let w = wave.w_samples();

    let per_sample: Result<Vec<_>, WaveError> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ops = MetricOps::from_tensor(wave.spatial().sample(i).clone())?;
            let ric = curvature(&ops).ricci;
            let mixed_full = j_residual_at(&ops, &gdot[i])?;
            let mixed = CovectorField::from_comps(
                ops.grid(),
                mixed_full.comps().iter().map(|c| c.iter().map(|v| 0.5 * v).collect()).collect(),
            );
            let lb_w = ops.laplace_beltrami(&w[i]);
            let trace = ops.trace(&gdot[i])?;
            let gdot_sq = ops.norm_sq_symtensor(&gdot[i]);
            Ok((ric, mixed, lb_w, trace, gdot_sq))
        })
        .collect();
    let per_sample = per_sample?;

    // d/ds of the trace curve: the scale part analytically via the ODE data,
    // the rest by a 7-point stencil (the profile tolerances are tighter than
    // the curve-level 4th-order budget)
    let trace_curve: Vec<ScalarField> = per_sample.iter().map(|r| r.3.clone()).collect();
    let dtr: Vec<ScalarField> = match wave.lambda_data() {
        Some(data) => {
            let base_tr: Result<Vec<ScalarField>, WaveError> = (0..m)
                .map(|i| {
                    let ops = MetricOps::from_tensor(data.base.sample(i).clone())?;
                    Ok(ops.trace(&data.base.derivative_samples()[i])?)
                })
                .collect();
            let base_tr = base_tr?;
            let fd = crate::interp::stencil_derivative(sgrid, &base_tr, 7);
            let d = wave.grid().dim() as f64;
            (0..m)
                .map(|i| {
                    let lam = data.lambda[i];
                    let ratio = data.lambda_dot[i] / lam;
                    let scale_part = 2.0 * d * (-data.coefficient[i] - ratio * ratio);
                    let mut out = fd[i].clone();
                    for v in out.data_mut() {
                        *v += scale_part;
                    }
                    out
                })
                .collect()
        }
        None => crate::interp::stencil_derivative(sgrid, &trace_curve, 7),
    };

    let mut spatial = Vec::with_capacity(m);
    let mut mixed = Vec::with_capacity(m);
    let mut rho_samples = Vec::with_capacity(m);
    for (i, (ric, mix, lb_w, _, gdot_sq)) in per_sample.into_iter().enumerate() {
        spatial.push(ric);
        mixed.push(mix);
        let mut rho = ScalarField::zeros(wave.grid());
        for idx in 0..wave.grid().len() {
            rho.data_mut()[idx] = -0.5 * lb_w.data()[idx]
                - 0.5 * dtr[i].data()[idx]
                - 0.25 * gdot_sq.data()[idx];
        }
        rho_samples.push(rho);
    }
    Ok(ClosedFormRicci {
        spatial,
        mixed,
        rho: FieldCurve::new(sgrid, rho_samples)?,
    })
}

/// Assembles the pp-wave with prescribed Ricci profile from a gauged
/// unit-volume curve and a scale solution: per `s` the leafwise Poisson
/// equation determines `w = u^{-2}` up to a constant, the constants are
/// chosen smooth in `s` with `min w >= 1`, and the spatial part is
/// `lambda^2 g_s` on the chosen component of the complement of the zeros.
pub fn assemble(
    base: &MetricCurve,
    rho: &ScalarCurve,
    lambda: &LambdaSolution,
    component: usize,
    gauge_tol: f64,
) -> Result<PPWaveMetric, WaveError> {
    let comps = lambda.components();
    if component >= comps.len() {
        return Err(WaveError::BadComponent(component, comps.len()));
    }
    let (lo, hi) = comps[component];
    let base_r = base.restrict(lo, hi)?;
    let rho_r = rho.restrict(lo, hi)?;
    let lam: Vec<f64> = lambda.lambda[lo..=hi].to_vec();
    let lam_dot: Vec<f64> = lambda.lambda_dot[lo..=hi].to_vec();
    let coeff: Vec<f64> = lambda.coefficient[lo..=hi].to_vec();
    if lam.iter().any(|v| *v == 0.0) {
        return Err(WaveError::LambdaVanishes);
    }
    let m = base_r.len();
    let d = base_r.grid().dim() as f64;

    // gauge precondition
    let der = base_r.derivative_samples();
    let mut div_res = 0.0f64;
    let mut tr_res = 0.0f64;
    let ops_all: Result<Vec<MetricOps>, WaveError> = base_r
        .samples()
        .par_iter()
        .map(|g| Ok(MetricOps::from_tensor(g.clone())?))
        .collect();
    let ops_all = ops_all?;
    for (ops, gdot) in ops_all.iter().zip(&der) {
        div_res = div_res.max(ops.divergence(gdot)?.sup_norm());
        tr_res = tr_res.max(ops.trace(gdot)?.sup_norm());
    }
    if div_res > gauge_tol || tr_res > gauge_tol {
        return Err(WaveError::NotGauged {
            div: div_res,
            tr: tr_res,
            tol: gauge_tol,
        });
    }

    // leafwise Poisson solves
    let w_samples: Result<Vec<ScalarField>, WaveError> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ops = &ops_all[i];
            let gdot_sq = ops.norm_sq_symtensor(&der[i]);
            let mut rhs = ScalarField::zeros(base_r.grid());
            for idx in 0..base_r.grid().len() {
                rhs.data_mut()[idx] = rho_r.sample(i).data()[idx] - d * coeff[i]
                    + 0.25 * gdot_sq.data()[idx];
            }
            let mean = ops.mean_scalar(&rhs);
            // compare against the size of the terms before cancellation
            let scale = rho_r.sample(i).sup_norm()
                .max(d * coeff[i].abs())
                .max(0.25 * gdot_sq.sup_norm())
                .max(1.0);
            if mean.abs() > 1e-9 * scale {
                return Err(WaveError::Solvability {
                    mean: mean.abs(),
                    scale,
                });
            }
            // geometer Laplacian: Delta w / 2 = rhs on the spatial metric
            // lambda^2 g, so div grad w = -2 lambda^2 rhs on g itself
            let rhs_scaled = rhs.scaled(-2.0 * lam[i] * lam[i]);
            Ok(poisson_scalar(ops, &rhs_scaled, 1e-12)?)
        })
        .collect();
    let mut w_samples = w_samples?;

    // positivity shift: a single constant for the whole family. Sample-wise
    // shifts smoothed by convolution leave kinks at the grid scale which
    // finite differences of u then amplify; the constant is the smooth
    // family of constants that every downstream derivative tolerates.
    let shift = w_samples
        .iter()
        .map(|w| 1.0 - w.min_value())
        .fold(0.0f64, f64::max);
    for w in w_samples.iter_mut() {
        for v in w.data_mut() {
            *v += shift;
        }
    }

    let u_samples: Vec<ScalarField> = w_samples
        .iter()
        .map(|w| {
            let mut u = w.clone();
            for v in u.data_mut() {
                *v = 1.0 / v.sqrt();
            }
            u
        })
        .collect();

    let spatial_samples: Vec<SymTensorField> = (0..m)
        .map(|i| base_r.sample(i).scaled(lam[i] * lam[i]))
        .collect();
    let spatial_der: Vec<SymTensorField> = (0..m)
        .map(|i| {
            base_r.sample(i)
                .scaled(2.0 * lam[i] * lam_dot[i])
                .axpy(lam[i] * lam[i], &der[i])
        })
        .collect();

    let sgrid = base_r.sgrid();
    let u_curve = FieldCurve::new(sgrid, u_samples)?;
    let spatial = FieldCurve::with_derivative(sgrid, spatial_samples, Some(spatial_der))?;
    PPWaveMetric::with_lambda(
        u_curve,
        spatial,
        LambdaData {
            lambda: lam,
            lambda_dot: lam_dot,
            coefficient: coeff,
            base: base_r,
        },
    )
}

/// Second fundamental form of the initial-data hypersurface, in block
/// components over `I x Q`.
#[derive(Clone, Debug)]
pub struct SecondFundamentalForm {
    pub ss: ScalarCurve,
    pub si: FieldCurve<CovectorField>,
    pub ij: FieldCurve<SymTensorField>,
}

impl SecondFundamentalForm {
    pub fn axpy_norm(&self, other: &SecondFundamentalForm) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.ss.len() {
            worst = worst.max(
                self.ss.sample(i).axpy(-1.0, other.ss.sample(i)).sup_norm(),
            );
            worst = worst.max(
                self.si.sample(i).axpy(-1.0, other.si.sample(i)).sup_norm(),
            );
            worst = worst.max(
                self.ij.sample(i).axpy(-1.0, other.ij.sample(i)).sup_norm(),
            );
        }
        worst
    }
}

/// Initial data induced on the hypersurface `{v = 0}`: the Riemannian metric
/// `gamma = u^{-2} ds^2 + g_s` (stored through `u` and `g`), the second
/// fundamental form, and the lightlike-parallel field `U = -u^2 d/ds`.
#[derive(Clone, Debug)]
pub struct InitialDataSet {
    pub u: ScalarCurve,
    pub g: MetricCurve,
    pub k: SecondFundamentalForm,
}

/// `k` from `gamma` and `u` via the lightlike-parallel condition
/// `nabla_X U = |U| k(X,.)#`: contracting the block Christoffel symbols of
/// `gamma` with `U = -u^2 d/ds` gives
/// `k_ij = -u gdot_ij / 2`, `k_si = u d_i(u^{-2}) / 2`,
/// `k_ss = u d_s(u^{-2}) / 2`.
pub fn compute_k(u: &ScalarCurve, g: &MetricCurve) -> Result<SecondFundamentalForm, WaveError> {
    let sgrid = u.sgrid();
    let grid = u.grid();
    let m = sgrid.len();
    let w: Vec<ScalarField> = u
        .samples()
        .iter()
        .map(|f| {
            let mut w = f.clone();
            for v in w.data_mut() {
                *v = 1.0 / (*v * *v);
            }
            w
        })
        .collect();
    let wdot = crate::grid::fd4_derivative(&w, sgrid.ds());
    let gdot = g.derivative_samples();

    let mut ss = Vec::with_capacity(m);
    let mut si = Vec::with_capacity(m);
    let mut ij = Vec::with_capacity(m);
    for i in 0..m {
        let uf = u.sample(i);
        let mut kss = ScalarField::zeros(grid);
        for idx in 0..grid.len() {
            kss.data_mut()[idx] = 0.5 * uf.data()[idx] * wdot[i].data()[idx];
        }
        ss.push(kss);
        let mut comps = Vec::with_capacity(grid.dim());
        for a in 0..grid.dim() {
            let dw = spectral_diff(&w[i], a)?;
            let c: Vec<f64> = (0..grid.len())
                .map(|idx| 0.5 * uf.data()[idx] * dw.data()[idx])
                .collect();
            comps.push(c);
        }
        si.push(CovectorField::from_comps(grid, comps));
        let mut kij = gdot[i].scaled(-0.5);
        for c in kij.comps_mut() {
            for (v, uval) in c.iter_mut().zip(uf.data()) {
                *v *= uval;
            }
        }
        ij.push(kij);
    }
    Ok(SecondFundamentalForm {
        ss: FieldCurve::new(sgrid, ss)?,
        si: FieldCurve::new(sgrid, si)?,
        ij: FieldCurve::new(sgrid, ij)?,
    })
}

/// Restricts the block metric to the hypersurface `{v = 0}`.
pub fn extract_ids(wave: &PPWaveMetric) -> Result<InitialDataSet, WaveError> {
    let k = compute_k(wave.u_curve(), wave.spatial())?;
    Ok(InitialDataSet {
        u: wave.u_curve().clone(),
        g: wave.spatial().clone(),
        k,
    })
}

impl InitialDataSet {
    /// Residual of `du(X) = k(U, X)` for spatial `X`, the consistency
    /// identity of lightlike-parallel data.
    pub fn parallel_identity_residual(&self) -> Result<f64, WaveError> {
        let grid = self.u.grid();
        let mut worst = 0.0f64;
        for i in 0..self.u.len() {
            let uf = self.u.sample(i);
            for a in 0..grid.dim() {
                let du = spectral_diff(uf, a)?;
                for idx in 0..grid.len() {
                    // k(U, d_a) = -u^2 k_sa
                    let lhs = du.data()[idx];
                    let rhs = -uf.data()[idx] * uf.data()[idx] * self.k.si.sample(i).comp(a)[idx];
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Rebuilds the block metric from initial data with lightlike-parallel
/// `U = -u^2 d/ds`: for such data `gamma(U, .) = -ds`, so the Killing
/// development returns exactly the block form with the stored `u` and `g`.
pub fn killing_development(ids: &InitialDataSet, tol: f64) -> Result<PPWaveMetric, WaveError> {
    let rebuilt = compute_k(&ids.u, &ids.g)?;
    let res = ids.k.axpy_norm(&rebuilt);
    if res > tol {
        return Err(WaveError::NotLightlikeParallel(res));
    }
    PPWaveMetric::new(ids.u.clone(), ids.g.clone())
}

/// Verdict of the pointwise sign check of the Ricci profile; all the listed
/// energy conditions coincide for null Ricci curvature.
#[derive(Clone, Copy, Debug)]
pub struct EnergyVerdict {
    pub satisfied: bool,
    pub min_rho: f64,
}

pub fn energy_condition(rho: &ScalarCurve) -> EnergyVerdict {
    let min_rho = rho
        .samples()
        .iter()
        .map(|f| f.min_value())
        .fold(f64::INFINITY, f64::min);
    EnergyVerdict {
        satisfied: min_rho >= -1e-12,
        min_rho,
    }
}

/// Outcome of the rigidity analysis of a periodic family with nonnegative
/// profile.
#[derive(Clone, Debug)]
pub enum RigidityOutcome {
    /// `P + Sigma/4` vanishes: the family is a product up to gauge; the
    /// mapping-torus product metric is emitted.
    Rigid {
        product: PPWaveMetric,
        coefficient_sup: f64,
        sigma_sup: f64,
        trace_sup: f64,
    },
    /// The coefficient does not vanish: every solution with a critical point
    /// develops a zero in finite parameter; the location is the certificate.
    Obstructed {
        coefficient_sup: f64,
        zero_location: f64,
        lambda_slope_at_zero: f64,
    },
}

/// Checks periodicity `g_{s+l} = phi^* g_s` (with `phi` a torus translation)
/// and `rho >= 0`, then classifies: the family is rigid precisely when
/// `P + Sigma/4` vanishes along the period.
pub fn rigidity_check(
    curve: &MetricCurve,
    rho: &ScalarCurve,
    translation: &[f64],
    scale_data: &ScaleData,
    tol: f64,
) -> Result<RigidityOutcome, WaveError> {
    // periodicity: last sample against the translated first sample
    let grid = curve.grid();
    let mut pts = Vec::with_capacity(grid.len());
    let mut x = [0.0f64; crate::grid::MAX_DIM];
    for idx in 0..grid.len() {
        grid.point(idx, &mut x);
        let mut p = x;
        for a in 0..grid.dim() {
            p[a] += translation[a];
        }
        pts.push(p);
    }
    let eval = crate::spectral::PointEvaluator::new(grid, &pts);
    let mut defect = 0.0f64;
    let first = curve.sample(0);
    let last = curve.sample(curve.len() - 1);
    for c in 0..grid.sym_len() {
        let coeffs = crate::spectral::Coeffs::from_real(grid, &first.comps()[c]);
        let moved = eval.eval(&coeffs);
        for (idx, v) in moved.iter().enumerate() {
            defect = defect.max((last.comps()[c][idx] - v).abs());
        }
    }
    {
        let coeffs = crate::spectral::Coeffs::from_real(grid, rho.sample(0).data());
        let moved = eval.eval(&coeffs);
        for (idx, v) in moved.iter().enumerate() {
            defect = defect.max((rho.sample(rho.len() - 1).data()[idx] - v).abs());
        }
    }
    if defect > 1e-8 {
        return Err(WaveError::NotPeriodic(defect));
    }
    let energy = energy_condition(rho);
    if !energy.satisfied {
        return Err(WaveError::EnergyCondition(energy.min_rho));
    }

    let coeff = scale_data.coefficient();
    let coefficient_sup = coeff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if coefficient_sup < tol {
        let sigma_sup = scale_data.sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let der = curve.derivative_samples();
        let mut trace_sup = 0.0f64;
        for (g, gdot) in curve.samples().iter().zip(&der) {
            let ops = MetricOps::from_tensor(g.clone())?;
            trace_sup = trace_sup.max(ops.trace(gdot)?.sup_norm());
        }
        let product = PPWaveMetric::product(curve.sgrid(), curve.sample(0).clone())?;
        return Ok(RigidityOutcome::Rigid {
            product,
            coefficient_sup,
            sigma_sup,
            trace_sup,
        });
    }
    // certificate: lambda with a critical point hits zero under periodic
    // extension
    let sol = crate::scale::solve_lambda(scale_data, scale_data.sgrid.start(), 1.0, 0.0)?;
    let zero = sol
        .zeros
        .first()
        .copied()
        .or_else(|| extend_periodically_until_zero(&sol, 10000.0))
        .expect("positive nonzero coefficient forces a zero");
    Ok(RigidityOutcome::Obstructed {
        coefficient_sup,
        zero_location: zero,
        lambda_slope_at_zero: if zero <= sol.sgrid.stop() {
            sol.slope_at(zero)
        } else {
            f64::NAN
        },
    })
}

/// Measured-vs-target profile comparison, the prescribed-curvature check.
pub fn rho_profile_residual(
    wave: &PPWaveMetric,
    target: &ScalarCurve,
) -> Result<f64, WaveError> {
    let cf = ricci_closed_form(wave)?;
    let mut worst = 0.0f64;
    for (a, b) in cf.rho.samples().iter().zip(target.samples()) {
        worst = worst.max(a.axpy(-1.0, b).sup_norm());
    }
    Ok(worst)
}

/// Volume-form density of `gamma = u^{-2} ds^2 + g_s` relative to
/// `ds dvol_g`: `sqrt(det gamma) = u^{-1} sqrt(det g)`.
pub fn leaf_density(u: &ScalarField, g: &MetricField) -> ScalarField {
    let mut out = g.sqrt_det().clone();
    for (v, uval) in out.data_mut().iter_mut().zip(u.data()) {
        *v /= uval;
    }
    out
}

/// Integral over one leaf with the weight `u^{-1} dvol_g`.
pub fn leaf_weighted_integral(
    f: &ScalarField,
    u: &ScalarField,
    g: &MetricField,
) -> Result<f64, WaveError> {
    Ok(integrate(f, &leaf_density(u, g))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorField;
    use crate::scale::{compute_scale_data, solve_lambda, ScaleData};
    use std::f64::consts::PI;

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    fn exp_base(sg: SGrid) -> MetricCurve {
        FieldCurve::from_fn_with_derivative(
            sg,
            |s| SymTensorField::constant(grid2(), &[(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()]),
            |s| {
                SymTensorField::constant(
                    grid2(),
                    &[2.0 * (2.0 * s).exp(), 0.0, 0.0, -2.0 * (-2.0 * s).exp()],
                )
            },
        )
        .unwrap()
    }

    fn zero_rho(sg: SGrid) -> ScalarCurve {
        FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 0.0)).unwrap()
    }

    #[test]
    fn assemble_constant_curve_gives_product() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let base = FieldCurve::from_fn_with_derivative(
            sg,
            |_| SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]),
            |_| SymTensorField::zeros(grid2()),
        )
        .unwrap();
        let rho = zero_rho(sg);
        let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
        let lam = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        let wave = assemble(&base, &rho, &lam, 0, 1e-8).unwrap();
        for u in wave.u_curve().samples() {
            assert!(u.axpy(-1.0, &ScalarField::constant(grid2(), 1.0)).sup_norm() < 1e-12);
        }
        for (g, b) in wave.spatial().samples().iter().zip(base.samples()) {
            assert!(g.axpy(-1.0, b).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn assemble_vacuum_cosine_scaling() {
        // rhs cancels pointwise: 0 - (P + Sigma/4) + |gdot|^2/4 = -2 + 2
        let sg = SGrid::new(-1.2, 1.2, 201).unwrap();
        let base = exp_base(sg);
        let rho = zero_rho(sg);
        let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
        let lam = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        let wave = assemble(&base, &rho, &lam, 0, 1e-8).unwrap();
        for u in wave.u_curve().samples() {
            assert!(u.axpy(-1.0, &ScalarField::constant(grid2(), 1.0)).sup_norm() < 1e-10);
        }
        // spatial part is cos^2(s) times the base
        for (i, g) in wave.spatial().samples().iter().enumerate() {
            let s: f64 = sg.s(i);
            let expect = base.sample(i).scaled(s.cos() * s.cos());
            assert!(g.axpy(-1.0, &expect).sup_norm() < 2e-8);
        }
    }

    #[test]
    fn assemble_prescribed_profile_matches() {
        let sg = SGrid::new(-1.0, 1.0, 201).unwrap();
        let base = exp_base(sg);
        let rho = FieldCurve::from_fn(sg, |_| {
            ScalarField::from_fn(grid2(), |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin())
        })
        .unwrap();
        let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
        let lam = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        let wave = assemble(&base, &rho, &lam, 0, 1e-8).unwrap();
        assert!(rho_profile_residual(&wave, &rho).unwrap() < 1e-7);
    }

    #[test]
    fn assemble_rejects_ungauged_curve() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        // pure-gradient motion violates the divergence gauge
        let flat = SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]);
        let ops = crate::riemann::MetricOps::from_tensor(flat.clone()).unwrap();
        let hess = ops
            .hessian(&ScalarField::from_fn(grid2(), |x| 0.1 * (2.0 * PI * x[0]).sin()))
            .unwrap();
        let base = FieldCurve::with_derivative(
            sg,
            vec![flat; sg.len()],
            Some(vec![hess; sg.len()]),
        )
        .unwrap();
        let rho = zero_rho(sg);
        let data = ScaleData {
            sgrid: sg,
            p: vec![0.0; sg.len()],
            sigma: vec![0.0; sg.len()],
            dim: 2,
        };
        let lam = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            assemble(&base, &rho, &lam, 0, 1e-8),
            Err(WaveError::NotGauged { .. })
        ));
    }

    #[test]
    fn closed_form_blocks_product_metric() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let wave =
            PPWaveMetric::product(sg, SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap();
        let cf = ricci_closed_form(&wave).unwrap();
        assert!(cf.max_spatial() < 1e-12);
        assert!(cf.max_mixed() < 1e-12);
        for rho in cf.rho.samples() {
            assert!(rho.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn closed_form_exponential_profile() {
        let sg = SGrid::new(-0.5, 0.5, 101).unwrap();
        let u = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 1.0)).unwrap();
        let wave = PPWaveMetric::new(u, exp_base(sg)).unwrap();
        let cf = ricci_closed_form(&wave).unwrap();
        assert!(cf.max_spatial() < 1e-11);
        assert!(cf.max_mixed() < 1e-11);
        for rho in cf.rho.samples() {
            assert!(
                rho.axpy(-1.0, &ScalarField::constant(grid2(), -2.0)).sup_norm() < 1e-10
            );
        }
    }

    #[test]
    fn extract_and_k_closed_forms() {
        let sg = SGrid::new(-0.5, 0.5, 101).unwrap();
        let u = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 1.0)).unwrap();
        let wave = PPWaveMetric::new(u, exp_base(sg)).unwrap();
        let ids = extract_ids(&wave).unwrap();
        // spatial k = -gdot/2, mixed and ss blocks vanish for constant lapse
        for i in [0usize, 50, 100] {
            let s: f64 = sg.s(i);
            let expect = SymTensorField::constant(
                grid2(),
                &[-(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()],
            );
            assert!(ids.k.ij.sample(i).axpy(-1.0, &expect).sup_norm() < 1e-10);
            assert!(ids.k.si.sample(i).sup_norm() < 1e-12);
            assert!(ids.k.ss.sample(i).sup_norm() < 1e-12);
        }
        assert!(ids.parallel_identity_residual().unwrap() < 1e-8);
    }

    #[test]
    fn constant_data_has_zero_k() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let wave =
            PPWaveMetric::product(sg, SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap();
        let ids = extract_ids(&wave).unwrap();
        assert!(ids.k.ij.sample(10).sup_norm() < 1e-13);
        assert!(ids.k.si.sample(10).sup_norm() < 1e-13);
        assert!(ids.k.ss.sample(10).sup_norm() < 1e-13);
    }

    #[test]
    fn killing_development_roundtrip_is_bitwise() {
        let sg = SGrid::new(-0.5, 0.5, 101).unwrap();
        let u = FieldCurve::from_fn(sg, |s| {
            ScalarField::from_fn(grid2(), move |x| {
                1.0 + 0.05 * (2.0 * PI * x[0]).sin() * (1.0 + 0.2 * s)
            })
        })
        .unwrap();
        let wave = PPWaveMetric::new(u, exp_base(sg)).unwrap();
        let ids = extract_ids(&wave).unwrap();
        let back = killing_development(&ids, 1e-10).unwrap();
        for i in 0..sg.len() {
            assert_eq!(back.u_curve().sample(i), wave.u_curve().sample(i));
            assert_eq!(back.spatial().sample(i), wave.spatial().sample(i));
        }
    }

    #[test]
    fn killing_development_rejects_wrong_k() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let wave =
            PPWaveMetric::product(sg, SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap();
        let mut ids = extract_ids(&wave).unwrap();
        let bad = ids
            .k
            .ij
            .sample(0)
            .axpy(1.0, &SymTensorField::constant(grid2(), &[0.1, 0.0, 0.0, 0.1]));
        let mut samples = ids.k.ij.samples().to_vec();
        samples[0] = bad;
        ids.k.ij = FieldCurve::new(sg, samples).unwrap();
        assert!(matches!(
            killing_development(&ids, 1e-10),
            Err(WaveError::NotLightlikeParallel(_))
        ));
    }

    #[test]
    fn energy_condition_sign_check() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let good = zero_rho(sg);
        assert!(energy_condition(&good).satisfied);
        let bad = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), -1.0)).unwrap();
        let verdict = energy_condition(&bad);
        assert!(!verdict.satisfied);
        assert!((verdict.min_rho + 1.0).abs() < 1e-14);
    }

    fn periodic_curve(eps: f64) -> (SGrid, MetricCurve, ScalarCurve) {
        let sg = SGrid::new(0.0, 2.0 * PI, 201).unwrap();
        let curve = FieldCurve::from_fn_with_derivative(
            sg,
            move |s| {
                let f = eps * s.sin();
                SymTensorField::constant(
                    grid2(),
                    &[(2.0 * f).exp(), 0.0, 0.0, (-2.0 * f).exp()],
                )
            },
            move |s| {
                let f = eps * s.sin();
                let fd = eps * s.cos();
                SymTensorField::constant(
                    grid2(),
                    &[
                        2.0 * fd * (2.0 * f).exp(),
                        0.0,
                        0.0,
                        -2.0 * fd * (-2.0 * f).exp(),
                    ],
                )
            },
        )
        .unwrap();
        let rho = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 0.0)).unwrap();
        (sg, curve, rho)
    }

    #[test]
    fn rigidity_constant_family_is_rigid() {
        let (sg, _, rho) = periodic_curve(0.0);
        let curve = FieldCurve::from_fn_with_derivative(
            sg,
            |_| SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]),
            |_| SymTensorField::zeros(grid2()),
        )
        .unwrap();
        let data = compute_scale_data(&curve, &rho, 1e-10).unwrap();
        let out = rigidity_check(&curve, &rho, &[0.0, 0.0], &data, 1e-9).unwrap();
        match out {
            RigidityOutcome::Rigid {
                product,
                sigma_sup,
                trace_sup,
                ..
            } => {
                assert!(sigma_sup < 1e-10);
                assert!(trace_sup < 1e-10);
                let cf = ricci_closed_form(&product).unwrap();
                assert!(cf.max_spatial() < 1e-11);
                for rho in cf.rho.samples() {
                    assert!(rho.sup_norm() < 1e-11);
                }
            }
            _ => panic!("expected a rigid verdict"),
        }
    }

    #[test]
    fn rigidity_deformed_family_is_obstructed() {
        let (_, curve, rho) = periodic_curve(0.1);
        let data = compute_scale_data(&curve, &rho, 1e-10).unwrap();
        // Sigma = 8 eps^2 cos^2 s
        for (i, s) in data.sgrid.values().iter().enumerate() {
            let expect = 8.0 * 0.01 * s.cos() * s.cos();
            assert!((data.sigma[i] - expect).abs() < 1e-8);
        }
        let out = rigidity_check(&curve, &rho, &[0.0, 0.0], &data, 1e-9).unwrap();
        match out {
            RigidityOutcome::Obstructed { zero_location, .. } => {
                assert!(zero_location.is_finite());
                assert!(zero_location > 0.0);
            }
            _ => panic!("expected an obstructed verdict"),
        }
    }

    #[test]
    fn rigidity_rejects_nonperiodic_curve() {
        let sg = SGrid::new(0.0, 2.0 * PI, 201).unwrap();
        let curve = exp_base(sg);
        let rho = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 0.0)).unwrap();
        let data = ScaleData {
            sgrid: sg,
            p: vec![0.0; sg.len()],
            sigma: vec![8.0; sg.len()],
            dim: 2,
        };
        assert!(matches!(
            rigidity_check(&curve, &rho, &[0.0, 0.0], &data, 1e-9),
            Err(WaveError::NotPeriodic(_))
        ));
    }

    #[test]
    fn rigidity_rejects_negative_profile() {
        let (sg, curve, _) = periodic_curve(0.1);
        let rho = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), -1.0)).unwrap();
        let data = compute_scale_data(&curve, &rho, 1e-10).unwrap();
        assert!(matches!(
            rigidity_check(&curve, &rho, &[0.0, 0.0], &data, 1e-9),
            Err(WaveError::EnergyCondition(_))
        ));
    }

    #[test]
    fn scaling_reparametrization_transforms_the_profile() {
        // pulling back through (v, s) -> (v/alpha, alpha s + beta) multiplies
        // the measured profile by alpha^2 and resamples the curves
        let alpha = 2.0;
        let sg = SGrid::new(-0.5, 0.5, 101).unwrap();
        let u = FieldCurve::from_fn(sg, |_| ScalarField::constant(grid2(), 1.0)).unwrap();
        let wave = PPWaveMetric::new(u, exp_base(sg)).unwrap();
        // reparametrized data on [-0.25, 0.25]: u_new = u(alpha s)/alpha,
        // g_new = g(alpha s)
        let sg2 = SGrid::new(-0.25, 0.25, 101).unwrap();
        let u2 = FieldCurve::from_fn(sg2, |_| {
            ScalarField::constant(grid2(), 1.0 / alpha)
        })
        .unwrap();
        let spatial2 = FieldCurve::from_fn_with_derivative(
            sg2,
            |s| {
                SymTensorField::constant(
                    grid2(),
                    &[
                        (2.0 * alpha * s).exp(),
                        0.0,
                        0.0,
                        (-2.0 * alpha * s).exp(),
                    ],
                )
            },
            |s| {
                SymTensorField::constant(
                    grid2(),
                    &[
                        2.0 * alpha * (2.0 * alpha * s).exp(),
                        0.0,
                        0.0,
                        -2.0 * alpha * (-2.0 * alpha * s).exp(),
                    ],
                )
            },
        )
        .unwrap();
        let wave2 = PPWaveMetric::new(u2, spatial2).unwrap();
        let cf = ricci_closed_form(&wave).unwrap();
        let cf2 = ricci_closed_form(&wave2).unwrap();
        // rho = -2 everywhere upstairs, alpha^2 rho downstairs
        let mut worst = 0.0f64;
        for (a, b) in cf.rho.samples().iter().zip(cf2.rho.samples()) {
            worst = worst.max(
                b.axpy(-(alpha * alpha), a).sup_norm(),
            );
        }
        assert!(worst < 1e-6, "scaling residual {worst}");
        let _ = VectorField::zeros(grid2());
    }
}
