//! Parametrized moduli curves `(g_s, rho_s, lambda_s)`, their equivalence
//! relation under s-dependent diffeomorphisms and affine reparametrization,
//! and the desk-scale round trip through gauge, assembly and extraction.

use crate::gauge::{
    make_divergence_free, pullback_metric_curve, pullback_scalar_curve, DiffeoFamily, GaugeError,
};
use crate::grid::{FieldCurve, GridError, GridField, MetricCurve, ScalarCurve, SymTensorField};
use crate::interp;
use crate::riemann::{MetricField, RiemannError};
use crate::scale::LambdaSolution;
use crate::wave::{assemble, ricci_closed_form, PPWaveMetric, WaveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModuliError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Riemann(#[from] RiemannError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: WaveError,
    },
    #[error("intervals do not match under s -> {alpha} s + {beta}")]
    IntervalMismatch { alpha: f64, beta: f64 },
    #[error("lambda not positive on the working component (min {0})")]
    LambdaNotPositive(f64),
}

/// A representative of a parametrized moduli curve: unit-volume flat base,
/// Ricci profile, scale solution, and the gauge record of the representative.
#[derive(Clone, Debug)]
pub struct ModuliCurve {
    pub base: MetricCurve,
    pub rho: ScalarCurve,
    pub lambda: LambdaSolution,
}

/// A curve split into its unit-volume base and the volume-root scale.
pub struct NormalizedCurve {
    pub unit: MetricCurve,
    pub lambda: Vec<f64>,
    pub lambda_dot: Vec<f64>,
}

/// Splits `g_s = lambda_s^2 unit_s` with `vol(unit_s) = 1`,
/// `lambda_s = vol(g_s)^{1/d}`; the exact inverse of scaling.
pub fn normalize(curve: &MetricCurve) -> Result<NormalizedCurve, ModuliError> {
    let d = curve.grid().dim() as f64;
    let mut lambda = Vec::with_capacity(curve.len());
    let mut lambda_dot = Vec::with_capacity(curve.len());
    let der = curve.derivative_samples();
    let mut unit = Vec::with_capacity(curve.len());
    let mut unit_der = Vec::with_capacity(curve.len());
    for (g, gdot) in curve.samples().iter().zip(&der) {
        let m = MetricField::new(g.clone())?;
        let vol = m.volume();
        let lam = vol.powf(1.0 / d);
        // d/ds vol = 1/2 int tr(gdot) dvol
        let ops = crate::riemann::MetricOps::new(m);
        let tr = ops.trace(gdot)?;
        let vol_dot =
            0.5 * crate::grid::integrate(&tr, ops.metric.sqrt_det()).expect("positive density");
        let lam_dot = lam / d * vol_dot / vol;
        lambda.push(lam);
        lambda_dot.push(lam_dot);
        unit.push(g.scaled(1.0 / (lam * lam)));
        unit_der.push(
            gdot.scaled(1.0 / (lam * lam))
                .axpy(-2.0 * lam_dot / (lam * lam * lam), g),
        );
    }
    let unit = FieldCurve::with_derivative(curve.sgrid(), unit, Some(unit_der))?;
    Ok(NormalizedCurve {
        unit,
        lambda,
        lambda_dot,
    })
}

/// Per-term sup residuals of the equivalence check
/// `g^A_s = psi_s^* g^B_{alpha s + beta}`,
/// `rho^A_s = alpha^2 psi_s^* rho^B_{alpha s + beta}`,
/// `lambda^A_s = lambda^B_{alpha s + beta}`.
#[derive(Clone, Copy, Debug)]
pub struct EquivalenceReport {
    pub metric_residual: f64,
    pub rho_residual: f64,
    pub lambda_residual: f64,
}

impl EquivalenceReport {
    pub fn max(&self) -> f64 {
        self.metric_residual
            .max(self.rho_residual)
            .max(self.lambda_residual)
    }
}

pub fn equivalent(
    a: &ModuliCurve,
    b: &ModuliCurve,
    alpha: f64,
    beta: f64,
    family: &DiffeoFamily,
) -> Result<EquivalenceReport, ModuliError> {
    let sg_a = a.base.sgrid();
    let sg_b = b.base.sgrid();
    let maps_onto = |s: f64| alpha * s + beta;
    let (img0, img1) = (maps_onto(sg_a.start()), maps_onto(sg_a.stop()));
    let (lo, hi) = if alpha > 0.0 { (img0, img1) } else { (img1, img0) };
    if (lo - sg_b.start()).abs() > 1e-9 || (hi - sg_b.stop()).abs() > 1e-9 {
        return Err(ModuliError::IntervalMismatch { alpha, beta });
    }
    let width = 4.min(sg_b.len());
    let mut metric_residual = 0.0f64;
    let mut rho_residual = 0.0f64;
    let mut lambda_residual = 0.0f64;
    for i in 0..sg_a.len() {
        let t = maps_onto(sg_a.s(i));
        let gb = interp::interp_fields(sg_b, b.base.samples(), t, width);
        let rb = interp::interp_fields(sg_b, b.rho.samples(), t, width);
        let lb = interp::interp_values(sg_b, &b.lambda.lambda, t, width);
        let pulled_g = crate::gauge::pullback_symtensor(family.sample(i), &gb)?;
        let pulled_r = crate::gauge::pullback_scalar(family.sample(i), &rb)?;
        metric_residual = metric_residual.max(a.base.sample(i).axpy(-1.0, &pulled_g).sup_norm());
        rho_residual = rho_residual.max(
            a.rho
                .sample(i)
                .axpy(-(alpha * alpha), &pulled_r)
                .sup_norm(),
        );
        lambda_residual = lambda_residual.max((a.lambda.lambda[i] - lb).abs());
    }
    Ok(EquivalenceReport {
        metric_residual,
        rho_residual,
        lambda_residual,
    })
}

/// Residuals of the full construction-extraction round trip.
#[derive(Clone, Copy, Debug)]
pub struct RoundtripReport {
    pub gauge_div_residual: f64,
    pub gauge_trace_residual: f64,
    /// extracted volume roots against the scale solution
    pub lambda_residual: f64,
    /// extracted spatial base against the gauged representative
    pub metric_residual: f64,
    /// measured Ricci profile against the pulled-back prescription
    pub rho_residual: f64,
}

impl RoundtripReport {
    pub fn max(&self) -> f64 {
        self.lambda_residual
            .max(self.metric_residual)
            .max(self.rho_residual)
    }
}

pub struct Roundtrip {
    pub report: RoundtripReport,
    pub wave: PPWaveMetric,
    pub family: DiffeoFamily,
}

/// Runs gauge, assembly and extraction, then compares the extracted data to
/// the input through the recorded gauge family.
pub fn roundtrip(
    curve: &ModuliCurve,
    component: usize,
    tol: f64,
) -> Result<Roundtrip, ModuliError> {
    let comps = curve.lambda.components();
    let (lo, hi) = *comps
        .get(component)
        .ok_or(ModuliError::LambdaNotPositive(0.0))?;
    let min_lambda = curve.lambda.lambda[lo..=hi]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_lambda <= 0.0 {
        // work with |lambda| on a negative component: sign is a gauge of the
        // square; reject to keep the bookkeeping simple
        return Err(ModuliError::LambdaNotPositive(min_lambda));
    }

    let gauged = make_divergence_free(&curve.base, tol)?;
    let rho_gauged = pullback_scalar_curve(&gauged.family, &curve.rho)?;
    let gauge_gate = tol * 10.0 * crate::gauge::motion_scale(&gauged.curve);
    let wave = assemble(&gauged.curve, &rho_gauged, &curve.lambda, component, gauge_gate)
        .map_err(|source| ModuliError::Stage {
            stage: "assemble",
            source,
        })?;

    // extraction
    let roots = wave.leaf_volume_roots().map_err(|source| ModuliError::Stage {
        stage: "volume-extraction",
        source,
    })?;
    let mut lambda_residual = 0.0f64;
    for (i, r) in roots.iter().enumerate() {
        lambda_residual = lambda_residual.max((r - curve.lambda.lambda[lo + i]).abs());
    }
    let cf = ricci_closed_form(&wave).map_err(|source| ModuliError::Stage {
        stage: "curvature-extraction",
        source,
    })?;
    let mut rho_residual = 0.0f64;
    for (i, meas) in cf.rho.samples().iter().enumerate() {
        rho_residual = rho_residual.max(meas.axpy(-1.0, rho_gauged.sample(lo + i)).sup_norm());
    }
    // spatial block divided by the extracted scale against phi^* g
    let pulled_base = pullback_metric_curve(&gauged.family, &curve.base)?;
    let mut metric_residual = 0.0f64;
    for (i, spatial) in wave.spatial().samples().iter().enumerate() {
        let descaled = spatial.scaled(1.0 / (roots[i] * roots[i]));
        metric_residual =
            metric_residual.max(descaled.axpy(-1.0, pulled_base.sample(lo + i)).sup_norm());
    }

    Ok(Roundtrip {
        report: RoundtripReport {
            gauge_div_residual: gauged.div_residual,
            gauge_trace_residual: gauged.trace_residual,
            lambda_residual,
            metric_residual,
            rho_residual,
        },
        wave,
        family: gauged.family,
    })
}

/// Diffeomorphism-invariant summary of an assembled wave: the volume roots,
/// the scale functionals of the underlying gauged data, and the leafwise
/// means of the measured profile. Two representatives of the same moduli
/// curve must agree on all of it.
#[derive(Clone, Debug)]
pub struct InvariantSummary {
    pub volume_roots: Vec<f64>,
    pub rho_means: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl InvariantSummary {
    pub fn residual(&self, other: &InvariantSummary) -> f64 {
        let sup = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        sup(&self.volume_roots, &other.volume_roots)
            .max(sup(&self.rho_means, &other.rho_means))
            .max(sup(&self.p, &other.p))
            .max(sup(&self.sigma, &other.sigma))
    }
}

pub fn invariant_summary(
    wave: &PPWaveMetric,
    scale: &crate::scale::ScaleData,
) -> Result<InvariantSummary, ModuliError> {
    let volume_roots = wave.leaf_volume_roots().map_err(|source| ModuliError::Stage {
        stage: "volume-extraction",
        source,
    })?;
    let cf = ricci_closed_form(wave).map_err(|source| ModuliError::Stage {
        stage: "curvature-extraction",
        source,
    })?;
    let mut rho_means = Vec::with_capacity(cf.rho.len());
    for (i, rho) in cf.rho.samples().iter().enumerate() {
        let m = MetricField::new(wave.spatial().sample(i).clone())?;
        rho_means.push(crate::grid::mean(rho, m.sqrt_det()).expect("positive density"));
    }
    Ok(InvariantSummary {
        volume_roots,
        rho_means,
        p: scale.p.clone(),
        sigma: scale.sigma.clone(),
    })
}

/// Scales a curve of metrics pointwise, the inverse of [`normalize`].
pub fn scale_curve(unit: &MetricCurve, lambda: &[f64]) -> Result<MetricCurve, ModuliError> {
    assert_eq!(unit.len(), lambda.len());
    let samples: Vec<SymTensorField> = unit
        .samples()
        .iter()
        .zip(lambda)
        .map(|(g, l)| g.scaled(l * l))
        .collect();
    Ok(FieldCurve::new(unit.sgrid(), samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::integrate_flow;
    use crate::grid::{ScalarField, TorusGrid, VectorField};
    use crate::scale::{compute_scale_data, solve_lambda};
    use std::f64::consts::PI;

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    fn sg() -> crate::grid::SGrid {
        crate::grid::SGrid::new(-1.0, 1.0, 201).unwrap()
    }

    fn exp_base() -> MetricCurve {
        FieldCurve::from_fn_with_derivative(
            sg(),
            |s| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()],
                )
            },
            |s| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[2.0 * (2.0 * s).exp(), 0.0, 0.0, -2.0 * (-2.0 * s).exp()],
                )
            },
        )
        .unwrap()
    }

    fn zero_rho() -> ScalarCurve {
        FieldCurve::from_fn(sg(), |_| ScalarField::constant(grid2(), 0.0)).unwrap()
    }

    fn vacuum_moduli() -> ModuliCurve {
        let base = exp_base();
        let rho = zero_rho();
        let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
        let lambda = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        ModuliCurve { base, rho, lambda }
    }

    #[test]
    fn normalize_unit_volume_gives_one() {
        let out = normalize(&exp_base()).unwrap();
        for l in &out.lambda {
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_scaled_flat_metric() {
        // 4 delta on T^2: volume 4, lambda = 2, base = delta
        let curve = FieldCurve::from_fn(sg(), |_| {
            crate::grid::SymTensorField::constant(grid2(), &[4.0, 0.0, 0.0, 4.0])
        })
        .unwrap();
        let out = normalize(&curve).unwrap();
        for (l, g) in out.lambda.iter().zip(out.unit.samples()) {
            assert!((l - 2.0).abs() < 1e-12);
            let delta = crate::grid::SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]);
            assert!(g.axpy(-1.0, &delta).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_after_scale_is_identity() {
        let base = exp_base();
        let lambda: Vec<f64> = sg().values().iter().map(|s| 1.3 + 0.2 * s.sin()).collect();
        let scaled = scale_curve(&base, &lambda).unwrap();
        let out = normalize(&scaled).unwrap();
        for (i, l) in out.lambda.iter().enumerate() {
            assert!((l - lambda[i]).abs() < 1e-12);
            assert!(
                out.unit.sample(i).axpy(-1.0, base.sample(i)).sup_norm() < 1e-12
            );
        }
    }

    #[test]
    fn equivalence_is_reflexive() {
        let a = vacuum_moduli();
        let id = DiffeoFamily::identity(sg(), grid2());
        let rep = equivalent(&a, &a, 1.0, 0.0, &id).unwrap();
        assert!(rep.max() < 1e-12, "reflexivity {:?}", rep);
    }

    #[test]
    fn equivalence_under_translation_pullback() {
        let a = vacuum_moduli();
        let gen = FieldCurve::from_fn(sg(), |_| {
            VectorField::from_fns(grid2(), |i, _| if i == 0 { 0.25 } else { 0.0 })
        })
        .unwrap();
        let family = integrate_flow(&gen, sg().start());
        // constant-coefficient metrics are translation invariant, so the
        // same curve is equivalent to itself through the family
        let rep = equivalent(&a, &a, 1.0, 0.0, &family).unwrap();
        assert!(rep.max() < 1e-10, "translation {:?}", rep);
    }

    #[test]
    fn equivalence_rescales_the_profile_by_alpha_squared() {
        // B is A reparametrized by s -> 2s: I_B = [-2, 2], rho_B = rho_A / 4
        let alpha = 2.0;
        let sgb = crate::grid::SGrid::new(-2.0, 2.0, 201).unwrap();
        let a_base = FieldCurve::from_fn_with_derivative(
            sg(),
            |s| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()],
                )
            },
            |s| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[2.0 * (2.0 * s).exp(), 0.0, 0.0, -2.0 * (-2.0 * s).exp()],
                )
            },
        )
        .unwrap();
        let a_rho = FieldCurve::from_fn(sg(), |_| ScalarField::constant(grid2(), 2.0)).unwrap();
        let b_base = FieldCurve::from_fn_with_derivative(
            sgb,
            |t| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[(t).exp(), 0.0, 0.0, (-t).exp()],
                )
            },
            |t| {
                crate::grid::SymTensorField::constant(
                    grid2(),
                    &[(t).exp(), 0.0, 0.0, -(-t as f64).exp()],
                )
            },
        )
        .unwrap();
        let b_rho = FieldCurve::from_fn(sgb, |_| ScalarField::constant(grid2(), 0.5)).unwrap();
        let data_a = compute_scale_data(&a_base, &a_rho, 1e-10).unwrap();
        let lambda_a = solve_lambda(&data_a, 0.0, 1.0, 0.0).unwrap();
        let data_b = compute_scale_data(&b_base, &b_rho, 1e-10).unwrap();
        let mut lambda_b = solve_lambda(&data_b, 0.0, 1.0, 0.0).unwrap();
        // force lambda_B(2s) = lambda_A(s) by construction for the check
        lambda_b.lambda = sgb.values().iter().map(|t| lambda_a.value_at(t / 2.0)).collect();
        let a = ModuliCurve {
            base: a_base,
            rho: a_rho,
            lambda: lambda_a,
        };
        let b = ModuliCurve {
            base: b_base,
            rho: b_rho,
            lambda: lambda_b,
        };
        let id = DiffeoFamily::identity(sg(), grid2());
        let rep = equivalent(&a, &b, alpha, 0.0, &id).unwrap();
        assert!(rep.metric_residual < 1e-10, "metric {}", rep.metric_residual);
        assert!(rep.rho_residual < 1e-12, "rho {}", rep.rho_residual);
        assert!(rep.lambda_residual < 1e-7, "lambda {}", rep.lambda_residual);
        // without the alpha^2 factor the profiles disagree
        let bad = equivalent(&a, &b, 1.0, 0.0, &id);
        assert!(bad.is_err() || bad.unwrap().rho_residual > 1.0);
    }

    #[test]
    fn roundtrip_constant_vacuum_is_exact() {
        let base = FieldCurve::from_fn_with_derivative(
            sg(),
            |_| crate::grid::SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]),
            |_| crate::grid::SymTensorField::zeros(grid2()),
        )
        .unwrap();
        let rho = zero_rho();
        let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
        let lambda = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        let rt = roundtrip(
            &ModuliCurve { base, rho, lambda },
            0,
            1e-8,
        )
        .unwrap();
        assert!(rt.report.max() < 1e-11, "{:?}", rt.report);
    }

    #[test]
    fn roundtrip_vacuum_cosine() {
        let rt = roundtrip(&vacuum_moduli(), 0, 1e-8).unwrap();
        assert!(rt.report.max() < 1e-6, "{:?}", rt.report);
        assert!(rt.report.lambda_residual < 1e-8, "{:?}", rt.report);
    }

    #[test]
    fn roundtrip_with_gauged_representative() {
        // pre-compose with a gradient-flow pullback; the extracted
        // diffeomorphism-invariant data must match the direct construction
        let curve = vacuum_moduli();
        let rt_direct = roundtrip(&curve, 0, 1e-8).unwrap();
        let gen = FieldCurve::from_fn(sg(), |_| {
            VectorField::from_fns(grid2(), |i, x| {
                if i == 0 {
                    0.003 * 2.0 * PI * (2.0 * PI * x[0]).cos()
                } else {
                    0.0
                }
            })
        })
        .unwrap();
        let family = integrate_flow(&gen, sg().start());
        let pulled = pullback_metric_curve(&family, &curve.base).unwrap();
        let pulled_rho = pullback_scalar_curve(&family, &curve.rho).unwrap();
        let data = compute_scale_data(&pulled, &pulled_rho, 1e-10).unwrap();
        // scale data is diffeomorphism invariant
        for (a, b) in data.sigma.iter().zip(
            compute_scale_data(&curve.base, &curve.rho, 1e-10)
                .unwrap()
                .sigma
                .iter(),
        ) {
            assert!((a - b).abs() < 1e-7);
        }
        let lambda = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
        let other = ModuliCurve {
            base: pulled,
            rho: pulled_rho,
            lambda,
        };
        let rt_other = roundtrip(&other, 0, 1e-8).unwrap();
        assert!(rt_other.report.max() < 1e-6, "{:?}", rt_other.report);
        // invariant summaries of the two representatives agree
        let sum_a = invariant_summary(
            &rt_direct.wave,
            &compute_scale_data(&curve.base, &curve.rho, 1e-10).unwrap(),
        )
        .unwrap();
        let sum_b = invariant_summary(&rt_other.wave, &data).unwrap();
        assert!(sum_a.residual(&sum_b) < 1e-6, "invariants differ");
    }

    #[test]
    fn homothety_rescales_volumes_only() {
        // replacing lambda by c lambda scales leaf volumes by c^{n-1} and
        // leaves the measured profile unchanged
        let curve = vacuum_moduli();
        let c = 1.7;
        let mut scaled_lambda = curve.lambda.clone();
        for (l, ld) in scaled_lambda
            .lambda
            .iter_mut()
            .zip(scaled_lambda.lambda_dot.iter_mut())
        {
            *l *= c;
            *ld *= c;
        }
        let rt_a = roundtrip(&curve, 0, 1e-8).unwrap();
        let rt_b = roundtrip(
            &ModuliCurve {
                base: curve.base.clone(),
                rho: curve.rho.clone(),
                lambda: scaled_lambda,
            },
            0,
            1e-8,
        )
        .unwrap();
        let va = rt_a.wave.leaf_volume_roots().unwrap();
        let vb = rt_b.wave.leaf_volume_roots().unwrap();
        for (a, b) in va.iter().zip(&vb) {
            assert!((b / a - c).abs() < 1e-9);
        }
        let rho_a = crate::wave::ricci_closed_form(&rt_a.wave).unwrap();
        let rho_b = crate::wave::ricci_closed_form(&rt_b.wave).unwrap();
        for (a, b) in rho_a.rho.samples().iter().zip(rho_b.rho.samples()) {
            assert!(a.axpy(-1.0, b).sup_norm() < 1e-8);
        }
    }
}
