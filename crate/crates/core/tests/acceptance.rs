//! Acceptance suite: every criterion runs at desk scale (T^2, n = 32,
//! m = 201 samples, 64-bit floats) and prints one pass/fail line with the
//! measured residual and its pinned tolerance.

use num_complex::Complex64;
use ppwave_core::gauge::{
    change_hypersurface, geodesic_gauge, integrate_flow, pullback_metric_curve,
    pullback_scalar_curve,
};
use ppwave_core::grid::{
    FieldCurve, GridField, MetricCurve, ScalarCurve, ScalarField, SGrid, SymTensorField,
    TorusGrid, VectorField,
};
use ppwave_core::moduli::{invariant_summary, roundtrip, ModuliCurve};
use ppwave_core::oracle::{
    curvature_vanishing_check, ricci_blocks, ricci_fd_oracle, spread_points, OraclePoint,
};
use ppwave_core::riemann::MetricOps;
use ppwave_core::scale::{
    check_invariance, check_zero_spacing, compute_scale_data, extend_periodically_until_zero,
    solve_lambda, ScaleData,
};
use ppwave_core::spinor::{gronwall_series, lichnerowicz_identity, nabla_sup_norm, transport, IdsGeometry};
use ppwave_core::split::{decompose, diagnostics, pairwise_inner_products, split_j_solution};
use ppwave_core::wave::{
    assemble, extract_ids, ricci_closed_form, rigidity_check, rho_profile_residual,
    PPWaveMetric, RigidityOutcome,
};
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

const N: usize = 32;
const M: usize = 201;

fn grid() -> TorusGrid {
    TorusGrid::new(2, N).unwrap()
}

fn gate(criterion: &str, name: &str, residual: f64, tol: f64) {
    let verdict = if residual <= tol { "PASS" } else { "FAIL" };
    println!("{verdict} {criterion} {name}: residual {residual:.3e} (tolerance {tol:.1e})");
    assert!(
        residual <= tol,
        "{criterion} {name}: {residual:.3e} > {tol:.1e}"
    );
}

fn exp_base(sg: SGrid) -> MetricCurve {
    FieldCurve::from_fn_with_derivative(
        sg,
        |s| SymTensorField::constant(grid(), &[(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()]),
        |s| {
            SymTensorField::constant(
                grid(),
                &[2.0 * (2.0 * s).exp(), 0.0, 0.0, -2.0 * (-2.0 * s).exp()],
            )
        },
    )
    .unwrap()
}

fn const_rho(sg: SGrid, value: f64) -> ScalarCurve {
    FieldCurve::from_fn(sg, move |_| ScalarField::constant(grid(), value)).unwrap()
}

fn sine_rho(sg: SGrid) -> ScalarCurve {
    FieldCurve::from_fn(sg, |_| {
        ScalarField::from_fn(grid(), |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin())
    })
    .unwrap()
}

fn assembled(sg: SGrid, rho: &ScalarCurve) -> PPWaveMetric {
    let base = exp_base(sg);
    let data = compute_scale_data(&base, rho, 1e-10).unwrap();
    let lambda = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
    assemble(&base, rho, &lambda, 0, 1e-7).unwrap()
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn criterion_01_curvature_table_reproduction() {
    let sg = SGrid::new(-1.2, 1.2, M).unwrap();
    let product =
        PPWaveMetric::product(sg, SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]))
            .unwrap();
    let exp_wave = PPWaveMetric::new(
        FieldCurve::from_fn(sg, |_| ScalarField::constant(grid(), 1.0)).unwrap(),
        exp_base(sg),
    )
    .unwrap();
    let vacuum = assembled(sg, &const_rho(sg, 0.0));
    let prescribed = assembled(sg, &sine_rho(sg));
    let resliced = {
        let f = FieldCurve::from_fn(sg, |_| {
            ScalarField::from_fn(grid(), |x| 0.001 * (2.0 * PI * x[0]).sin())
        })
        .unwrap();
        change_hypersurface(&exp_wave, &f).unwrap().wave
    };

    let mut closed_vs_fd = 0.0f64;
    let mut null_blocks = 0.0f64;
    for (name, wave) in [
        ("product", &product),
        ("exponential", &exp_wave),
        ("vacuum-cosine", &vacuum),
        ("prescribed-rho", &prescribed),
        ("resliced", &resliced),
    ] {
        let cf = ricci_closed_form(wave).unwrap();
        let points = spread_points(wave, 3, 16);
        let fd = ricci_fd_oracle(wave, 1e-3, &points).unwrap();
        let d = 2;
        let n = d + 2;
        let mut worst = 0.0f64;
        for r in &fd {
            let blocks = ricci_blocks(d, &r.components);
            null_blocks = null_blocks.max(blocks.vv).max(blocks.vi).max(blocks.vs);
            let i = r.point.sample;
            let flat = r.point.flat;
            worst = worst.max((r.components[n + 1] - cf.rho.sample(i).data()[flat]).abs());
            for a in 0..d {
                worst = worst.max((r.components[n + a + 2] - cf.mixed[i].comp(a)[flat]).abs());
                for b in 0..d {
                    worst = worst.max(
                        (r.components[(a + 2) * n + (b + 2)] - cf.spatial[i].at(a, b, flat))
                            .abs(),
                    );
                }
            }
        }
        println!("  scenario {name}: closed-vs-fd {worst:.3e}");
        closed_vs_fd = closed_vs_fd.max(worst);
    }
    gate("criterion-1", "closed-form-vs-fd", closed_vs_fd, 1e-4);
    gate("criterion-1", "structurally-null-blocks", null_blocks, 1e-5);
}

#[test]
fn criterion_02_vacuum_construction() {
    let sg = SGrid::new(-1.2, 1.2, M).unwrap();
    let wave = assembled(sg, &const_rho(sg, 0.0));
    let u_dev = wave
        .u_curve()
        .samples()
        .iter()
        .map(|u| u.axpy(-1.0, &ScalarField::constant(grid(), 1.0)).sup_norm())
        .fold(0.0, f64::max);
    gate("criterion-2", "unit-lapse", u_dev, 1e-10);
    let points = spread_points(&wave, 5, 4);
    let fd = ricci_fd_oracle(&wave, 1e-3, &points).unwrap();
    let worst = fd
        .iter()
        .map(|r| max_abs(&r.components))
        .fold(0.0, f64::max);
    gate("criterion-2", "vacuum-fd-ricci", worst, 1e-5);
}

#[test]
fn criterion_03_prescribed_profile() {
    let sg = SGrid::new(-1.2, 1.2, M).unwrap();
    let rho = sine_rho(sg);
    let wave = assembled(sg, &rho);
    let residual = rho_profile_residual(&wave, &rho).unwrap();
    gate("criterion-3", "measured-vs-target-rho", residual, 1e-6);
}

#[test]
fn criterion_04_decomposition_suite() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2026);
    let backgrounds = [
        [1.0, 0.0, 0.0, 1.0],
        [4.0, 0.0, 0.0, 1.0],
        [2.0, 0.4, 0.4, 1.5],
    ];
    let mut recon = 0.0f64;
    let mut ortho = 0.0f64;
    let mut tt = 0.0f64;
    let mut lie_norm = 0.0f64;
    for case in 0..20 {
        let bg = backgrounds[case % backgrounds.len()];
        let ops = MetricOps::from_tensor(SymTensorField::constant(grid(), &bg)).unwrap();
        // random smooth ingredients: constant conformal part, low-mode
        // potential, divergence-free vector, constant trace-free tensor
        let c: f64 = rng.gen_range(-2.0..2.0);
        let modes: Vec<(i32, i32, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-3..=3),
                    rng.gen_range(-3..=3),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let f = ScalarField::from_fn(grid(), |x| {
            modes
                .iter()
                .map(|(k1, k2, a, p)| {
                    a * (2.0 * PI * (*k1 as f64 * x[0] + *k2 as f64 * x[1]) + p).sin()
                })
                .sum()
        });
        let stream_modes: Vec<(i32, i32, f64)> = (0..2)
            .map(|_| (rng.gen_range(-2..=2), rng.gen_range(-2..=2), rng.gen_range(-1.0..1.0)))
            .collect();
        // divergence-free field from a stream potential, with the background
        // volume factor folded in so that div_g X = 0 exactly
        let stream = ScalarField::from_fn(grid(), |x| {
            stream_modes
                .iter()
                .map(|(k1, k2, a)| a * (2.0 * PI * (*k1 as f64 * x[0] + *k2 as f64 * x[1])).cos())
                .sum()
        });
        let sqrt_det = ops.metric.sqrt_det().data()[0];
        let d0 = ppwave_core::grid::spectral_diff(&stream, 1).unwrap();
        let d1 = ppwave_core::grid::spectral_diff(&stream, 0).unwrap();
        let x_field = VectorField::from_comps(
            grid(),
            vec![
                d0.data().iter().map(|v| v / sqrt_det).collect(),
                d1.data().iter().map(|v| -v / sqrt_det).collect(),
            ],
        );
        let e = {
            // random constant tensor made trace-free against the background
            let raw = SymTensorField::constant(
                grid(),
                &[
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
            );
            let tr = ops.trace(&raw).unwrap().data()[0];
            raw.axpy(-tr / 2.0, ops.metric.tensor())
        };
        let mut h = ops.hessian(&f).unwrap();
        h = h.axpy(1.0, &ops.lie_metric(&x_field).unwrap());
        h = h.axpy(1.0, &e);
        h = h.axpy(c, ops.metric.tensor());

        let split = decompose(&ops, &h, 1e-12).unwrap();
        let diag = diagnostics(&ops, &h, &split).unwrap();
        recon = recon.max(diag.reconstruction);
        tt = tt.max(diag.tt_trace).max(diag.tt_divergence);
        let h_scale = ppwave_core::split::l2_norm_sq(&ops, &h).max(1.0);
        for p in pairwise_inner_products(&ops, &split).unwrap() {
            ortho = ortho.max(p.abs() / h_scale);
        }

        // leaf-joining inputs: drop the Lie part, then the three-term split
        // must have a Killing (vanishing) Lie image
        let mut hj = ops.hessian(&f).unwrap();
        hj = hj.axpy(1.0, &e);
        hj = hj.axpy(c, ops.metric.tensor());
        let js = split_j_solution(&ops, &hj, 1e-12).unwrap();
        lie_norm = lie_norm.max(js.lie_residual);
        assert!((js.constant - c).abs() < 1e-9);
    }
    gate("criterion-4", "reconstruction", recon, 1e-9);
    gate("criterion-4", "pairwise-orthogonality", ortho, 1e-9);
    gate("criterion-4", "tt-residuals", tt, 1e-9);
    gate("criterion-4", "j-split-lie-part", lie_norm, 1e-8);
}

#[test]
fn criterion_05_ode_comparison() {
    // cosine branch: zeros spaced pi
    let sg = SGrid::new(-2.0, 2.0, 2 * M - 1).unwrap();
    let data = ScaleData {
        sgrid: sg,
        p: vec![0.0; sg.len()],
        sigma: vec![8.0; sg.len()],
        dim: 2,
    };
    let sol = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
    let report = check_zero_spacing(&sol, 1.0, 1.0, false).unwrap();
    gate(
        "criterion-5",
        "cosine-zero-spacing",
        (report.min_spacing.unwrap() - PI).abs(),
        1e-6,
    );
    assert!(report.spacing_bound_ok && report.component_bound_ok);

    // periodic obstructed branch: a zero in finite parameter
    let eps: f64 = 0.1;
    let sgp = SGrid::new(0.0, 2.0 * PI, M).unwrap();
    let coeff: Vec<f64> = sgp.values().iter().map(|s| eps * eps * s.cos().powi(2)).collect();
    let datap = ScaleData {
        sgrid: sgp,
        p: vec![0.0; sgp.len()],
        sigma: coeff.iter().map(|q| 8.0 * q).collect(),
        dim: 2,
    };
    let solp = solve_lambda(&datap, 0.0, 1.0, 0.0).unwrap();
    let zero = solp
        .zeros
        .first()
        .copied()
        .or_else(|| extend_periodically_until_zero(&solp, 2000.0));
    println!("  obstructed zero at s = {:?}", zero);
    gate(
        "criterion-5",
        "obstructed-zero-exists",
        if zero.is_some() { 0.0 } else { 1.0 },
        0.5,
    );

    // nonpositive-coefficient branch: at most one zero
    let datan = ScaleData {
        sgrid: sg,
        p: vec![-0.6; sg.len()],
        sigma: vec![0.0; sg.len()],
        dim: 2,
    };
    let soln = solve_lambda(&datan, 0.0, 0.0, 1.0).unwrap();
    let repn = check_zero_spacing(&soln, 0.0, -0.3, false).unwrap();
    gate(
        "criterion-5",
        "nonpositive-at-most-one-zero",
        (soln.zeros.len() as f64 - 1.0).max(0.0),
        0.5,
    );
    assert!(repn.spacing_bound_ok);
}

#[test]
fn criterion_06_gauge_invariance() {
    let sg = SGrid::new(-1.2, 1.2, M).unwrap();
    let base = exp_base(sg);
    let rho = sine_rho(sg);
    // gradient-flow family and positive rescaling
    let gen = FieldCurve::from_fn(sg, |_| {
        VectorField::from_fns(grid(), |i, x| {
            if i == 0 {
                0.002 * 2.0 * PI * (2.0 * PI * x[0]).cos()
            } else {
                0.0
            }
        })
    })
    .unwrap();
    let family = integrate_flow(&gen, sg.start());
    let scaling: Vec<f64> = sg.values().iter().map(|s| (s / 10.0).exp()).collect();
    let inv = check_invariance(&base, &rho, &family, &scaling, 1e-10).unwrap();
    gate(
        "criterion-6",
        "scale-data-invariance",
        inv.p_residual.max(inv.sigma_residual),
        1e-7,
    );

    // hypersurface change preserves the measured profile up to pullback
    let wave = PPWaveMetric::new(
        FieldCurve::from_fn(sg, |_| ScalarField::constant(grid(), 1.0)).unwrap(),
        base.clone(),
    )
    .unwrap();
    let f = FieldCurve::from_fn(sg, |_| {
        ScalarField::from_fn(grid(), |x| 0.001 * (2.0 * PI * x[0]).sin())
    })
    .unwrap();
    let changed = change_hypersurface(&wave, &f).unwrap();
    let cf = ricci_closed_form(&changed.wave).unwrap();
    let mut rho_residual = 0.0f64;
    for r in cf.rho.samples() {
        rho_residual = rho_residual.max(
            r.axpy(-1.0, &ScalarField::constant(grid(), -2.0)).sup_norm(),
        );
    }
    gate("criterion-6", "hypersurface-rho-transform", rho_residual, 1e-7);

    // geodesic gauge returns a unit coefficient on the perturbative
    // short-interval scenario
    let sg_short = SGrid::new(0.0, 1.0, M).unwrap();
    let eps = 0.05;
    let ux = FieldCurve::from_fn(sg_short, |_| {
        ScalarField::from_fn(grid(), |x| {
            1.0 / (1.0f64 + eps * (2.0 * PI * x[0]).cos()).sqrt()
        })
    })
    .unwrap();
    let wave_x = PPWaveMetric::new(ux, exp_base(sg_short)).unwrap();
    let gg = geodesic_gauge(&wave_x).unwrap();
    let mut coeff = 0.0f64;
    for u in gg.wave.u_curve().samples() {
        coeff = coeff.max(u.axpy(-1.0, &ScalarField::constant(grid(), 1.0)).sup_norm());
    }
    gate("criterion-6", "geodesic-unit-coefficient", coeff, 1e-6);
}

#[test]
fn criterion_07_spinor_suite() {
    let start = std::time::Instant::now();
    let sg = SGrid::new(-1.0, 1.0, M).unwrap();
    let phi = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let mut nabla = 0.0f64;
    let mut gronwall = 0.0f64;
    let mut constraint = 0.0f64;
    let mut lichnerowicz = 0.0f64;
    for (name, wave) in [
        (
            "product",
            PPWaveMetric::product(sg, SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap(),
        ),
        (
            "exponential",
            PPWaveMetric::new(
                FieldCurve::from_fn(sg, |_| ScalarField::constant(grid(), 1.0)).unwrap(),
                exp_base(sg),
            )
            .unwrap(),
        ),
        ("assembled-lapse", assembled(sg, &sine_rho(sg))),
    ] {
        let ids = extract_ids(&wave).unwrap();
        let geom = IdsGeometry::new(&ids).unwrap();
        let anchor = wave.sgrid().len() / 2;
        let tr = transport(&ids, &geom, &phi, anchor).unwrap();
        let n = nabla_sup_norm(&geom, &tr.psi);
        let g = gronwall_series(&geom, &tr.psi).unwrap();
        let gmax = g.iter().cloned().fold(0.0f64, f64::max);
        let c = tr.psi.constraint_residual(&geom.model);
        let mut li = 0.0f64;
        for sample in [2usize, anchor, wave.sgrid().len() - 3] {
            li = li.max(lichnerowicz_identity(&geom, &tr.psi, sample).unwrap());
        }
        println!("  scenario {name}: nabla {n:.3e}, G {gmax:.3e}, constraint {c:.3e}, leaf-identity {li:.3e}");
        nabla = nabla.max(n);
        gronwall = gronwall.max(gmax);
        constraint = constraint.max(c);
        lichnerowicz = lichnerowicz.max(li);
    }
    gate("criterion-7", "transport-parallelism", nabla, 1e-7);
    gate("criterion-7", "gronwall-series", gronwall, 1e-10);
    gate("criterion-7", "constraint-preservation", constraint, 1e-9);
    gate("criterion-7", "leaf-lichnerowicz", lichnerowicz, 1e-8);
    let elapsed = start.elapsed();
    println!("  spinor suite runtime: {elapsed:?}");
    assert!(elapsed.as_secs() < 300, "spinor suite exceeded 5 minutes");
}

#[test]
fn criterion_08_round_trip() {
    let sg = SGrid::new(-1.0, 1.0, M).unwrap();
    // scenario 1: constant vacuum
    let constant = ModuliCurve {
        base: FieldCurve::from_fn_with_derivative(
            sg,
            |_| SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]),
            |_| SymTensorField::zeros(grid()),
        )
        .unwrap(),
        rho: const_rho(sg, 0.0),
        lambda: solve_lambda(
            &ScaleData {
                sgrid: sg,
                p: vec![0.0; sg.len()],
                sigma: vec![0.0; sg.len()],
                dim: 2,
            },
            0.0,
            1.0,
            0.0,
        )
        .unwrap(),
    };
    let rt1 = roundtrip(&constant, 0, 1e-8).unwrap();
    gate("criterion-8", "constant-vacuum", rt1.report.max(), 1e-6);

    // scenario 2: exponential family with cosine scale
    let base = exp_base(sg);
    let rho = const_rho(sg, 0.0);
    let data = compute_scale_data(&base, &rho, 1e-10).unwrap();
    let lambda = solve_lambda(&data, 0.0, 1.0, 0.0).unwrap();
    let vacuum = ModuliCurve {
        base: base.clone(),
        rho: rho.clone(),
        lambda: lambda.clone(),
    };
    let rt2 = roundtrip(&vacuum, 0, 1e-8).unwrap();
    gate("criterion-8", "exponential-cosine", rt2.report.max(), 1e-6);

    // scenario 3: gauged representative change, compared through the
    // diffeomorphism-invariant data
    let gen = FieldCurve::from_fn(sg, |_| {
        VectorField::from_fns(grid(), |i, x| {
            if i == 0 {
                0.003 * 2.0 * PI * (2.0 * PI * x[0]).cos()
            } else {
                0.0
            }
        })
    })
    .unwrap();
    let family = integrate_flow(&gen, sg.start());
    let pulled = pullback_metric_curve(&family, &base).unwrap();
    let pulled_rho = pullback_scalar_curve(&family, &rho).unwrap();
    let data_rep = compute_scale_data(&pulled, &pulled_rho, 1e-10).unwrap();
    let lambda_rep = solve_lambda(&data_rep, 0.0, 1.0, 0.0).unwrap();
    let other = ModuliCurve {
        base: pulled,
        rho: pulled_rho,
        lambda: lambda_rep,
    };
    let rt3 = roundtrip(&other, 0, 1e-8).unwrap();
    let sum_a = invariant_summary(&rt2.wave, &data).unwrap();
    let sum_b = invariant_summary(&rt3.wave, &data_rep).unwrap();
    gate(
        "criterion-8",
        "gauged-representative-invariants",
        sum_a.residual(&sum_b),
        1e-6,
    );
}

#[test]
fn criterion_09_rigidity() {
    let sg = SGrid::new(0.0, 2.0 * PI, M).unwrap();
    let rho = const_rho(sg, 0.0);
    // constant periodic family: rigid, with the product metric emitted
    let constant = FieldCurve::from_fn_with_derivative(
        sg,
        |_| SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]),
        |_| SymTensorField::zeros(grid()),
    )
    .unwrap();
    let data = compute_scale_data(&constant, &rho, 1e-10).unwrap();
    let out = rigidity_check(&constant, &rho, &[0.0, 0.0], &data, 1e-9).unwrap();
    match out {
        RigidityOutcome::Rigid {
            product,
            coefficient_sup,
            sigma_sup,
            trace_sup,
        } => {
            gate("criterion-9", "constant-family-rigid", coefficient_sup, 1e-9);
            gate(
                "criterion-9",
                "product-certificate",
                sigma_sup.max(trace_sup),
                1e-9,
            );
            let cf = ricci_closed_form(&product).unwrap();
            gate(
                "criterion-9",
                "emitted-product-vacuum",
                cf.max_spatial()
                    .max(cf.max_mixed())
                    .max(cf.rho.samples().iter().map(|f| f.sup_norm()).fold(0.0, f64::max)),
                1e-10,
            );
        }
        _ => panic!("constant periodic family must be rigid"),
    }

    // deformed periodic family: obstructed, with the zero certificate
    let eps = 0.1;
    let deformed = FieldCurve::from_fn_with_derivative(
        sg,
        move |s| {
            let f = eps * s.sin();
            SymTensorField::constant(grid(), &[(2.0 * f).exp(), 0.0, 0.0, (-2.0 * f).exp()])
        },
        move |s| {
            let f = eps * s.sin();
            let fd = eps * s.cos();
            SymTensorField::constant(
                grid(),
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
    let data = compute_scale_data(&deformed, &rho, 1e-10).unwrap();
    let out = rigidity_check(&deformed, &rho, &[0.0, 0.0], &data, 1e-9).unwrap();
    match out {
        RigidityOutcome::Obstructed {
            coefficient_sup,
            zero_location,
            ..
        } => {
            println!(
                "  obstructed: coefficient sup {coefficient_sup:.3e}, zero certificate at s = {zero_location:.4}"
            );
            gate(
                "criterion-9",
                "deformed-family-obstructed",
                if coefficient_sup > 1e-4 && zero_location.is_finite() {
                    0.0
                } else {
                    1.0
                },
                0.5,
            );
        }
        _ => panic!("deformed periodic family must be obstructed"),
    }
}

#[test]
fn criterion_10_curvature_vanishing() {
    let sg = SGrid::new(-1.2, 1.2, M).unwrap();
    let scenarios = [
        (
            "product",
            PPWaveMetric::product(sg, SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap(),
        ),
        (
            "exponential",
            PPWaveMetric::new(
                FieldCurve::from_fn(sg, |_| ScalarField::constant(grid(), 1.0)).unwrap(),
                exp_base(sg),
            )
            .unwrap(),
        ),
        ("prescribed-rho", assembled(sg, &sine_rho(sg))),
        ("resliced", {
            let wave = PPWaveMetric::new(
                FieldCurve::from_fn(sg, |_| ScalarField::constant(grid(), 1.0)).unwrap(),
                exp_base(sg),
            )
            .unwrap();
            let f = FieldCurve::from_fn(sg, |_| {
                ScalarField::from_fn(grid(), |x| 0.001 * (2.0 * PI * x[0]).sin())
            })
            .unwrap();
            change_hypersurface(&wave, &f).unwrap().wave
        }),
    ];
    let mut triple = 0.0f64;
    let mut traced = 0.0f64;
    for (name, wave) in scenarios {
        let points: Vec<OraclePoint> = spread_points(&wave, 2, 64);
        let cv = curvature_vanishing_check(&wave, 1e-3, &points).unwrap();
        println!(
            "  scenario {name}: triples {:.3e}, traced {:.3e}",
            cv.max_triple, cv.max_traced
        );
        triple = triple.max(cv.max_triple);
        traced = traced.max(cv.max_traced);
    }
    gate("criterion-10", "flat-family-triples", triple, 1e-5);
    gate("criterion-10", "traced-identity", traced, 1e-5);
}
