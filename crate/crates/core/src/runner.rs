//! Pipeline orchestration: realizes a scenario, runs gauge, the scale
//! solve and assembly, evaluates the requested checks at their stated
//! tolerances, and emits the report and data artifacts.

use crate::gauge::make_divergence_free;
use crate::grid::GridField;
use crate::moduli::{roundtrip, ModuliCurve};
use crate::oracle::{curvature_vanishing_check, ricci_blocks, ricci_fd_oracle, spread_points};
use crate::report::{Report, ReportError};
use crate::scale::{compute_scale_data, solve_lambda, write_series_csv};
use crate::scenario::{Scenario, ScenarioError};
use crate::spinor::{gronwall_series, nabla_sup_norm, transport, IdsGeometry};
use crate::wave::{
    assemble, energy_condition, extract_ids, ricci_closed_form, rigidity_check, RigidityOutcome,
};
use num_complex::Complex64;
use std::path::{Path, PathBuf};

/// Anchor phrases tying each check to its source statement.
pub fn check_anchor(name: &str) -> &'static str {
    match name {
        "gauge-div-residual" | "gauge-trace-residual" => "is a TT-tensor with respect",
        "lambda-ode-residual" => "is subject to the ODE",
        "ricci-profile" => "there is a positive function",
        "curvature-closed-vs-fd" => "which is given by",
        "null-blocks" => "null Ricci curvature if and only",
        "curvature-vanishing" => "Assume that g_s is flat",
        "traced-curvature" => "the following are equivalent",
        "scale-invariance" => "invariant under pulling back",
        "energy-condition" => "all the energy conditions from",
        "spinor-parallel" => "parallel along all the curves",
        "spinor-constraint" => "bijectively maps those spinors with",
        "spinor-gronwall" => "Gronwall's lemma then shows",
        "spinor-lichnerowicz" => "has compact support. Then",
        "roundtrip" => "equivalence classes of parametrized moduli curves",
        "rigidity" => "embeds as open subset into",
        _ => "",
    }
}

/// Tolerance multiplier applied to every check, a command-line knob.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub tol_scale: f64,
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tol_scale: 1.0,
            snapshot_dir: None,
        }
    }
}

/// Executes the scenario pipeline; the report records stage failures rather
/// than aborting, and the exit verdict is `all_pass`.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<Report, ReportError> {
    let mut report = Report::new(scenario.name.clone());
    match run_inner(scenario, options, &mut report) {
        Ok(()) => {}
        Err(e) => report.fail_stage(e.0, e.1),
    }
    if let Some(path) = &scenario.report_path {
        report.write(Path::new(path))?;
    }
    Ok(report)
}

struct StageError(&'static str, String);

macro_rules! stage {
    ($stage:literal, $e:expr) => {
        $e.map_err(|err| StageError($stage, err.to_string()))?
    };
}

fn run_inner(
    scenario: &Scenario,
    options: &RunOptions,
    report: &mut Report,
) -> Result<(), StageError> {
    let recipe = stage!("realize", scenario.realize());
    let tol = |t: f64| t * options.tol_scale;
    let find = |name: &str| scenario.checks.iter().find(|c| c.name == name);

    // rigidity is a standalone verdict on the realized curve
    if let Some(check) = find("rigidity") {
        let spec = scenario
            .rigidity
            .as_ref()
            .ok_or(StageError("rigidity", "missing [rigidity] table".into()))?;
        let span = scenario.stop - scenario.start;
        if (span - spec.period).abs() > 1e-9 {
            return Err(StageError(
                "rigidity",
                format!(
                    "sampled interval length {span} must equal the period {}",
                    spec.period
                ),
            ));
        }
        let data = stage!(
            "rigidity",
            compute_scale_data(&recipe.curve, &recipe.rho, 1e-10)
        );
        let outcome = stage!(
            "rigidity",
            rigidity_check(
                &recipe.curve,
                &recipe.rho,
                &spec.isometry,
                &data,
                tol(check.tol)
            )
        );
        match outcome {
            RigidityOutcome::Rigid {
                coefficient_sup,
                sigma_sup,
                trace_sup,
                product,
            } => {
                report.push("rigidity", check_anchor("rigidity"), coefficient_sup, tol(check.tol));
                report.push(
                    "rigidity-sigma",
                    "hence a vacuum pp-wave",
                    sigma_sup.max(trace_sup),
                    tol(check.tol),
                );
                if let Some(dir) = snapshot_dir(scenario, options) {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| StageError("snapshot", e.to_string()))?;
                    crate::report::write_snapshot(
                        &dir.join("product_metric.ppwf"),
                        product.spatial().sample(0),
                    )
                    .map_err(|e| StageError("snapshot", e.to_string()))?;
                }
            }
            RigidityOutcome::Obstructed {
                coefficient_sup,
                zero_location,
                ..
            } => {
                report.push("rigidity", check_anchor("rigidity"), coefficient_sup, tol(check.tol));
                // informational certificate: the scale factor hits zero here
                report.push(
                    "rigidity-certificate",
                    "unless ... lambda is a constant solution",
                    zero_location,
                    f64::MAX,
                );
            }
        }
        return Ok(());
    }

    // main pipeline: gauge, scale solve, assembly
    let gauged = stage!("gauge", make_divergence_free(&recipe.curve, 1e-8));
    if let Some(c) = find("gauge-div-residual") {
        report.push(
            "gauge-div-residual",
            check_anchor("gauge-div-residual"),
            gauged.div_residual,
            tol(c.tol),
        );
    }
    if let Some(c) = find("gauge-trace-residual") {
        report.push(
            "gauge-trace-residual",
            check_anchor("gauge-trace-residual"),
            gauged.trace_residual,
            tol(c.tol),
        );
    }
    let rho_gauged = stage!(
        "gauge",
        crate::gauge::pullback_scalar_curve(&gauged.family, &recipe.rho)
    );

    let data = stage!("scale", compute_scale_data(&gauged.curve, &rho_gauged, 1e-10));
    let lambda = stage!(
        "scale",
        solve_lambda(
            &data,
            scenario.lambda.anchor,
            scenario.lambda.value,
            scenario.lambda.slope
        )
    );
    if let Some(c) = find("lambda-ode-residual") {
        report.push(
            "lambda-ode-residual",
            check_anchor("lambda-ode-residual"),
            lambda.ode_residual(),
            tol(c.tol),
        );
    }
    if let Some(path) = &scenario.series_path {
        stage!("series", write_series_csv(Path::new(path), &lambda, &data));
    }
    if let Some(c) = find("scale-invariance") {
        // gradient-flow pullback plus a positive rescaling must leave P and
        // Sigma unchanged
        let grid = recipe.grid;
        let gen_curve = stage!(
            "scale-invariance",
            crate::grid::FieldCurve::from_fn(recipe.sgrid, |_| {
                crate::grid::VectorField::from_fns(grid, |i, x| {
                    if i == 0 {
                        0.002 * 2.0 * std::f64::consts::PI
                            * (2.0 * std::f64::consts::PI * x[0]).cos()
                    } else {
                        0.0
                    }
                })
            })
        );
        let family = crate::gauge::integrate_flow(&gen_curve, recipe.sgrid.start());
        let scaling: Vec<f64> = recipe
            .sgrid
            .values()
            .iter()
            .map(|s| (s / 10.0).exp())
            .collect();
        let inv = stage!(
            "scale-invariance",
            crate::scale::check_invariance(&gauged.curve, &rho_gauged, &family, &scaling, 1e-10)
        );
        report.push(
            "scale-invariance",
            check_anchor("scale-invariance"),
            inv.p_residual.max(inv.sigma_residual),
            tol(c.tol),
        );
    }

    let gauge_gate = 1e-7 * crate::gauge::motion_scale(&gauged.curve);
    let wave = stage!(
        "assemble",
        assemble(
            &gauged.curve,
            &rho_gauged,
            &lambda,
            scenario.lambda.component,
            gauge_gate
        )
    );

    if let Some(c) = find("energy-condition") {
        let verdict = energy_condition(&rho_gauged);
        report.push(
            "energy-condition",
            check_anchor("energy-condition"),
            (-verdict.min_rho).max(0.0),
            tol(c.tol),
        );
    }

    let needs_curvature = ["ricci-profile", "curvature-closed-vs-fd", "null-blocks"]
        .iter()
        .any(|n| find(n).is_some());
    if needs_curvature {
        let cf = stage!("curvature", ricci_closed_form(&wave));
        if let Some(c) = find("ricci-profile") {
            // the assembled wave may live on a restricted component
            let offset = ((wave.sgrid().start() - rho_gauged.sgrid().start())
                / rho_gauged.sgrid().ds())
            .round() as usize;
            let mut worst = 0.0f64;
            let mut per_sample_err = Vec::with_capacity(cf.rho.len());
            for (i, meas) in cf.rho.samples().iter().enumerate() {
                let e = meas.axpy(-1.0, rho_gauged.sample(offset + i)).sup_norm();
                per_sample_err.push(e);
                worst = worst.max(e);
            }
            report.push("ricci-profile", check_anchor("ricci-profile"), worst, tol(c.tol));
            if let Some(path) = &scenario.series_path {
                let mixed: Vec<f64> = cf.mixed.iter().map(|f| f.sup_norm()).collect();
                let spatial: Vec<f64> = cf.spatial.iter().map(|f| f.sup_norm()).collect();
                let p = Path::new(path).with_extension("curvature.csv");
                stage!(
                    "series",
                    crate::report::write_curvature_csv(
                        &p,
                        wave.sgrid(),
                        &mixed,
                        &spatial,
                        &per_sample_err
                    )
                );
            }
        }
        if find("curvature-closed-vs-fd").is_some() || find("null-blocks").is_some() {
            let points = spread_points(&wave, 3, 16);
            let fd = stage!("fd-oracle", ricci_fd_oracle(&wave, 1e-3, &points));
            let d = wave.grid().dim();
            let mut closed_vs_fd = 0.0f64;
            let mut null_blocks = 0.0f64;
            for r in &fd {
                let blocks = ricci_blocks(d, &r.components);
                null_blocks = null_blocks
                    .max(blocks.vv)
                    .max(blocks.vi)
                    .max(blocks.vs);
                // closed-form comparison at the same point
                let i = r.point.sample;
                let flat = r.point.flat;
                let cf_ss = cf.rho.sample(i).data()[flat];
                let n = d + 2;
                closed_vs_fd = closed_vs_fd.max((r.components[n + 1] - cf_ss).abs());
                for a in 0..d {
                    let fd_si = r.components[n + (a + 2)];
                    let cf_si = cf.mixed[i].comp(a)[flat];
                    closed_vs_fd = closed_vs_fd.max((fd_si - cf_si).abs());
                    for b in 0..d {
                        let fd_ij = r.components[(a + 2) * n + (b + 2)];
                        let cf_ij = cf.spatial[i].at(a, b, flat);
                        closed_vs_fd = closed_vs_fd.max((fd_ij - cf_ij).abs());
                    }
                }
            }
            if let Some(c) = find("curvature-closed-vs-fd") {
                report.push(
                    "curvature-closed-vs-fd",
                    check_anchor("curvature-closed-vs-fd"),
                    closed_vs_fd,
                    tol(c.tol),
                );
            }
            if let Some(c) = find("null-blocks") {
                report.push("null-blocks", check_anchor("null-blocks"), null_blocks, tol(c.tol));
            }
        }
    }

    if find("curvature-vanishing").is_some() || find("traced-curvature").is_some() {
        let points = spread_points(&wave, 2, 64);
        let cv = stage!("fd-oracle", curvature_vanishing_check(&wave, 1e-3, &points));
        if let Some(c) = find("curvature-vanishing") {
            report.push(
                "curvature-vanishing",
                check_anchor("curvature-vanishing"),
                cv.max_triple,
                tol(c.tol),
            );
        }
        if let Some(c) = find("traced-curvature") {
            report.push(
                "traced-curvature",
                check_anchor("traced-curvature"),
                cv.max_traced,
                tol(c.tol),
            );
        }
    }

    let needs_spinor = [
        "spinor-parallel",
        "spinor-constraint",
        "spinor-gronwall",
        "spinor-lichnerowicz",
    ]
    .iter()
    .any(|n| find(n).is_some());
    if needs_spinor {
        let ids = stage!("spinor", extract_ids(&wave));
        let geom = stage!("spinor", IdsGeometry::new(&ids));
        let half = geom.model.dim / 2;
        let mut phi = vec![Complex64::default(); half];
        phi[0] = Complex64::new(1.0, 0.0);
        let anchor = wave.sgrid().len() / 2;
        let tr = stage!("spinor", transport(&ids, &geom, &phi, anchor));
        if let Some(c) = find("spinor-parallel") {
            report.push(
                "spinor-parallel",
                check_anchor("spinor-parallel"),
                nabla_sup_norm(&geom, &tr.psi),
                tol(c.tol),
            );
        }
        if let Some(c) = find("spinor-constraint") {
            report.push(
                "spinor-constraint",
                check_anchor("spinor-constraint"),
                tr.psi.constraint_residual(&geom.model),
                tol(c.tol),
            );
        }
        if let Some(c) = find("spinor-gronwall") {
            let g = stage!("spinor", gronwall_series(&geom, &tr.psi));
            report.push(
                "spinor-gronwall",
                check_anchor("spinor-gronwall"),
                g.iter().cloned().fold(0.0, f64::max),
                tol(c.tol),
            );
        }
        if let Some(c) = find("spinor-lichnerowicz") {
            let mut worst = 0.0f64;
            for sample in [2, wave.sgrid().len() / 2, wave.sgrid().len() - 3] {
                worst = worst.max(stage!(
                    "spinor",
                    crate::spinor::lichnerowicz_identity(&geom, &tr.psi, sample)
                ));
            }
            report.push(
                "spinor-lichnerowicz",
                check_anchor("spinor-lichnerowicz"),
                worst,
                tol(c.tol),
            );
        }
        if let Some(path) = &scenario.series_path {
            let p = Path::new(path).with_extension("spinor.csv");
            stage!("series", crate::spinor::write_spinor_csv(&p, &geom, &tr.psi));
        }
    }

    if let Some(c) = find("roundtrip") {
        let moduli = ModuliCurve {
            base: recipe.curve.clone(),
            rho: recipe.rho.clone(),
            lambda: lambda.clone(),
        };
        let rt = stage!(
            "roundtrip",
            roundtrip(&moduli, scenario.lambda.component, 1e-8)
        );
        report.push(
            "roundtrip",
            check_anchor("roundtrip"),
            rt.report.max(),
            tol(c.tol),
        );
    }

    if let Some(dir) = snapshot_dir(scenario, options) {
        std::fs::create_dir_all(&dir).map_err(|e| StageError("snapshot", e.to_string()))?;
        let mid = wave.sgrid().len() / 2;
        crate::report::write_snapshot(&dir.join("lapse_mid.ppwf"), wave.u_curve().sample(mid))
            .map_err(|e| StageError("snapshot", e.to_string()))?;
        crate::report::write_snapshot(
            &dir.join("spatial_mid.ppwf"),
            wave.spatial().sample(mid),
        )
        .map_err(|e| StageError("snapshot", e.to_string()))?;
    }
    Ok(())
}

fn snapshot_dir(scenario: &Scenario, options: &RunOptions) -> Option<PathBuf> {
    options
        .snapshot_dir
        .clone()
        .or_else(|| scenario.snapshot_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var("PPWF_SNAPSHOT_DIR").ok().map(PathBuf::from))
}

impl From<ScenarioError> for StageError {
    fn from(e: ScenarioError) -> Self {
        StageError("scenario", e.to_string())
    }
}
