//! Scenario files: a TOML dialect describing the grid, the curve generator,
//! the Ricci profile, the scale initial data and the checks to run.
//! Validation is exhaustive: every unknown key, type mismatch and missing
//! field in the file is reported, not just the first.

use crate::grid::{
    FieldCurve, GridError, GridField, MetricCurve, ScalarCurve, ScalarField, SGrid,
    SymTensorField, TorusGrid, VectorField,
};
use crate::riemann::MetricOps;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("invalid scenario:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gauge(#[from] crate::gauge::GaugeError),
    #[error(transparent)]
    Riemann(#[from] crate::riemann::RiemannError),
}

/// Named spatial curve generators.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CurveSpec {
    /// constant metric, row-major entries of the upper triangle
    Constant { entries: Vec<f64> },
    /// `g_s = diag(e^{2 r_1 s}, ..)`; unit volume when the rates sum to zero
    DiagonalExponential { rates: Vec<f64> },
    /// `g_s = diag(e^{2 eps sin(2 pi s / period)}, e^{-2 eps sin(..)}, 1..)`
    PeriodicDiagonal { epsilon: f64, period: f64 },
    /// base curve pulled back along the flow of `amplitude * grad(potential)`
    /// where the potential is the product of the listed axis modes
    Pullback {
        base: Box<CurveSpec>,
        potential_mode: Vec<i32>,
        amplitude: f64,
    },
}

/// Ricci profile prescriptions.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RhoSpec {
    Constant { value: f64 },
    Fourier { constant: f64, modes: Vec<RhoMode> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoMode {
    pub k: Vec<i32>,
    pub amp: f64,
    pub phase: String, // "sin" | "cos"
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaSpec {
    pub anchor: f64,
    pub value: f64,
    pub slope: f64,
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSpec {
    pub name: String,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigiditySpec {
    pub period: f64,
    /// torus translation applied at the period seam
    pub isometry: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub points: usize,
    pub start: f64,
    pub stop: f64,
    pub samples: usize,
    pub curve: CurveSpec,
    pub rho: RhoSpec,
    pub lambda: LambdaSpec,
    pub checks: Vec<CheckSpec>,
    pub report_path: Option<String>,
    pub series_path: Option<String>,
    pub snapshot_dir: Option<String>,
    pub rigidity: Option<RigiditySpec>,
}

/// The fixed vocabulary of runnable checks.
pub const KNOWN_CHECKS: &[&str] = &[
    "gauge-div-residual",
    "gauge-trace-residual",
    "lambda-ode-residual",
    "ricci-profile",
    "curvature-closed-vs-fd",
    "null-blocks",
    "curvature-vanishing",
    "traced-curvature",
    "scale-invariance",
    "energy-condition",
    "spinor-parallel",
    "spinor-constraint",
    "spinor-gronwall",
    "spinor-lichnerowicz",
    "roundtrip",
    "rigidity",
];

struct Validator {
    errors: Vec<String>,
}

impl Validator {
    fn new() -> Self {
        Self { errors: Vec::new() }
    }

    fn fail(&mut self, loc: &str, msg: impl AsRef<str>) {
        self.errors.push(format!("{loc}: {}", msg.as_ref()));
    }

    fn table<'a>(
        &mut self,
        v: &'a toml::Value,
        loc: &str,
        known: &[&str],
    ) -> Option<&'a toml::map::Map<String, toml::Value>> {
        match v.as_table() {
            Some(t) => {
                for key in t.keys() {
                    if !known.contains(&key.as_str()) {
                        self.fail(&format!("{loc}.{key}"), "unknown key");
                    }
                }
                Some(t)
            }
            None => {
                self.fail(loc, "expected a table");
                None
            }
        }
    }

    fn float(&mut self, t: &toml::map::Map<String, toml::Value>, loc: &str, key: &str) -> f64 {
        match t.get(key) {
            Some(toml::Value::Float(f)) => *f,
            Some(toml::Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.fail(&format!("{loc}.{key}"), "expected a number");
                0.0
            }
            None => {
                self.fail(loc, format!("missing required key `{key}`"));
                0.0
            }
        }
    }

    fn float_or(
        &mut self,
        t: &toml::map::Map<String, toml::Value>,
        loc: &str,
        key: &str,
        default: f64,
    ) -> f64 {
        match t.get(key) {
            None => default,
            Some(_) => self.float(t, loc, key),
        }
    }

    fn integer(&mut self, t: &toml::map::Map<String, toml::Value>, loc: &str, key: &str) -> i64 {
        match t.get(key) {
            Some(toml::Value::Integer(i)) => *i,
            Some(_) => {
                self.fail(&format!("{loc}.{key}"), "expected an integer");
                0
            }
            None => {
                self.fail(loc, format!("missing required key `{key}`"));
                0
            }
        }
    }

    fn string(
        &mut self,
        t: &toml::map::Map<String, toml::Value>,
        loc: &str,
        key: &str,
    ) -> String {
        match t.get(key) {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => {
                self.fail(&format!("{loc}.{key}"), "expected a string");
                String::new()
            }
            None => {
                self.fail(loc, format!("missing required key `{key}`"));
                String::new()
            }
        }
    }

    fn float_list(
        &mut self,
        t: &toml::map::Map<String, toml::Value>,
        loc: &str,
        key: &str,
    ) -> Vec<f64> {
        match t.get(key) {
            Some(toml::Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    toml::Value::Float(f) => *f,
                    toml::Value::Integer(n) => *n as f64,
                    _ => {
                        self.fail(&format!("{loc}.{key}[{i}]"), "expected a number");
                        0.0
                    }
                })
                .collect(),
            Some(_) => {
                self.fail(&format!("{loc}.{key}"), "expected an array of numbers");
                Vec::new()
            }
            None => {
                self.fail(loc, format!("missing required key `{key}`"));
                Vec::new()
            }
        }
    }

    fn int_list(
        &mut self,
        t: &toml::map::Map<String, toml::Value>,
        loc: &str,
        key: &str,
    ) -> Vec<i32> {
        match t.get(key) {
            Some(toml::Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    toml::Value::Integer(n) => *n as i32,
                    _ => {
                        self.fail(&format!("{loc}.{key}[{i}]"), "expected an integer");
                        0
                    }
                })
                .collect(),
            Some(_) => {
                self.fail(&format!("{loc}.{key}"), "expected an array of integers");
                Vec::new()
            }
            None => {
                self.fail(loc, format!("missing required key `{key}`"));
                Vec::new()
            }
        }
    }
}

fn parse_curve(val: &toml::Value, loc: &str, v: &mut Validator) -> CurveSpec {
    let fallback = CurveSpec::Constant {
        entries: vec![1.0],
    };
    let Some(t) = v.table(
        val,
        loc,
        &["kind", "entries", "rates", "epsilon", "period", "base", "potential_mode", "amplitude"],
    ) else {
        return fallback;
    };
    let kind = v.string(t, loc, "kind");
    match kind.as_str() {
        "constant" => CurveSpec::Constant {
            entries: v.float_list(t, loc, "entries"),
        },
        "diagonal-exponential" => CurveSpec::DiagonalExponential {
            rates: v.float_list(t, loc, "rates"),
        },
        "periodic-diagonal" => CurveSpec::PeriodicDiagonal {
            epsilon: v.float(t, loc, "epsilon"),
            period: v.float(t, loc, "period"),
        },
        "pullback" => {
            let base = match t.get("base") {
                Some(b) => parse_curve(b, &format!("{loc}.base"), v),
                None => {
                    v.fail(loc, "missing required key `base`");
                    fallback.clone()
                }
            };
            CurveSpec::Pullback {
                base: Box::new(base),
                potential_mode: v.int_list(t, loc, "potential_mode"),
                amplitude: v.float(t, loc, "amplitude"),
            }
        }
        "" => fallback,
        other => {
            v.fail(&format!("{loc}.kind"), format!("unknown curve kind `{other}`"));
            fallback
        }
    }
}

/// Parses and validates a scenario, reporting every problem found.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let root: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Syntax(e.to_string()))?;
    let mut v = Validator::new();
    let known_top = [
        "name", "grid", "interval", "curve", "rho", "lambda", "checks", "output", "rigidity",
    ];
    let Some(top) = v.table(&root, "scenario", &known_top) else {
        return Err(ScenarioError::Invalid(v.errors));
    };

    let name = v.string(top, "scenario", "name");

    let (dim, points) = match top.get("grid") {
        Some(gv) => {
            if let Some(t) = v.table(gv, "grid", &["d", "n"]) {
                (
                    v.integer(t, "grid", "d") as usize,
                    v.integer(t, "grid", "n") as usize,
                )
            } else {
                (2, 32)
            }
        }
        None => {
            v.fail("scenario", "missing required table `grid`");
            (2, 32)
        }
    };

    let (start, stop, samples) = match top.get("interval") {
        Some(iv) => {
            if let Some(t) = v.table(iv, "interval", &["start", "stop", "samples"]) {
                (
                    v.float(t, "interval", "start"),
                    v.float(t, "interval", "stop"),
                    v.integer(t, "interval", "samples") as usize,
                )
            } else {
                (0.0, 1.0, 9)
            }
        }
        None => {
            v.fail("scenario", "missing required table `interval`");
            (0.0, 1.0, 9)
        }
    };

    let curve = match top.get("curve") {
        Some(cv) => parse_curve(cv, "curve", &mut v),
        None => {
            v.fail("scenario", "missing required table `curve`");
            CurveSpec::Constant { entries: vec![1.0] }
        }
    };

    let rho = match top.get("rho") {
        Some(rv) => {
            if let Some(t) = v.table(rv, "rho", &["kind", "value", "constant", "modes"]) {
                match v.string(t, "rho", "kind").as_str() {
                    "constant" => RhoSpec::Constant {
                        value: v.float(t, "rho", "value"),
                    },
                    "fourier" => {
                        let constant = v.float_or(t, "rho", "constant", 0.0);
                        let modes = match t.get("modes") {
                            Some(toml::Value::Array(arr)) => arr
                                .iter()
                                .enumerate()
                                .filter_map(|(i, mv)| {
                                    let loc = format!("rho.modes[{i}]");
                                    let t = v.table(mv, &loc, &["k", "amp", "phase"])?;
                                    let phase = v.string(t, &loc, "phase");
                                    if phase != "sin" && phase != "cos" {
                                        v.fail(
                                            &format!("{loc}.phase"),
                                            "expected \"sin\" or \"cos\"",
                                        );
                                    }
                                    Some(RhoMode {
                                        k: v.int_list(t, &loc, "k"),
                                        amp: v.float(t, &loc, "amp"),
                                        phase,
                                    })
                                })
                                .collect(),
                            Some(_) => {
                                v.fail("rho.modes", "expected an array of tables");
                                Vec::new()
                            }
                            None => Vec::new(),
                        };
                        RhoSpec::Fourier { constant, modes }
                    }
                    "" => RhoSpec::Constant { value: 0.0 },
                    other => {
                        v.fail("rho.kind", format!("unknown rho kind `{other}`"));
                        RhoSpec::Constant { value: 0.0 }
                    }
                }
            } else {
                RhoSpec::Constant { value: 0.0 }
            }
        }
        None => {
            v.fail("scenario", "missing required table `rho`");
            RhoSpec::Constant { value: 0.0 }
        }
    };

    let lambda = match top.get("lambda") {
        Some(lv) => {
            if let Some(t) = v.table(lv, "lambda", &["anchor", "value", "slope", "component"]) {
                LambdaSpec {
                    anchor: v.float(t, "lambda", "anchor"),
                    value: v.float(t, "lambda", "value"),
                    slope: v.float_or(t, "lambda", "slope", 0.0),
                    component: match t.get("component") {
                        None => 0,
                        Some(_) => v.integer(t, "lambda", "component") as usize,
                    },
                }
            } else {
                LambdaSpec {
                    anchor: 0.0,
                    value: 1.0,
                    slope: 0.0,
                    component: 0,
                }
            }
        }
        None => {
            v.fail("scenario", "missing required table `lambda`");
            LambdaSpec {
                anchor: 0.0,
                value: 1.0,
                slope: 0.0,
                component: 0,
            }
        }
    };

    let checks = match top.get("checks") {
        Some(toml::Value::Array(arr)) => arr
            .iter()
            .enumerate()
            .filter_map(|(i, cv)| {
                let loc = format!("checks[{i}]");
                let t = v.table(cv, &loc, &["name", "tol"])?;
                let name = v.string(t, &loc, "name");
                if !name.is_empty() && !KNOWN_CHECKS.contains(&name.as_str()) {
                    v.fail(&format!("{loc}.name"), format!("unknown check `{name}`"));
                }
                let tol = v.float(t, &loc, "tol");
                if tol <= 0.0 {
                    v.fail(&format!("{loc}.tol"), "tolerance must be positive");
                }
                Some(CheckSpec { name, tol })
            })
            .collect(),
        Some(_) => {
            v.fail("checks", "expected an array of tables");
            Vec::new()
        }
        None => Vec::new(),
    };

    let (report_path, series_path, snapshot_dir) = match top.get("output") {
        Some(ov) => {
            if let Some(t) = v.table(ov, "output", &["report", "series", "snapshot_dir"]) {
                let get = |t: &toml::map::Map<String, toml::Value>, key: &str, v: &mut Validator| {
                    match t.get(key) {
                        None => None,
                        Some(toml::Value::String(s)) => Some(s.clone()),
                        Some(_) => {
                            v.fail(&format!("output.{key}"), "expected a string");
                            None
                        }
                    }
                };
                (
                    get(t, "report", &mut v),
                    get(t, "series", &mut v),
                    get(t, "snapshot_dir", &mut v),
                )
            } else {
                (None, None, None)
            }
        }
        None => (None, None, None),
    };

    let rigidity = match top.get("rigidity") {
        None => None,
        Some(rv) => v.table(rv, "rigidity", &["period", "isometry"]).map(|t| {
            let period = v.float(t, "rigidity", "period");
            let isometry = match t.get("isometry") {
                None => vec![0.0; dim],
                Some(_) => v.float_list(t, "rigidity", "isometry"),
            };
            RigiditySpec { period, isometry }
        }),
    };

    // semantic validation
    if !(1..=3).contains(&dim) {
        v.fail("grid.d", "dimension must be 1, 2 or 3");
    }
    if points < 8 || !points.is_power_of_two() {
        v.fail("grid.n", "points per axis must be a power of two >= 8");
    }
    if samples < crate::grid::MIN_S_SAMPLES {
        v.fail("interval.samples", "need at least 9 samples");
    }
    if stop <= start {
        v.fail("interval", "stop must exceed start");
    }
    match &curve {
        CurveSpec::Constant { entries } => {
            if entries.len() != dim * (dim + 1) / 2 {
                v.fail("curve.entries", "expected d(d+1)/2 entries");
            }
        }
        CurveSpec::DiagonalExponential { rates } => {
            if rates.len() != dim {
                v.fail("curve.rates", "expected d rates");
            }
        }
        CurveSpec::PeriodicDiagonal { period, .. } => {
            if *period <= 0.0 {
                v.fail("curve.period", "period must be positive");
            }
            if dim < 2 {
                v.fail("curve", "periodic-diagonal needs d >= 2");
            }
        }
        CurveSpec::Pullback { potential_mode, .. } => {
            if potential_mode.len() != dim {
                v.fail("curve.potential_mode", "expected d mode numbers");
            }
        }
    }
    if let RhoSpec::Fourier { modes, .. } = &rho {
        for (i, m) in modes.iter().enumerate() {
            if m.k.len() != dim {
                v.fail(&format!("rho.modes[{i}].k"), "expected d mode numbers");
            }
        }
    }
    if let Some(r) = &rigidity {
        if r.period <= 0.0 {
            v.fail("rigidity.period", "period must be positive");
        }
        if r.isometry.len() != dim {
            v.fail("rigidity.isometry", "expected d translation entries");
        }
    }

    if v.errors.is_empty() {
        Ok(Scenario {
            name,
            dim,
            points,
            start,
            stop,
            samples,
            curve,
            rho,
            lambda,
            checks,
            report_path,
            series_path,
            snapshot_dir,
            rigidity,
        })
    } else {
        Err(ScenarioError::Invalid(v.errors))
    }
}

/// Serializes a scenario back to the file dialect; `parse_scenario` of the
/// output reproduces the scenario.
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {:?}", s.name);
    let _ = writeln!(out, "\n[grid]\nd = {}\nn = {}", s.dim, s.points);
    let _ = writeln!(
        out,
        "\n[interval]\nstart = {:?}\nstop = {:?}\nsamples = {}",
        s.start, s.stop, s.samples
    );
    fn write_curve(out: &mut String, prefix: &str, c: &CurveSpec) {
        match c {
            CurveSpec::Constant { entries } => {
                let _ = writeln!(out, "{prefix}kind = \"constant\"");
                let _ = writeln!(out, "{prefix}entries = {entries:?}");
            }
            CurveSpec::DiagonalExponential { rates } => {
                let _ = writeln!(out, "{prefix}kind = \"diagonal-exponential\"");
                let _ = writeln!(out, "{prefix}rates = {rates:?}");
            }
            CurveSpec::PeriodicDiagonal { epsilon, period } => {
                let _ = writeln!(out, "{prefix}kind = \"periodic-diagonal\"");
                let _ = writeln!(out, "{prefix}epsilon = {epsilon:?}");
                let _ = writeln!(out, "{prefix}period = {period:?}");
            }
            CurveSpec::Pullback {
                base,
                potential_mode,
                amplitude,
            } => {
                let _ = writeln!(out, "{prefix}kind = \"pullback\"");
                let _ = writeln!(out, "{prefix}potential_mode = {potential_mode:?}");
                let _ = writeln!(out, "{prefix}amplitude = {amplitude:?}");
                match base.as_ref() {
                    CurveSpec::Constant { entries } => {
                        let _ = writeln!(
                            out,
                            "{prefix}base = {{ kind = \"constant\", entries = {entries:?} }}"
                        );
                    }
                    CurveSpec::DiagonalExponential { rates } => {
                        let _ = writeln!(
                            out,
                            "{prefix}base = {{ kind = \"diagonal-exponential\", rates = {rates:?} }}"
                        );
                    }
                    CurveSpec::PeriodicDiagonal { epsilon, period } => {
                        let _ = writeln!(out, "{prefix}base = {{ kind = \"periodic-diagonal\", epsilon = {epsilon:?}, period = {period:?} }}");
                    }
                    CurveSpec::Pullback { .. } => unreachable!("nested pullbacks unsupported"),
                }
            }
        }
    }
    let _ = writeln!(out, "\n[curve]");
    write_curve(&mut out, "", &s.curve);
    let _ = writeln!(out, "\n[rho]");
    match &s.rho {
        RhoSpec::Constant { value } => {
            let _ = writeln!(out, "kind = \"constant\"\nvalue = {value:?}");
        }
        RhoSpec::Fourier { constant, modes } => {
            let _ = writeln!(out, "kind = \"fourier\"\nconstant = {constant:?}");
            for m in modes {
                let _ = writeln!(
                    out,
                    "[[rho.modes]]\nk = {:?}\namp = {:?}\nphase = {:?}",
                    m.k, m.amp, m.phase
                );
            }
        }
    }
    let _ = writeln!(
        out,
        "\n[lambda]\nanchor = {:?}\nvalue = {:?}\nslope = {:?}\ncomponent = {}",
        s.lambda.anchor, s.lambda.value, s.lambda.slope, s.lambda.component
    );
    for c in &s.checks {
        let _ = writeln!(out, "\n[[checks]]\nname = {:?}\ntol = {:?}", c.name, c.tol);
    }
    if s.report_path.is_some() || s.series_path.is_some() || s.snapshot_dir.is_some() {
        let _ = writeln!(out, "\n[output]");
        if let Some(p) = &s.report_path {
            let _ = writeln!(out, "report = {p:?}");
        }
        if let Some(p) = &s.series_path {
            let _ = writeln!(out, "series = {p:?}");
        }
        if let Some(p) = &s.snapshot_dir {
            let _ = writeln!(out, "snapshot_dir = {p:?}");
        }
    }
    if let Some(r) = &s.rigidity {
        let _ = writeln!(
            out,
            "\n[rigidity]\nperiod = {:?}\nisometry = {:?}",
            r.period, r.isometry
        );
    }
    out
}

/// Realized curve data: samples with analytic derivatives, plus the flow
/// record for pullback curves.
pub struct RealizedCurve {
    pub curve: MetricCurve,
    pub rho: ScalarCurve,
    pub sgrid: SGrid,
    pub grid: TorusGrid,
}

fn mode_potential(grid: TorusGrid, mode: &[i32]) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let mut v = 1.0;
        for (a, k) in mode.iter().enumerate() {
            if *k != 0 {
                v *= (2.0 * PI * *k as f64 * x[a]).sin();
            }
        }
        v
    })
}

fn constant_diag(spec: &CurveSpec, grid: TorusGrid, s: f64, deriv: bool) -> SymTensorField {
    let d = grid.dim();
    match spec {
        CurveSpec::Constant { entries } => {
            if deriv {
                SymTensorField::zeros(grid)
            } else {
                let mut mat = vec![0.0; d * d];
                let mut it = entries.iter();
                for i in 0..d {
                    for j in i..d {
                        let v = *it.next().expect("validated length");
                        mat[i * d + j] = v;
                        mat[j * d + i] = v;
                    }
                }
                SymTensorField::constant(grid, &mat)
            }
        }
        CurveSpec::DiagonalExponential { rates } => {
            let mut mat = vec![0.0; d * d];
            for (i, r) in rates.iter().enumerate() {
                let e = (2.0 * r * s).exp();
                mat[i * d + i] = if deriv { 2.0 * r * e } else { e };
            }
            SymTensorField::constant(grid, &mat)
        }
        CurveSpec::PeriodicDiagonal { epsilon, period } => {
            let phase = 2.0 * PI * s / period;
            let f = epsilon * phase.sin();
            let fdot = epsilon * 2.0 * PI / period * phase.cos();
            let mut mat = vec![0.0; d * d];
            let e0 = (2.0 * f).exp();
            let e1 = (-2.0 * f).exp();
            mat[0] = if deriv { 2.0 * fdot * e0 } else { e0 };
            mat[d + 1] = if deriv { -2.0 * fdot * e1 } else { e1 };
            for i in 2..d {
                mat[i * d + i] = if deriv { 0.0 } else { 1.0 };
            }
            SymTensorField::constant(grid, &mat)
        }
        CurveSpec::Pullback { .. } => unreachable!("handled by realize_curve"),
    }
}

/// Builds the sampled curve (with analytic derivatives) described by a spec.
pub fn realize_curve(
    spec: &CurveSpec,
    grid: TorusGrid,
    sgrid: SGrid,
) -> Result<MetricCurve, ScenarioError> {
    match spec {
        CurveSpec::Pullback {
            base,
            potential_mode,
            amplitude,
        } => {
            let inner = realize_curve(base, grid, sgrid)?;
            let potential = mode_potential(grid, potential_mode);
            let gens: Result<Vec<VectorField>, ScenarioError> = (0..sgrid.len())
                .map(|i| {
                    let ops = MetricOps::from_tensor(inner.sample(i).clone())?;
                    Ok(ops.grad(&potential).scaled(*amplitude))
                })
                .collect();
            let gen_curve = FieldCurve::new(sgrid, gens?)?;
            let family = crate::gauge::integrate_flow(&gen_curve, sgrid.start());
            Ok(crate::gauge::pullback_metric_curve(&family, &inner)?)
        }
        other => Ok(FieldCurve::from_fn_with_derivative(
            sgrid,
            |s| constant_diag(other, grid, s, false),
            |s| constant_diag(other, grid, s, true),
        )?),
    }
}

/// Builds the sampled Ricci profile (constant in `s`).
pub fn realize_rho(spec: &RhoSpec, grid: TorusGrid, sgrid: SGrid) -> ScalarCurve {
    let field = match spec {
        RhoSpec::Constant { value } => ScalarField::constant(grid, *value),
        RhoSpec::Fourier { constant, modes } => ScalarField::from_fn(grid, |x| {
            let mut v = *constant;
            for m in modes {
                let mut phase = 0.0;
                for (a, k) in m.k.iter().enumerate() {
                    phase += 2.0 * PI * *k as f64 * x[a];
                }
                v += m.amp * if m.phase == "sin" { phase.sin() } else { phase.cos() };
            }
            v
        }),
    };
    FieldCurve::from_fn(sgrid, |_| field.clone()).expect("validated sgrid")
}

impl Scenario {
    pub fn grid(&self) -> Result<TorusGrid, ScenarioError> {
        Ok(TorusGrid::new(self.dim, self.points)?)
    }

    pub fn sgrid(&self) -> Result<SGrid, ScenarioError> {
        Ok(SGrid::new(self.start, self.stop, self.samples)?)
    }

    pub fn realize(&self) -> Result<RealizedCurve, ScenarioError> {
        let grid = self.grid()?;
        let sgrid = self.sgrid()?;
        Ok(RealizedCurve {
            curve: realize_curve(&self.curve, grid, sgrid)?,
            rho: realize_rho(&self.rho, grid, sgrid),
            sgrid,
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
[grid]
d = 2
n = 32
[interval]
start = 0.0
stop = 1.0
samples = 11
[curve]
kind = "constant"
entries = [1.0, 0.0, 1.0]
[rho]
kind = "constant"
value = 0.0
[lambda]
anchor = 0.0
value = 1.0
"#;

    #[test]
    fn minimal_scenario_parses() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.name, "minimal");
        assert_eq!(s.dim, 2);
        assert!(matches!(s.curve, CurveSpec::Constant { .. }));
    }

    #[test]
    fn unknown_key_is_an_error_with_location() {
        let bad = MINIMAL.replace("[rho]", "lapse_mode = 3\n[rho]");
        let err = parse_scenario(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lapse_mode"), "{msg}");
        assert!(msg.contains("unknown key"), "{msg}");
    }

    #[test]
    fn errors_are_collected_not_fail_fast() {
        let bad = MINIMAL
            .replace("d = 2", "d = 9")
            .replace("samples = 11", "samples = 3");
        let err = parse_scenario(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.d"), "{msg}");
        assert!(msg.contains("interval.samples"), "{msg}");
    }

    #[test]
    fn diagonal_exponential_roundtrips() {
        let text = MINIMAL.replace(
            "kind = \"constant\"\nentries = [1.0, 0.0, 1.0]",
            "kind = \"diagonal-exponential\"\nrates = [2.0, -2.0]",
        );
        let s = parse_scenario(&text).unwrap();
        let serialized = serialize_scenario(&s);
        let s2 = parse_scenario(&serialized).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn full_scenario_roundtrips() {
        let s = Scenario {
            name: "full".into(),
            dim: 2,
            points: 32,
            start: -1.2,
            stop: 1.2,
            samples: 201,
            curve: CurveSpec::Pullback {
                base: Box::new(CurveSpec::DiagonalExponential {
                    rates: vec![1.0, -1.0],
                }),
                potential_mode: vec![1, 0],
                amplitude: 0.01,
            },
            rho: RhoSpec::Fourier {
                constant: 1.0,
                modes: vec![RhoMode {
                    k: vec![1, 0],
                    amp: 0.5,
                    phase: "sin".into(),
                }],
            },
            lambda: LambdaSpec {
                anchor: 0.0,
                value: 1.0,
                slope: 0.0,
                component: 0,
            },
            checks: vec![CheckSpec {
                name: "ricci-profile".into(),
                tol: 1e-6,
            }],
            report_path: Some("report.json".into()),
            series_path: None,
            snapshot_dir: Some("snaps".into()),
            rigidity: Some(RigiditySpec {
                period: 6.28,
                isometry: vec![0.0, 0.0],
            }),
        };
        let text = serialize_scenario(&s);
        let parsed = parse_scenario(&text).unwrap();
        assert_eq!(s, parsed);
    }

    #[test]
    fn unknown_check_name_rejected() {
        let bad = format!("{MINIMAL}\n[[checks]]\nname = \"bogus\"\ntol = 1e-6\n");
        let err = parse_scenario(&bad).unwrap_err();
        assert!(err.to_string().contains("unknown check"));
    }
}
