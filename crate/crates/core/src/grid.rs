//! Uniform periodic grids on `T^d = R^d / Z^d`, sampled fields and s-curves.
//!
//! Fields are stored in real space, row-major with axis 0 slowest. All
//! spatial calculus is spectral (see [`crate::spectral`]); derivatives of
//! curves in the parameter `s` use 4th-order finite differences unless
//! analytic derivative samples are attached to the curve.

use crate::spectral;
use thiserror::Error;

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension {0} unsupported, expected 1..=3")]
    BadDim(usize),
    #[error("points per axis must be a power of two >= 8, got {0}")]
    BadResolution(usize),
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("fields defined on different grids")]
    GridMismatch,
    #[error("s-grid needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("s-grid step must be positive")]
    BadStep,
    #[error("volume density must be positive (min {0})")]
    NonPositiveDensity(f64),
    #[error("component count {got} does not match the field kind (expected {expected})")]
    BadComponents { got: usize, expected: usize },
    #[error("curve samples disagree in length or grid")]
    InconsistentCurve,
}

/// Uniform grid on the unit d-torus with `n` points per axis.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, GridError> {
        if d == 0 || d > MAX_DIM {
            return Err(GridError::BadDim(d));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(GridError::BadResolution(n));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    /// Total number of grid points `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing along every axis.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Multi-index of a flat index, axis 0 slowest.
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize; MAX_DIM]) {
        for a in (0..self.d).rev() {
            out[a] = flat % self.n;
            flat /= self.n;
        }
    }

    pub fn flat_index(&self, multi: &[usize; MAX_DIM]) -> usize {
        let mut idx = 0;
        for a in 0..self.d {
            idx = idx * self.n + (multi[a] % self.n);
        }
        idx
    }

    /// Coordinates in `[0,1)^d` of a flat index.
    pub fn point(&self, flat: usize, out: &mut [f64; MAX_DIM]) {
        let mut mi = [0usize; MAX_DIM];
        self.multi_index(flat, &mut mi);
        let h = self.spacing();
        for a in 0..self.d {
            out[a] = mi[a] as f64 * h;
        }
    }

    /// Number of independent components of a symmetric 2-tensor.
    pub fn sym_len(&self) -> usize {
        self.d * (self.d + 1) / 2
    }
}

/// Packed index of the (i, j) component of a symmetric tensor, i <= j.
pub fn sym_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * d - i + 1) / 2 + (j - i)
}

/// Common storage shape shared by all sampled fields.
pub trait GridField: Clone + Send + Sync {
    fn grid(&self) -> TorusGrid;
    fn comps(&self) -> &[Vec<f64>];
    fn comps_mut(&mut self) -> &mut [Vec<f64>];
    fn from_comps(grid: TorusGrid, comps: Vec<Vec<f64>>) -> Self;
    fn comp_count(d: usize) -> usize;

    fn zeros(grid: TorusGrid) -> Self {
        let comps = vec![vec![0.0; grid.len()]; Self::comp_count(grid.dim())];
        Self::from_comps(grid, comps)
    }

    fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for comp in out.comps_mut() {
            for v in comp.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// self + c * other
    fn axpy(&self, c: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for (oc, rc) in out.comps_mut().iter_mut().zip(other.comps()) {
            for (o, r) in oc.iter_mut().zip(rc) {
                *o += c * r;
            }
        }
        out
    }

    fn sup_norm(&self) -> f64 {
        self.comps()
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.comps().iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

macro_rules! field_type {
    ($(#[$doc:meta])* $name:ident, $count:expr) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            grid: TorusGrid,
            comps: Vec<Vec<f64>>,
        }

        impl GridField for $name {
            fn grid(&self) -> TorusGrid {
                self.grid
            }
            fn comps(&self) -> &[Vec<f64>] {
                &self.comps
            }
            fn comps_mut(&mut self) -> &mut [Vec<f64>] {
                &mut self.comps
            }
            fn from_comps(grid: TorusGrid, comps: Vec<Vec<f64>>) -> Self {
                let expected = <Self as GridField>::comp_count(grid.dim());
                assert_eq!(comps.len(), expected, "component count mismatch");
                for c in &comps {
                    assert_eq!(c.len(), grid.len(), "component length mismatch");
                }
                Self { grid, comps }
            }
            fn comp_count(d: usize) -> usize {
                let _ = d;
                $count(d)
            }
        }
    };
}

field_type!(
    /// Real scalar field on a torus grid.
    ScalarField,
    |_d: usize| 1
);
field_type!(
    /// Contravariant vector field, one component per axis.
    VectorField,
    |d: usize| d
);
field_type!(
    /// Covariant 1-form field, one component per axis.
    CovectorField,
    |d: usize| d
);
field_type!(
    /// Symmetric covariant 2-tensor field, packed upper triangle.
    SymTensorField,
    |d: usize| d * (d + 1) / 2
);

impl ScalarField {
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut data = vec![0.0; grid.len()];
        let mut x = [0.0f64; MAX_DIM];
        for (idx, v) in data.iter_mut().enumerate() {
            grid.point(idx, &mut x);
            *v = f(&x[..grid.dim()]);
        }
        Self::from_comps(grid, vec![data])
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self::from_comps(grid, vec![vec![c; grid.len()]])
    }

    pub fn data(&self) -> &[f64] {
        &self.comps[0]
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.comps[0]
    }

    /// Plain average of the samples; exact integral over `[0,1)^d` for
    /// band-limited data.
    pub fn plain_mean(&self) -> f64 {
        self.comps[0].iter().sum::<f64>() / self.comps[0].len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.comps[0].iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }
}

impl VectorField {
    pub fn from_fns(grid: TorusGrid, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let mut comps = Vec::with_capacity(grid.dim());
        for i in 0..grid.dim() {
            let mut data = vec![0.0; grid.len()];
            let mut x = [0.0f64; MAX_DIM];
            for (idx, v) in data.iter_mut().enumerate() {
                grid.point(idx, &mut x);
                *v = f(i, &x[..grid.dim()]);
            }
            comps.push(data);
        }
        Self::from_comps(grid, comps)
    }

    pub fn comp(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }
}

impl CovectorField {
    pub fn comp(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }
}

impl SymTensorField {
    pub fn from_fns(grid: TorusGrid, f: impl Fn(usize, usize, &[f64]) -> f64) -> Self {
        let d = grid.dim();
        let mut comps = vec![vec![0.0; grid.len()]; grid.sym_len()];
        let mut x = [0.0f64; MAX_DIM];
        for idx in 0..grid.len() {
            grid.point(idx, &mut x);
            for i in 0..d {
                for j in i..d {
                    comps[sym_index(d, i, j)][idx] = f(i, j, &x[..d]);
                }
            }
        }
        Self::from_comps(grid, comps)
    }

    /// Constant-coefficient tensor from a row-major `d x d` symmetric matrix.
    pub fn constant(grid: TorusGrid, mat: &[f64]) -> Self {
        let d = grid.dim();
        Self::from_fns(grid, |i, j, _| mat[i * d + j])
    }

    pub fn comp(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[sym_index(self.grid.dim(), i, j)]
    }

    /// Value of the (i, j) component at a flat grid index.
    pub fn at(&self, i: usize, j: usize, idx: usize) -> f64 {
        self.comps[sym_index(self.grid.dim(), i, j)][idx]
    }
}

/// Uniform sampling of a parameter interval `[start, stop]`, endpoints
/// included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SGrid {
    start: f64,
    stop: f64,
    samples: usize,
}

/// Minimum sample count: 4th-order stencils need 9 points to be meaningful.
pub const MIN_S_SAMPLES: usize = 9;

impl SGrid {
    pub fn new(start: f64, stop: f64, samples: usize) -> Result<Self, GridError> {
        if samples < MIN_S_SAMPLES {
            return Err(GridError::TooFewSamples {
                min: MIN_S_SAMPLES,
                got: samples,
            });
        }
        if !(stop - start).is_finite() || stop <= start {
            return Err(GridError::BadStep);
        }
        Ok(Self {
            start,
            stop,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn ds(&self) -> f64 {
        (self.stop - self.start) / (self.samples - 1) as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.start + self.ds() * i as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.samples).map(|i| self.s(i)).collect()
    }

    /// Restriction to the sample index range `[lo, hi]` (inclusive).
    pub fn restrict(&self, lo: usize, hi: usize) -> Result<SGrid, GridError> {
        SGrid::new(self.s(lo), self.s(hi), hi + 1 - lo)
    }
}

/// An s-sampled curve of fields, optionally with analytic derivative samples.
#[derive(Clone, Debug)]
pub struct FieldCurve<F: GridField> {
    sgrid: SGrid,
    samples: Vec<F>,
    derivative: Option<Vec<F>>,
}

pub type ScalarCurve = FieldCurve<ScalarField>;
pub type MetricCurve = FieldCurve<SymTensorField>;

impl<F: GridField> FieldCurve<F> {
    pub fn new(sgrid: SGrid, samples: Vec<F>) -> Result<Self, GridError> {
        Self::with_derivative(sgrid, samples, None)
    }

    pub fn with_derivative(
        sgrid: SGrid,
        samples: Vec<F>,
        derivative: Option<Vec<F>>,
    ) -> Result<Self, GridError> {
        if samples.len() != sgrid.len() {
            return Err(GridError::InconsistentCurve);
        }
        let grid = samples[0].grid();
        if samples.iter().any(|f| f.grid() != grid) {
            return Err(GridError::InconsistentCurve);
        }
        if let Some(der) = &derivative {
            if der.len() != samples.len() || der.iter().any(|f| f.grid() != grid) {
                return Err(GridError::InconsistentCurve);
            }
        }
        Ok(Self {
            sgrid,
            samples,
            derivative,
        })
    }

    pub fn from_fn(sgrid: SGrid, f: impl Fn(f64) -> F) -> Result<Self, GridError> {
        let samples = (0..sgrid.len()).map(|i| f(sgrid.s(i))).collect();
        Self::new(sgrid, samples)
    }

    pub fn from_fn_with_derivative(
        sgrid: SGrid,
        f: impl Fn(f64) -> F,
        df: impl Fn(f64) -> F,
    ) -> Result<Self, GridError> {
        let samples = (0..sgrid.len()).map(|i| f(sgrid.s(i))).collect();
        let der = (0..sgrid.len()).map(|i| df(sgrid.s(i))).collect();
        Self::with_derivative(sgrid, samples, Some(der))
    }

    pub fn sgrid(&self) -> SGrid {
        self.sgrid
    }

    pub fn grid(&self) -> TorusGrid {
        self.samples[0].grid()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample(&self, i: usize) -> &F {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[F] {
        &self.samples
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn analytic_derivative(&self) -> Option<&[F]> {
        self.derivative.as_deref()
    }

    /// Samples of the s-derivative: analytic ones when attached, otherwise
    /// 4th-order finite differences (one-sided 5-point stencils at the ends).
    pub fn derivative_samples(&self) -> Vec<F> {
        if let Some(der) = &self.derivative {
            return der.clone();
        }
        fd4_derivative(&self.samples, self.sgrid.ds())
    }

    /// Curve of the s-derivative, sharing the parameter grid.
    pub fn s_derivative(&self) -> FieldCurve<F> {
        FieldCurve {
            sgrid: self.sgrid,
            samples: self.derivative_samples(),
            derivative: None,
        }
    }

    /// Restriction to the sample index range `[lo, hi]` (inclusive).
    pub fn restrict(&self, lo: usize, hi: usize) -> Result<FieldCurve<F>, GridError> {
        let sgrid = self.sgrid.restrict(lo, hi)?;
        Ok(FieldCurve {
            sgrid,
            samples: self.samples[lo..=hi].to_vec(),
            derivative: self.derivative.as_ref().map(|d| d[lo..=hi].to_vec()),
        })
    }

    pub fn map(&self, f: impl Fn(usize, &F) -> F) -> FieldCurve<F> {
        FieldCurve {
            sgrid: self.sgrid,
            samples: self
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| f(i, s))
                .collect(),
            derivative: None,
        }
    }
}

/// 4th-order finite-difference derivative of sampled data, exact on
/// polynomials of degree <= 4.
pub fn fd4_derivative<F: GridField>(samples: &[F], ds: f64) -> Vec<F> {
    assert!(samples.len() >= MIN_S_SAMPLES);
    let m = samples.len();
    let mut out = Vec::with_capacity(m);
    // one-sided 5-point weights for the first two samples
    let w0 = [-25.0, 48.0, -36.0, 16.0, -3.0];
    let w1 = [-3.0, -10.0, 18.0, -6.0, 1.0];
    let combine = |terms: &[(f64, usize)]| -> F {
        let mut acc = F::zeros(samples[0].grid());
        for &(w, idx) in terms {
            acc = acc.axpy(w / (12.0 * ds), &samples[idx]);
        }
        acc
    };
    for i in 0..m {
        let field = if i == 0 {
            combine(&[(w0[0], 0), (w0[1], 1), (w0[2], 2), (w0[3], 3), (w0[4], 4)])
        } else if i == 1 {
            combine(&[(w1[0], 0), (w1[1], 1), (w1[2], 2), (w1[3], 3), (w1[4], 4)])
        } else if i == m - 2 {
            combine(&[
                (-w1[0], m - 1),
                (-w1[1], m - 2),
                (-w1[2], m - 3),
                (-w1[3], m - 4),
                (-w1[4], m - 5),
            ])
        } else if i == m - 1 {
            combine(&[
                (-w0[0], m - 1),
                (-w0[1], m - 2),
                (-w0[2], m - 3),
                (-w0[3], m - 4),
                (-w0[4], m - 5),
            ])
        } else {
            combine(&[(1.0, i - 2), (-8.0, i - 1), (8.0, i + 1), (-1.0, i + 2)])
        };
        out.push(field);
    }
    out
}

/// Exact derivative of the trigonometric interpolant along a coordinate axis.
///
/// The Nyquist mode of the (odd) first derivative is zeroed.
pub fn spectral_diff<F: GridField>(field: &F, axis: usize) -> Result<F, GridError> {
    let grid = field.grid();
    if axis >= grid.dim() {
        return Err(GridError::AxisOutOfRange {
            axis,
            dim: grid.dim(),
        });
    }
    let mut out = field.clone();
    for comp in out.comps_mut() {
        spectral::diff_axis(grid, comp, axis);
    }
    Ok(out)
}

/// Integral of `field * volume_density` over the torus (unit coordinate cell).
pub fn integrate(field: &ScalarField, volume_density: &ScalarField) -> Result<f64, GridError> {
    if field.grid() != volume_density.grid() {
        return Err(GridError::GridMismatch);
    }
    let min = volume_density.min_value();
    if !(min > 0.0) {
        return Err(GridError::NonPositiveDensity(min));
    }
    let n = field.data().len() as f64;
    Ok(field
        .data()
        .iter()
        .zip(volume_density.data())
        .map(|(f, w)| f * w)
        .sum::<f64>()
        / n)
}

/// Mean of `field` with respect to the volume density.
pub fn mean(field: &ScalarField, volume_density: &ScalarField) -> Result<f64, GridError> {
    let total = integrate(field, volume_density)?;
    let vol = volume_density.plain_mean();
    Ok(total / vol)
}

/// Trigonometric (Fourier) interpolation of a scalar field at arbitrary
/// points; exact for band-limited data, points wrapped modulo 1.
pub fn interpolate(field: &ScalarField, points: &[[f64; MAX_DIM]]) -> Vec<f64> {
    let coeffs = spectral::Coeffs::from_real(field.grid(), field.data());
    let eval = spectral::PointEvaluator::new(field.grid(), points);
    eval.eval(&coeffs)
}
