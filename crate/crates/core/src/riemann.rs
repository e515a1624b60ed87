//! Christoffel symbols, curvature tensors and tensor-calculus operators for
//! x-dependent Riemannian metrics on the torus grid.
//!
//! Everything is built from spectral derivatives of the sampled metric; there
//! is no symbolic path. Curvature convention:
//! `R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_{[X,Y]} Z`,
//! lowered as `R_{ijkl} = g(R(e_i,e_j)e_k, e_l)`.

use crate::grid::{
    integrate, mean, spectral_diff, sym_index, CovectorField, FieldCurve, GridError, GridField,
    MetricCurve, ScalarField, SymTensorField, TorusGrid, VectorField,
};
use crate::linalg;
use thiserror::Error;

/// Smallest admissible metric eigenvalue at a grid point.
pub const SPD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RiemannError {
    #[error("metric is not positive definite (min eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("metric inverse residual {0:.3e} exceeds 1e-12")]
    BadInverse(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A positive-definite metric with cached pointwise inverse and volume factor.
#[derive(Clone, Debug)]
pub struct MetricField {
    g: SymTensorField,
    inv: SymTensorField,
    sqrt_det: ScalarField,
    min_eig: f64,
}

impl MetricField {
    pub fn new(g: SymTensorField) -> Result<Self, RiemannError> {
        let grid = g.grid();
        let d = grid.dim();
        let mut inv = SymTensorField::zeros(grid);
        let mut sqrt_det = ScalarField::zeros(grid);
        let mut min_eig = f64::INFINITY;
        let mut packed = vec![0.0; grid.sym_len()];
        for idx in 0..grid.len() {
            for c in 0..grid.sym_len() {
                packed[c] = g.comps()[c][idx];
            }
            let m = linalg::from_packed(d, &packed);
            let minors = linalg::principal_minors(d, &m);
            if minors[..d].iter().any(|v| *v <= 0.0) {
                return Err(RiemannError::NotPositiveDefinite(
                    linalg::min_eigenvalue(d, &m),
                ));
            }
            min_eig = min_eig.min(linalg::min_eigenvalue(d, &m));
            let mi = linalg::inverse(d, &m);
            let mut pk = vec![0.0; grid.sym_len()];
            linalg::to_packed(d, &mi, &mut pk);
            for c in 0..grid.sym_len() {
                inv.comps_mut()[c][idx] = pk[c];
            }
            sqrt_det.data_mut()[idx] = linalg::det(d, &m).sqrt();
        }
        if min_eig <= SPD_TOL {
            return Err(RiemannError::NotPositiveDefinite(min_eig));
        }
        let out = Self {
            g,
            inv,
            sqrt_det,
            min_eig,
        };
        let res = out.inverse_residual();
        if res > 1e-12 {
            return Err(RiemannError::BadInverse(res));
        }
        Ok(out)
    }

    fn inverse_residual(&self) -> f64 {
        let grid = self.g.grid();
        let d = grid.dim();
        let mut worst = 0.0f64;
        for idx in 0..grid.len() {
            for i in 0..d {
                for j in 0..d {
                    let mut v = 0.0;
                    for k in 0..d {
                        v += self.g.at(i, k, idx) * self.inv.at(k, j, idx);
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((v - expect).abs() / self.min_eig.max(1.0));
                }
            }
        }
        worst
    }

    pub fn grid(&self) -> TorusGrid {
        self.g.grid()
    }

    pub fn tensor(&self) -> &SymTensorField {
        &self.g
    }

    pub fn inverse(&self) -> &SymTensorField {
        &self.inv
    }

    pub fn sqrt_det(&self) -> &ScalarField {
        &self.sqrt_det
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    /// Total volume of the torus in this metric.
    pub fn volume(&self) -> f64 {
        self.sqrt_det.plain_mean()
    }

    /// Orthonormal coframe by pointwise Cholesky: columns of the returned
    /// matrices are the frame vectors `E_a` with `g(E_a, E_b) = delta_ab`.
    pub fn cholesky_frame(&self, idx: usize) -> linalg::SmallMat {
        let d = self.grid().dim();
        let mut packed = vec![0.0; self.grid().sym_len()];
        for c in 0..self.grid().sym_len() {
            packed[c] = self.g.comps()[c][idx];
        }
        let m = linalg::from_packed(d, &packed);
        let l = linalg::cholesky(d, &m);
        linalg::inv_transpose_lower(d, &l)
    }
}

/// Christoffel symbols `Gamma^k_{ij}`, symmetric in the lower pair.
#[derive(Clone, Debug)]
pub struct ChristoffelField {
    grid: TorusGrid,
    // comps[k][sym(i,j)][point]
    comps: Vec<Vec<Vec<f64>>>,
}

impl ChristoffelField {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn at(&self, k: usize, i: usize, j: usize, idx: usize) -> f64 {
        self.comps[k][sym_index(self.grid.dim(), i, j)][idx]
    }

    pub fn comp(&self, k: usize, i: usize, j: usize) -> &[f64] {
        &self.comps[k][sym_index(self.grid.dim(), i, j)]
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `Gamma^k_{ij} = 1/2 g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij})`.
pub fn christoffel(metric: &MetricField) -> ChristoffelField {
    let grid = metric.grid();
    let d = grid.dim();
    let len = grid.len();
    // dg[a][sym(i,j)]
    let dg: Vec<SymTensorField> = (0..d)
        .map(|a| spectral_diff(metric.tensor(), a).expect("axis in range"))
        .collect();
    let mut comps = vec![vec![vec![0.0; len]; grid.sym_len()]; d];
    for k in 0..d {
        for i in 0..d {
            for j in i..d {
                let slot = sym_index(d, i, j);
                for idx in 0..len {
                    let mut v = 0.0;
                    for l in 0..d {
                        let term =
                            dg[i].at(j, l, idx) + dg[j].at(i, l, idx) - dg[l].at(i, j, idx);
                        v += 0.5 * metric.inverse().at(k, l, idx) * term;
                    }
                    comps[k][slot][idx] = v;
                }
            }
        }
    }
    ChristoffelField { grid, comps }
}

/// Metric together with its Christoffel symbols; the working handle for all
/// covariant operators.
#[derive(Clone, Debug)]
pub struct MetricOps {
    pub metric: MetricField,
    pub gamma: ChristoffelField,
}

impl MetricOps {
    pub fn new(metric: MetricField) -> Self {
        let gamma = christoffel(&metric);
        Self { metric, gamma }
    }

    pub fn from_tensor(g: SymTensorField) -> Result<Self, RiemannError> {
        Ok(Self::new(MetricField::new(g)?))
    }

    pub fn grid(&self) -> TorusGrid {
        self.metric.grid()
    }

    fn dim(&self) -> usize {
        self.grid().dim()
    }

    /// Gradient vector `g^{ij} d_j f`.
    pub fn grad(&self, f: &ScalarField) -> VectorField {
        let d = self.dim();
        let df: Vec<ScalarField> = (0..d)
            .map(|a| spectral_diff(f, a).expect("axis in range"))
            .collect();
        let mut comps = vec![vec![0.0; self.grid().len()]; d];
        for i in 0..d {
            for idx in 0..self.grid().len() {
                let mut v = 0.0;
                for j in 0..d {
                    v += self.metric.inverse().at(i, j, idx) * df[j].data()[idx];
                }
                comps[i][idx] = v;
            }
        }
        VectorField::from_comps(self.grid(), comps)
    }

    /// Squared gradient norm `|df|^2_g`.
    pub fn grad_norm_sq(&self, f: &ScalarField) -> ScalarField {
        let d = self.dim();
        let df: Vec<ScalarField> = (0..d)
            .map(|a| spectral_diff(f, a).expect("axis in range"))
            .collect();
        let mut out = ScalarField::zeros(self.grid());
        for idx in 0..self.grid().len() {
            let mut v = 0.0;
            for i in 0..d {
                for j in 0..d {
                    v += self.metric.inverse().at(i, j, idx) * df[i].data()[idx] * df[j].data()[idx];
                }
            }
            out.data_mut()[idx] = v;
        }
        out
    }

    /// Lower the index of a vector field.
    pub fn lower(&self, x: &VectorField) -> CovectorField {
        let d = self.dim();
        let mut comps = vec![vec![0.0; self.grid().len()]; d];
        for j in 0..d {
            for idx in 0..self.grid().len() {
                let mut v = 0.0;
                for k in 0..d {
                    v += self.metric.tensor().at(j, k, idx) * x.comp(k)[idx];
                }
                comps[j][idx] = v;
            }
        }
        CovectorField::from_comps(self.grid(), comps)
    }

    /// Raise the index of a 1-form.
    pub fn raise(&self, w: &CovectorField) -> VectorField {
        let d = self.dim();
        let mut comps = vec![vec![0.0; self.grid().len()]; d];
        for i in 0..d {
            for idx in 0..self.grid().len() {
                let mut v = 0.0;
                for j in 0..d {
                    v += self.metric.inverse().at(i, j, idx) * w.comp(j)[idx];
                }
                comps[i][idx] = v;
            }
        }
        VectorField::from_comps(self.grid(), comps)
    }

    /// `(div h)_j = g^{ab} (nabla_a h)_{bj}` for a symmetric 2-tensor.
    pub fn divergence(&self, h: &SymTensorField) -> Result<CovectorField, RiemannError> {
        if h.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let d = self.dim();
        let len = self.grid().len();
        let dh: Vec<SymTensorField> = (0..d)
            .map(|a| spectral_diff(h, a).expect("axis in range"))
            .collect();
        let mut comps = vec![vec![0.0; len]; d];
        for j in 0..d {
            for idx in 0..len {
                let mut v = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        let mut cov = dh[a].at(b, j, idx);
                        for c in 0..d {
                            cov -= self.gamma.at(c, a, b, idx) * h.at(c, j, idx);
                            cov -= self.gamma.at(c, a, j, idx) * h.at(b, c, idx);
                        }
                        v += self.metric.inverse().at(a, b, idx) * cov;
                    }
                }
                comps[j][idx] = v;
            }
        }
        Ok(CovectorField::from_comps(self.grid(), comps))
    }

    /// `tr h = g^{ij} h_{ij}`.
    pub fn trace(&self, h: &SymTensorField) -> Result<ScalarField, RiemannError> {
        if h.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let d = self.dim();
        let mut out = ScalarField::zeros(self.grid());
        for idx in 0..self.grid().len() {
            let mut v = 0.0;
            for i in 0..d {
                for j in 0..d {
                    v += self.metric.inverse().at(i, j, idx) * h.at(i, j, idx);
                }
            }
            out.data_mut()[idx] = v;
        }
        Ok(out)
    }

    /// Hessian `(nabla^2 f)_{ij} = d_i d_j f - Gamma^k_{ij} d_k f`.
    pub fn hessian(&self, f: &ScalarField) -> Result<SymTensorField, RiemannError> {
        if f.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let d = self.dim();
        let df: Vec<ScalarField> = (0..d)
            .map(|a| spectral_diff(f, a).expect("axis in range"))
            .collect();
        let mut out = SymTensorField::zeros(self.grid());
        for i in 0..d {
            for j in i..d {
                let ddf = spectral_diff(&df[j], i).expect("axis in range");
                let slot = sym_index(d, i, j);
                for idx in 0..self.grid().len() {
                    let mut v = ddf.data()[idx];
                    for k in 0..d {
                        v -= self.gamma.at(k, i, j, idx) * df[k].data()[idx];
                    }
                    out.comps_mut()[slot][idx] = v;
                }
            }
        }
        Ok(out)
    }

    /// `(L_X g)_{ij} = nabla_i X_j + nabla_j X_i` with the lowered field.
    pub fn lie_metric(&self, x: &VectorField) -> Result<SymTensorField, RiemannError> {
        if x.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        Ok(self.killing_operator(&self.lower(x)))
    }

    /// Same as [`Self::lie_metric`] but acting on the lowered components.
    pub fn killing_operator(&self, w: &CovectorField) -> SymTensorField {
        let d = self.dim();
        let dw: Vec<CovectorField> = (0..d)
            .map(|a| spectral_diff(w, a).expect("axis in range"))
            .collect();
        let mut out = SymTensorField::zeros(self.grid());
        for i in 0..d {
            for j in i..d {
                let slot = sym_index(d, i, j);
                for idx in 0..self.grid().len() {
                    let mut v = dw[i].comp(j)[idx] + dw[j].comp(i)[idx];
                    for k in 0..d {
                        v -= 2.0 * self.gamma.at(k, i, j, idx) * w.comp(k)[idx];
                    }
                    out.comps_mut()[slot][idx] = v;
                }
            }
        }
        out
    }

    /// Covariant derivative of a 1-form: `T_{a i} = nabla_a w_i` in the full
    /// (unpacked) layout `out[a][i]`.
    pub fn covariant_derivative_covector(&self, w: &CovectorField) -> Vec<Vec<Vec<f64>>> {
        let d = self.dim();
        let len = self.grid().len();
        let dw: Vec<CovectorField> = (0..d)
            .map(|a| spectral_diff(w, a).expect("axis in range"))
            .collect();
        let mut out = vec![vec![vec![0.0; len]; d]; d];
        for a in 0..d {
            for i in 0..d {
                for idx in 0..len {
                    let mut v = dw[a].comp(i)[idx];
                    for k in 0..d {
                        v -= self.gamma.at(k, a, i, idx) * w.comp(k)[idx];
                    }
                    out[a][i][idx] = v;
                }
            }
        }
        out
    }

    /// Laplace-Beltrami operator `div grad f` (analyst sign convention).
    pub fn laplace_beltrami(&self, f: &ScalarField) -> ScalarField {
        let grid = self.grid();
        let d = self.dim();
        let df: Vec<ScalarField> = (0..d)
            .map(|a| spectral_diff(f, a).expect("axis in range"))
            .collect();
        // (1/sqrt g) d_i ( sqrt g g^{ij} d_j f )
        let mut out = ScalarField::zeros(grid);
        for i in 0..d {
            let mut flux = ScalarField::zeros(grid);
            for idx in 0..grid.len() {
                let mut v = 0.0;
                for j in 0..d {
                    v += self.metric.inverse().at(i, j, idx) * df[j].data()[idx];
                }
                flux.data_mut()[idx] = v * self.metric.sqrt_det().data()[idx];
            }
            let dflux = spectral_diff(&flux, i).expect("axis in range");
            for idx in 0..grid.len() {
                out.data_mut()[idx] += dflux.data()[idx];
            }
        }
        for idx in 0..grid.len() {
            out.data_mut()[idx] /= self.metric.sqrt_det().data()[idx];
        }
        out
    }

    /// Pointwise squared norm `|h|^2_g = g^{ik} g^{jl} h_{ij} h_{kl}`.
    pub fn norm_sq_symtensor(&self, h: &SymTensorField) -> ScalarField {
        let d = self.dim();
        let mut out = ScalarField::zeros(self.grid());
        for idx in 0..self.grid().len() {
            let mut v = 0.0;
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            v += self.metric.inverse().at(i, k, idx)
                                * self.metric.inverse().at(j, l, idx)
                                * h.at(i, j, idx)
                                * h.at(k, l, idx);
                        }
                    }
                }
            }
            out.data_mut()[idx] = v;
        }
        out
    }

    /// L2 inner product of two symmetric tensors with respect to dvol_g.
    pub fn l2_inner_symtensor(&self, a: &SymTensorField, b: &SymTensorField) -> f64 {
        let d = self.dim();
        let mut acc = ScalarField::zeros(self.grid());
        for idx in 0..self.grid().len() {
            let mut v = 0.0;
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            v += self.metric.inverse().at(i, k, idx)
                                * self.metric.inverse().at(j, l, idx)
                                * a.at(i, j, idx)
                                * b.at(k, l, idx);
                        }
                    }
                }
            }
            acc.data_mut()[idx] = v;
        }
        integrate(&acc, self.metric.sqrt_det()).expect("positive density")
    }

    pub fn mean_scalar(&self, f: &ScalarField) -> f64 {
        mean(f, self.metric.sqrt_det()).expect("positive density")
    }
}

/// Full curvature data of a metric.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub ricci: SymTensorField,
    pub scal: ScalarField,
    /// Lowered tensor `R_{ijkl}`, layout `comps[((i d + j) d + k) d + l]`.
    pub riemann: Vec<Vec<f64>>,
}

impl CurvatureData {
    pub fn riemann_at(&self, d: usize, i: usize, j: usize, k: usize, l: usize, idx: usize) -> f64 {
        self.riemann[((i * d + j) * d + k) * d + l][idx]
    }
}

/// Ricci tensor plus the full Riemann tensor and scalar curvature.
pub fn curvature(ops: &MetricOps) -> CurvatureData {
    let grid = ops.grid();
    let d = grid.dim();
    let len = grid.len();
    // dGamma[a][k][sym(i,j)]
    let mut dgamma = vec![vec![vec![vec![0.0; len]; grid.sym_len()]; d]; d];
    for a in 0..d {
        for k in 0..d {
            for slot in 0..grid.sym_len() {
                let mut data = ops.gamma.comps[k][slot].clone();
                crate::spectral::diff_axis(grid, &mut data, a);
                dgamma[a][k][slot] = data;
            }
        }
    }
    let gm = |k: usize, i: usize, j: usize, idx: usize| ops.gamma.at(k, i, j, idx);
    let dgm = |a: usize, k: usize, i: usize, j: usize, idx: usize| {
        dgamma[a][k][sym_index(d, i, j)][idx]
    };

    // R^m_{k;ij}: coefficient of R(e_i, e_j) e_k along e_m
    let coeff = |m: usize, k: usize, i: usize, j: usize, idx: usize| {
        let mut v = dgm(i, m, j, k, idx) - dgm(j, m, i, k, idx);
        for a in 0..d {
            v += gm(m, i, a, idx) * gm(a, j, k, idx) - gm(m, j, a, idx) * gm(a, i, k, idx);
        }
        v
    };

    let mut riemann = vec![vec![0.0; len]; d * d * d * d];
    let mut ricci = SymTensorField::zeros(grid);
    let mut scal = ScalarField::zeros(grid);
    for idx in 0..len {
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let mut v = 0.0;
                        for m in 0..d {
                            v += ops.metric.tensor().at(l, m, idx) * coeff(m, k, i, j, idx);
                        }
                        riemann[((i * d + j) * d + k) * d + l][idx] = v;
                    }
                }
            }
        }
        for j in 0..d {
            for k in j..d {
                // ric_{jk} = R^i_{k;ij}, symmetrized
                let mut v = 0.0;
                for i in 0..d {
                    v += 0.5 * (coeff(i, k, i, j, idx) + coeff(i, j, i, k, idx));
                }
                ricci.comps_mut()[sym_index(d, j, k)][idx] = v;
            }
        }
        let mut s = 0.0;
        for j in 0..d {
            for k in 0..d {
                s += ops.metric.inverse().at(j, k, idx) * ricci.at(j, k, idx);
            }
        }
        scal.data_mut()[idx] = s;
    }
    CurvatureData {
        ricci,
        scal,
        riemann,
    }
}

/// Ricci tensor of a metric.
pub fn ricci(ops: &MetricOps) -> SymTensorField {
    curvature(ops).ricci
}

/// Lichnerowicz Laplacian `Delta_L h = nabla* nabla h - 2 Rcirc h`, with
/// `Rcirc` normalized so that `Rcirc g = ric`; reduces to the connection
/// Laplacian on flat metrics.
pub fn lichnerowicz(ops: &MetricOps, h: &SymTensorField) -> Result<SymTensorField, RiemannError> {
    let grid = ops.grid();
    if h.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let d = grid.dim();
    let len = grid.len();
    // first covariant derivative, full layout cov1[a][i][j]
    let dh: Vec<SymTensorField> = (0..d)
        .map(|a| spectral_diff(h, a).expect("axis in range"))
        .collect();
    let mut cov1 = vec![vec![vec![vec![0.0; len]; d]; d]; d];
    for a in 0..d {
        for i in 0..d {
            for j in 0..d {
                for idx in 0..len {
                    let mut v = dh[a].at(i, j, idx);
                    for c in 0..d {
                        v -= ops.gamma.at(c, a, i, idx) * h.at(c, j, idx);
                        v -= ops.gamma.at(c, a, j, idx) * h.at(i, c, idx);
                    }
                    cov1[a][i][j][idx] = v;
                }
            }
        }
    }
    // d_b of cov1
    let mut dcov = vec![vec![vec![vec![vec![0.0; len]; d]; d]; d]; d];
    for b in 0..d {
        for a in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut data = cov1[a][i][j].clone();
                    crate::spectral::diff_axis(grid, &mut data, b);
                    dcov[b][a][i][j] = data;
                }
            }
        }
    }
    let curv = curvature(ops);
    let mut out = SymTensorField::zeros(grid);
    for i in 0..d {
        for j in i..d {
            let slot = sym_index(d, i, j);
            for idx in 0..len {
                // rough Laplacian: -g^{ab} (nabla_b nabla_a h)_{ij}
                let mut rough = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        let mut v = dcov[b][a][i][j][idx];
                        for c in 0..d {
                            v -= ops.gamma.at(c, b, a, idx) * cov1[c][i][j][idx];
                            v -= ops.gamma.at(c, b, i, idx) * cov1[a][c][j][idx];
                            v -= ops.gamma.at(c, b, j, idx) * cov1[a][i][c][idx];
                        }
                        rough -= ops.metric.inverse().at(a, b, idx) * v;
                    }
                }
                // curvature action: (Rcirc h)_{ij} = -g^{ac} g^{bd} R_{icjd} h_{ab}
                let mut rc = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        for c in 0..d {
                            for e in 0..d {
                                rc -= ops.metric.inverse().at(a, c, idx)
                                    * ops.metric.inverse().at(b, e, idx)
                                    * curv.riemann_at(d, i, c, j, e, idx)
                                    * h.at(a, b, idx);
                            }
                        }
                    }
                }
                out.comps_mut()[slot][idx] = rough - 2.0 * rc;
            }
        }
    }
    Ok(out)
}

/// Per-sample residual of the leaf-joining equation:
/// `div^{g_s}(gdot_s) - d tr^{g_s}(gdot_s)`.
pub fn j_residual(curve: &MetricCurve) -> Result<FieldCurve<CovectorField>, RiemannError> {
    let der = curve.derivative_samples();
    let mut out = Vec::with_capacity(curve.len());
    for (g, gdot) in curve.samples().iter().zip(&der) {
        let ops = MetricOps::from_tensor(g.clone())?;
        out.push(j_residual_at(&ops, gdot)?);
    }
    Ok(FieldCurve::new(curve.sgrid(), out)?)
}

/// `div^g h - d tr^g h` for a single sample.
pub fn j_residual_at(ops: &MetricOps, h: &SymTensorField) -> Result<CovectorField, RiemannError> {
    let div = ops.divergence(h)?;
    let tr = ops.trace(h)?;
    let d = ops.grid().dim();
    let mut comps = Vec::with_capacity(d);
    for a in 0..d {
        let dtr = spectral_diff(&tr, a).expect("axis in range");
        let mut c = div.comp(a).to_vec();
        for (v, t) in c.iter_mut().zip(dtr.data()) {
            *v -= t;
        }
        comps.push(c);
    }
    Ok(CovectorField::from_comps(ops.grid(), comps))
}

/// Max-norm of the Ricci tensor; used as the flatness gate.
pub fn ricci_residual(g: &SymTensorField) -> Result<f64, RiemannError> {
    let ops = MetricOps::from_tensor(g.clone())?;
    Ok(ricci(&ops).sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SGrid;
    use std::f64::consts::PI;

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    fn flat2() -> MetricOps {
        MetricOps::from_tensor(SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0])).unwrap()
    }

    #[test]
    fn christoffel_of_constant_metric_vanishes() {
        let ops = MetricOps::from_tensor(SymTensorField::constant(
            grid2(),
            &[2.0, 0.3, 0.3, 1.0],
        ))
        .unwrap();
        assert!(ops.gamma.sup_norm() < 1e-13);
    }

    #[test]
    fn conformal_christoffel_closed_form() {
        // g = e^{2 phi} delta with phi = eps sin(2 pi x1): Gamma^1_{11} = d1 phi
        let g = grid2();
        let eps = 0.1;
        let phi = ScalarField::from_fn(g, |x| eps * (2.0 * PI * x[0]).sin());
        let conf = SymTensorField::from_fns(g, |i, j, x| {
            let e = (2.0 * eps * (2.0 * PI * x[0]).sin()).exp();
            if i == j {
                e
            } else {
                0.0
            }
        });
        let ops = MetricOps::from_tensor(conf).unwrap();
        let dphi = spectral_diff(&phi, 0).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..g.len() {
            worst = worst.max((ops.gamma.at(0, 0, 0, idx) - dphi.data()[idx]).abs());
        }
        assert!(worst < 1e-10, "worst {worst}");
    }

    #[test]
    fn ricci_of_constant_metric_vanishes() {
        let ops = MetricOps::from_tensor(SymTensorField::constant(
            grid2(),
            &[3.0, 0.5, 0.5, 2.0],
        ))
        .unwrap();
        assert!(ricci(&ops).sup_norm() < 1e-11);
    }

    #[test]
    fn rejects_non_spd_metric() {
        let g = SymTensorField::constant(grid2(), &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            MetricField::new(g),
            Err(RiemannError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn gauss_bonnet_on_bumpy_torus() {
        // integral of scal dvol vanishes on T^2 for any metric
        let g = grid2();
        let bump = SymTensorField::from_fns(g, |i, j, x| {
            let w = 0.25 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
            match (i, j) {
                (0, 0) => 1.0 + w,
                (1, 1) => 1.2 - 0.5 * w,
                _ => 0.1 * (2.0 * PI * (x[0] + x[1])).sin(),
            }
        });
        let ops = MetricOps::from_tensor(bump).unwrap();
        let curv = curvature(&ops);
        let total = integrate(&curv.scal, ops.metric.sqrt_det()).unwrap();
        assert!(total.abs() < 1e-8, "Gauss-Bonnet defect {total}");
    }

    #[test]
    fn divergence_of_metric_multiple_vanishes() {
        let ops = flat2();
        let h = ops.metric.tensor().scaled(3.0);
        let div = ops.divergence(&h).unwrap();
        assert!(div.sup_norm() < 1e-12);
    }

    #[test]
    fn flat_commutation_div_hessian() {
        // flat metric, h = hess(sin 2 pi x1): div h - d tr h = 0
        let ops = flat2();
        let f = ScalarField::from_fn(grid2(), |x| (2.0 * PI * x[0]).sin());
        let h = ops.hessian(&f).unwrap();
        let res = j_residual_at(&ops, &h).unwrap();
        assert!(res.sup_norm() < 1e-10);
    }

    #[test]
    fn lie_of_gradient_is_twice_hessian_on_flat() {
        let ops = flat2();
        let f = ScalarField::from_fn(grid2(), |x| {
            (2.0 * PI * x[0]).sin() + 0.5 * (2.0 * PI * x[1]).cos()
        });
        let lie = ops.lie_metric(&ops.grad(&f)).unwrap();
        let hess = ops.hessian(&f).unwrap();
        assert!(lie.axpy(-2.0, &hess).sup_norm() < 1e-10);
    }

    #[test]
    fn lichnerowicz_constant_tensor_on_flat() {
        let ops = flat2();
        let sigma = SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, -1.0]);
        assert!(lichnerowicz(&ops, &sigma).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn lichnerowicz_single_mode_on_flat() {
        // sigma = sin(2 pi x1) E: Delta_L sigma = 4 pi^2 sigma
        let ops = flat2();
        let sigma = SymTensorField::from_fns(grid2(), |i, j, x| {
            let e = match (i, j) {
                (0, 0) => 1.0,
                (1, 1) => -1.0,
                _ => 0.5,
            };
            e * (2.0 * PI * x[0]).sin()
        });
        let lap = lichnerowicz(&ops, &sigma).unwrap();
        let expect = sigma.scaled(4.0 * PI * PI);
        let rel = lap.axpy(-1.0, &expect).sup_norm() / expect.sup_norm();
        assert!(rel < 1e-10, "rel {rel}");
    }

    #[test]
    fn first_bianchi_identity() {
        let g = grid2();
        let bump = SymTensorField::from_fns(g, |i, j, x| {
            let w = 0.2 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
            match (i, j) {
                (0, 0) => 1.0 + w,
                (1, 1) => 1.0 - w,
                _ => 0.15 * (2.0 * PI * x[1]).cos(),
            }
        });
        let ops = MetricOps::from_tensor(bump).unwrap();
        let curv = curvature(&ops);
        let d = 2;
        let mut worst = 0.0f64;
        for idx in 0..g.len() {
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        for l in 0..d {
                            let v = curv.riemann_at(d, i, j, k, l, idx)
                                + curv.riemann_at(d, j, k, i, l, idx)
                                + curv.riemann_at(d, k, i, j, l, idx);
                            worst = worst.max(v.abs());
                        }
                    }
                }
            }
        }
        assert!(worst < 1e-9, "Bianchi residual {worst}");
    }

    #[test]
    fn contracted_bianchi_identity() {
        // div(ric - 1/2 scal g) = 0 for an arbitrary smooth metric
        let g = grid2();
        let bump = SymTensorField::from_fns(g, |i, j, x| {
            let w = 0.2 * (2.0 * PI * x[0]).cos() + 0.1 * (2.0 * PI * x[1]).sin();
            match (i, j) {
                (0, 0) => 1.3 + w,
                (1, 1) => 1.0 - 0.5 * w,
                _ => 0.1 * (2.0 * PI * (x[0] - x[1])).sin(),
            }
        });
        let ops = MetricOps::from_tensor(bump).unwrap();
        let curv = curvature(&ops);
        let mut einstein = curv.ricci.clone();
        for i in 0..2 {
            for j in i..2 {
                let slot = sym_index(2, i, j);
                for idx in 0..g.len() {
                    einstein.comps_mut()[slot][idx] -=
                        0.5 * curv.scal.data()[idx] * ops.metric.tensor().at(i, j, idx);
                }
            }
        }
        let div = ops.divergence(&einstein).unwrap();
        assert!(div.sup_norm() < 1e-8, "residual {}", div.sup_norm());
    }

    #[test]
    fn j_residual_vanishes_for_constant_curve() {
        let sg = SGrid::new(0.0, 1.0, 9).unwrap();
        let curve = FieldCurve::from_fn(sg, |_| {
            SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0])
        })
        .unwrap();
        let res = j_residual(&curve).unwrap();
        for f in res.samples() {
            assert!(f.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn j_residual_vanishes_for_exponential_curve() {
        let sg = SGrid::new(-0.5, 0.5, 11).unwrap();
        let curve = FieldCurve::from_fn_with_derivative(
            sg,
            |s| SymTensorField::constant(grid2(), &[(2.0 * s).exp(), 0.0, 0.0, (-2.0 * s).exp()]),
            |s| {
                SymTensorField::constant(
                    grid2(),
                    &[2.0 * (2.0 * s).exp(), 0.0, 0.0, -2.0 * (-2.0 * s).exp()],
                )
            },
        )
        .unwrap();
        let res = j_residual(&curve).unwrap();
        for f in res.samples() {
            assert!(f.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn hessian_derivatives_solve_j_equation() {
        // flat curve with gdot_s = hess f_s attached as analytic derivative
        let g = grid2();
        let sg = SGrid::new(0.0, 1.0, 9).unwrap();
        let flat = SymTensorField::constant(g, &[1.0, 0.0, 0.0, 1.0]);
        let ops = MetricOps::from_tensor(flat.clone()).unwrap();
        let samples = vec![flat; sg.len()];
        let der: Vec<SymTensorField> = (0..sg.len())
            .map(|i| {
                let s = sg.s(i);
                let f = ScalarField::from_fn(g, |x| {
                    (1.0 + s) * (2.0 * PI * x[0]).sin() + s * (2.0 * PI * x[1]).cos()
                });
                ops.hessian(&f).unwrap()
            })
            .collect();
        let curve = FieldCurve::with_derivative(sg, samples, Some(der)).unwrap();
        let res = j_residual(&curve).unwrap();
        for f in res.samples() {
            assert!(f.sup_norm() < 1e-9);
        }
    }
}
