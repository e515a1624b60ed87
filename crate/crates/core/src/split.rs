//! Refined L2-orthogonal decomposition of symmetric 2-tensors on flat torus
//! metrics, and the three-term splitting of solutions of the leaf-joining
//! equation `div h - d tr h = 0`.
//!
//! A general tensor splits as `h = u g + hess f + L_X g + sigma` with `u` a
//! function, `X` divergence-free and `sigma` transverse traceless. For
//! solutions of the leaf-joining equation `u` collapses to a constant and
//! `X` to a Killing field, leaving `h = c g + hess f + sigma`.

use crate::elliptic::{
    helmholtz_project, one_form_laplacian_solve, poisson_scalar, SolveError,
};
use crate::grid::{
    integrate, spectral_diff, CovectorField, GridField, ScalarField, SymTensorField, VectorField,
};
use crate::riemann::{curvature, j_residual_at, lichnerowicz, MetricOps, RiemannError};
use thiserror::Error;

/// Flatness gate on the Ricci residual of the background metric.
pub const FLATNESS_TOL: f64 = 1e-8;

/// Default relative solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("background metric is not flat: Ricci residual {0:.3e}")]
    NotFlat(f64),
    #[error("input does not solve the leaf-joining equation: residual {0:.3e} (tolerance {1:.3e})")]
    JEquationViolated(f64, f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Riemann(#[from] RiemannError),
}

/// The four-part decomposition of a symmetric 2-tensor.
///
/// `conformal_dev` is the mean-zero part of the scalar factor multiplying
/// `g`; it vanishes identically exactly when the input solves the
/// leaf-joining equation, in which case the scalar part is the constant `c`.
#[derive(Clone, Debug)]
pub struct TensorSplit {
    pub constant: f64,
    pub conformal_dev: ScalarField,
    pub potential: ScalarField,
    pub lie_vector: VectorField,
    pub tt: SymTensorField,
}

impl TensorSplit {
    /// `(c + u_dev) g + hess f + L_X g + sigma`; reconstructs the input.
    pub fn reconstruct(&self, ops: &MetricOps) -> Result<SymTensorField, RiemannError> {
        let grid = ops.grid();
        let mut out = self.tt.clone();
        let hess = ops.hessian(&self.potential)?;
        let lie = ops.lie_metric(&self.lie_vector)?;
        out = out.axpy(1.0, &hess).axpy(1.0, &lie);
        let d = grid.dim();
        for i in 0..d {
            for j in i..d {
                let slot = crate::grid::sym_index(d, i, j);
                for idx in 0..grid.len() {
                    let scalar = self.constant + self.conformal_dev.data()[idx];
                    out.comps_mut()[slot][idx] += scalar * ops.metric.tensor().at(i, j, idx);
                }
            }
        }
        Ok(out)
    }
}

/// Residual diagnostics of a computed split.
#[derive(Clone, Copy, Debug)]
pub struct SplitDiagnostics {
    pub reconstruction: f64,
    pub tt_trace: f64,
    pub tt_divergence: f64,
    pub lie_norm: f64,
    pub conformal_dev_norm: f64,
    /// Connection-Laplacian residual of the TT part, reported but not gated.
    pub tt_lichnerowicz: f64,
}

fn check_flat(ops: &MetricOps) -> Result<(), SplitError> {
    let res = curvature(ops).ricci.sup_norm();
    if res > FLATNESS_TOL {
        return Err(SplitError::NotFlat(res));
    }
    Ok(())
}

/// Decomposes `h` with respect to the flat metric of `ops`.
///
/// Elliptic systems are solved by preconditioned conjugate gradient with the
/// constant-coefficient Fourier preconditioner to relative residual `tol`.
/// Normalizations: `f` has mean zero, `X` has mean zero (orthogonal to the
/// translations, the Killing fields of the flat torus).
pub fn decompose(ops: &MetricOps, h: &SymTensorField, tol: f64) -> Result<TensorSplit, SplitError> {
    check_flat(ops)?;
    let grid = ops.grid();
    let d = grid.dim();
    let dim = d as f64;

    // omega = div h - d tr h = (1-d) du - hodge_laplace(X_flat)
    let omega = j_residual_at(ops, h)?;
    let noise_floor = 1e-12 * h.sup_norm().max(1.0);

    let (u_dev, x_vec) = if d == 1 || omega.sup_norm() <= noise_floor {
        // already a solution of the leaf-joining equation (or d = 1, where
        // the du term is absent and the trace equation determines everything)
        (ScalarField::zeros(grid), VectorField::zeros(grid))
    } else {
        // exact part: alpha with lb(alpha) = div omega
        let mut div_omega = ScalarField::zeros(grid);
        let omega_vec = ops.raise(&omega);
        for a in 0..d {
            let mut flux = vec![0.0; grid.len()];
            for idx in 0..grid.len() {
                flux[idx] = omega_vec.comp(a)[idx] * ops.metric.sqrt_det().data()[idx];
            }
            crate::spectral::diff_axis(grid, &mut flux, a);
            for idx in 0..grid.len() {
                div_omega.data_mut()[idx] += flux[idx] / ops.metric.sqrt_det().data()[idx];
            }
        }
        let alpha = poisson_scalar(ops, &div_omega, tol)?;
        let u_dev = alpha.scaled(1.0 / (1.0 - dim));
        // coexact remainder drives the divergence-free Lie generator
        let mut beta_comps = Vec::with_capacity(d);
        for a in 0..d {
            let dalpha = spectral_diff(&alpha, a).unwrap();
            let mut c = omega.comp(a).to_vec();
            for (v, g) in c.iter_mut().zip(dalpha.data()) {
                *v = -(*v - g);
            }
            beta_comps.push(c);
        }
        let beta = CovectorField::from_comps(grid, beta_comps);
        let x = if beta.sup_norm() <= noise_floor {
            VectorField::zeros(grid)
        } else {
            let xi = one_form_laplacian_solve(ops, &beta, tol)?;
            let xi = helmholtz_project(ops, &xi, tol)?;
            let mut x = ops.raise(&xi);
            for c in x.comps_mut() {
                let m = c.iter().sum::<f64>() / c.len() as f64;
                for v in c.iter_mut() {
                    *v -= m;
                }
            }
            x
        };
        (u_dev, x)
    };

    // trace equation fixes c and the potential: tr h = (c + u_dev) d + lb f
    let tr = ops.trace(h)?;
    let c = ops.mean_scalar(&tr) / dim;
    let mut rhs = tr.clone();
    for idx in 0..grid.len() {
        rhs.data_mut()[idx] -= (c + u_dev.data()[idx]) * dim;
    }
    let potential = poisson_scalar(ops, &rhs, tol)?;

    let mut split = TensorSplit {
        constant: c,
        conformal_dev: u_dev,
        potential,
        lie_vector: x_vec,
        tt: SymTensorField::zeros(grid),
    };
    let partial = split.reconstruct(ops)?;
    split.tt = h.axpy(-1.0, &partial);
    Ok(split)
}

/// Residuals of a split against its defining properties.
pub fn diagnostics(
    ops: &MetricOps,
    h: &SymTensorField,
    split: &TensorSplit,
) -> Result<SplitDiagnostics, SplitError> {
    let recon = split.reconstruct(ops)?;
    let lie = ops.lie_metric(&split.lie_vector)?;
    Ok(SplitDiagnostics {
        reconstruction: recon.axpy(-1.0, h).sup_norm(),
        tt_trace: ops.trace(&split.tt)?.sup_norm(),
        tt_divergence: ops.divergence(&split.tt)?.sup_norm(),
        lie_norm: lie.sup_norm(),
        conformal_dev_norm: split.conformal_dev.sup_norm(),
        tt_lichnerowicz: lichnerowicz(ops, &split.tt)?.sup_norm(),
    })
}

/// Three-term form of a solution of the leaf-joining equation.
#[derive(Clone, Debug)]
pub struct JSplit {
    pub constant: f64,
    pub potential: ScalarField,
    pub tt: SymTensorField,
    /// Norm of the Lie part of the full decomposition; a Killing check.
    pub lie_residual: f64,
}

/// Splits a solution `h` of `div h - d tr h = 0` as `h = c g + hess f + sigma`.
///
/// The Lie part of the underlying four-term decomposition must be a Killing
/// field; on the flat torus this pins it to a translation, which contributes
/// nothing, so its image under the Killing operator is returned as a
/// residual.
pub fn split_j_solution(
    ops: &MetricOps,
    h: &SymTensorField,
    tol: f64,
) -> Result<JSplit, SplitError> {
    check_flat(ops)?;
    let res = j_residual_at(ops, h)?.sup_norm();
    let gate = tol.max(1e-9) * h.sup_norm().max(1.0);
    if res > gate {
        return Err(SplitError::JEquationViolated(res, gate));
    }
    let split = decompose(ops, h, tol)?;
    let lie = ops.lie_metric(&split.lie_vector)?;
    Ok(JSplit {
        constant: split.constant,
        potential: split.potential,
        tt: split.tt.axpy(1.0, &lie), // Killing image is numerically zero
        lie_residual: lie.sup_norm(),
    })
}

/// TT part of `h`; the piece entering the scale functional.
pub fn tt_part(ops: &MetricOps, h: &SymTensorField, tol: f64) -> Result<SymTensorField, SplitError> {
    Ok(decompose(ops, h, tol)?.tt)
}

/// Pairwise L2 inner products between the four parts, for orthogonality
/// checks. Order: scalar-part vs hess, scalar vs lie, scalar vs tt,
/// hess vs lie, hess vs tt, lie vs tt.
pub fn pairwise_inner_products(
    ops: &MetricOps,
    split: &TensorSplit,
) -> Result<[f64; 6], SplitError> {
    let grid = ops.grid();
    let d = grid.dim();
    let mut scalar_part = SymTensorField::zeros(grid);
    for i in 0..d {
        for j in i..d {
            let slot = crate::grid::sym_index(d, i, j);
            for idx in 0..grid.len() {
                scalar_part.comps_mut()[slot][idx] = (split.constant
                    + split.conformal_dev.data()[idx])
                    * ops.metric.tensor().at(i, j, idx);
            }
        }
    }
    let hess = ops.hessian(&split.potential)?;
    let lie = ops.lie_metric(&split.lie_vector)?;
    Ok([
        ops.l2_inner_symtensor(&scalar_part, &hess),
        ops.l2_inner_symtensor(&scalar_part, &lie),
        ops.l2_inner_symtensor(&scalar_part, &split.tt),
        ops.l2_inner_symtensor(&hess, &lie),
        ops.l2_inner_symtensor(&hess, &split.tt),
        ops.l2_inner_symtensor(&lie, &split.tt),
    ])
}

/// L2 norm squared of a symmetric tensor, convenience for tolerance scaling.
pub fn l2_norm_sq(ops: &MetricOps, h: &SymTensorField) -> f64 {
    let n = ops.norm_sq_symtensor(h);
    integrate(&n, ops.metric.sqrt_det()).expect("positive density")
}
