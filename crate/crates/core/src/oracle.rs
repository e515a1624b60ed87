//! Brute-force curvature of the full (d+2)-dimensional block metric by
//! central finite differences, independent of the spectral calculus: metric
//! values come from trigonometric interpolation in `x` and a fixed 6-point
//! polynomial stencil in `s`, Christoffel symbols and their derivatives from
//! second-order differences with one Richardson halving.
//!
//! Coordinate order everywhere: `0 = v`, `1 = s`, `2.. = x`.

use crate::grid::{GridField, ScalarField, TorusGrid, MAX_DIM};
use crate::interp;
use crate::linalg::{self, DenseMat};
use crate::spectral::{Coeffs, PointEvaluator};
use crate::wave::{PPWaveMetric, WaveError};
use rayon::prelude::*;
use std::collections::HashMap;

/// Default inner finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Width of the polynomial stencil in `s`.
const S_STENCIL: usize = 6;

/// An evaluation point of the oracle: sample index and flat grid index.
#[derive(Clone, Copy, Debug)]
pub struct OraclePoint {
    pub sample: usize,
    pub flat: usize,
}

/// One Ricci evaluation: the full `(d+2)^2` matrix (row-major) after one
/// Richardson step, and the disagreement of the two levels.
#[derive(Clone, Debug)]
pub struct FdRicci {
    pub point: OraclePoint,
    pub components: Vec<f64>,
    pub richardson_gap: f64,
}

/// Precomputed Fourier data of a block metric for off-grid evaluation.
pub struct BlockCoeffs {
    grid: TorusGrid,
    sgrid: crate::grid::SGrid,
    w: Vec<Coeffs>,
    g: Vec<Vec<Coeffs>>,
}

impl BlockCoeffs {
    pub fn new(wave: &PPWaveMetric) -> Self {
        let grid = wave.grid();
        let w = wave
            .w_samples()
            .par_iter()
            .map(|f| Coeffs::from_real(grid, f.data()))
            .collect();
        let g = wave
            .spatial()
            .samples()
            .par_iter()
            .map(|g| {
                (0..grid.sym_len())
                    .map(|c| Coeffs::from_real(grid, &g.comps()[c]))
                    .collect()
            })
            .collect();
        Self {
            grid,
            sgrid: wave.sgrid(),
            w,
            g,
        }
    }

    fn dim_total(&self) -> usize {
        self.grid.dim() + 2
    }
}

/// Column of metric values at one spatial point for every sample of the
/// fixed s-stencil: `(w, packed g)` per stencil row.
type Column = Vec<(f64, Vec<f64>)>;

struct Cluster<'a> {
    ctx: &'a BlockCoeffs,
    lo: usize,
    x0: [f64; MAX_DIM],
    s0: f64,
    quantum: f64,
    columns: HashMap<[i64; 3], Column>,
}

impl<'a> Cluster<'a> {
    fn new(ctx: &'a BlockCoeffs, point: OraclePoint, h: f64) -> Result<Self, WaveError> {
        let sgrid = ctx.sgrid;
        let needed = 2.0 * h; // widest FD excursion in s
        let s0 = sgrid.s(point.sample);
        if s0 - needed < sgrid.start() - 1e-12 || s0 + needed > sgrid.stop() + 1e-12 {
            return Err(WaveError::OracleBoundary(point.sample));
        }
        let (lo, _) = interp::stencil(sgrid, s0, S_STENCIL.min(sgrid.len()));
        let mut x0 = [0.0f64; MAX_DIM];
        ctx.grid.point(point.flat, &mut x0);
        Ok(Self {
            ctx,
            lo,
            x0,
            s0,
            quantum: h / 2.0,
            columns: HashMap::new(),
        })
    }

    fn column(&mut self, qx: [i64; 3]) -> &Column {
        let ctx = self.ctx;
        let x0 = self.x0;
        let quantum = self.quantum;
        let lo = self.lo;
        let width = S_STENCIL.min(ctx.sgrid.len());
        self.columns.entry(qx).or_insert_with(|| {
            let mut p = x0;
            for a in 0..ctx.grid.dim() {
                p[a] += qx[a] as f64 * quantum;
            }
            let eval = PointEvaluator::new(ctx.grid, &[p]);
            (lo..lo + width)
                .map(|i| {
                    let w = eval.eval(&ctx.w[i])[0];
                    let g: Vec<f64> = ctx.g[i].iter().map(|c| eval.eval(c)[0]).collect();
                    (w, g)
                })
                .collect()
        })
    }

    /// Block metric at quantized offsets from the cluster center.
    fn metric(&mut self, qs: i64, qx: [i64; 3]) -> DenseMat {
        let s = self.s0 + qs as f64 * self.quantum;
        let width = S_STENCIL.min(self.ctx.sgrid.len());
        let weights = interp::lagrange_weights(self.ctx.sgrid, self.lo, self.lo + width - 1, s);
        let d = self.ctx.grid.dim();
        let sym_len = self.ctx.grid.sym_len();
        let col = self.column(qx);
        let mut w = 0.0;
        let mut g = vec![0.0; sym_len];
        for (row, wt) in col.iter().zip(&weights) {
            w += wt * row.0;
            for (gc, v) in g.iter_mut().zip(&row.1) {
                *gc += wt * v;
            }
        }
        let mut m = [[0.0; 5]; 5];
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        m[1][1] = w;
        for i in 0..d {
            for j in 0..d {
                m[i + 2][j + 2] = g[crate::grid::sym_index(d, i, j)];
            }
        }
        m
    }

    /// Christoffel symbols at quantized offsets by central differences with
    /// step `t` quanta; derivatives along `v` vanish identically.
    fn christoffel(&mut self, qs: i64, qx: [i64; 3], t: i64) -> Vec<DenseMat> {
        let n = self.ctx.dim_total();
        let step = t as f64 * self.quantum;
        let center = self.metric(qs, qx);
        let inv = linalg::invert_dense(n, &center);
        // dg[sigma][mu][nu]
        let mut dg = vec![[[0.0f64; 5]; 5]; n];
        for sigma in 1..n {
            let (mut qs_p, mut qx_p) = (qs, qx);
            let (mut qs_m, mut qx_m) = (qs, qx);
            if sigma == 1 {
                qs_p += t;
                qs_m -= t;
            } else {
                qx_p[sigma - 2] += t;
                qx_m[sigma - 2] -= t;
            }
            let plus = self.metric(qs_p, qx_p);
            let minus = self.metric(qs_m, qx_m);
            for mu in 0..n {
                for nu in 0..n {
                    dg[sigma][mu][nu] = (plus[mu][nu] - minus[mu][nu]) / (2.0 * step);
                }
            }
        }
        let mut gamma = vec![[[0.0f64; 5]; 5]; n];
        for lam in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let mut v = 0.0;
                    for tau in 0..n {
                        v += 0.5
                            * inv[lam][tau]
                            * (dg[mu][nu][tau] + dg[nu][mu][tau] - dg[tau][mu][nu]);
                    }
                    gamma[lam][mu][nu] = v;
                }
            }
        }
        gamma
    }

    /// Ricci tensor at the cluster center with FD step `t` quanta.
    fn ricci_level(&mut self, t: i64) -> DenseMat {
        let n = self.ctx.dim_total();
        let step = t as f64 * self.quantum;
        let center = self.christoffel(0, [0; 3], t);
        // dGamma[sigma][lam][mu][nu]
        let mut dgamma = vec![vec![[[0.0f64; 5]; 5]; 5]; n];
        for sigma in 1..n {
            let (mut qs_p, mut qx_p) = (0i64, [0i64; 3]);
            let (mut qs_m, mut qx_m) = (0i64, [0i64; 3]);
            if sigma == 1 {
                qs_p += t;
                qs_m -= t;
            } else {
                qx_p[sigma - 2] += t;
                qx_m[sigma - 2] -= t;
            }
            let plus = self.christoffel(qs_p, qx_p, t);
            let minus = self.christoffel(qs_m, qx_m, t);
            for lam in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        dgamma[sigma][lam][mu][nu] =
                            (plus[lam][mu][nu] - minus[lam][mu][nu]) / (2.0 * step);
                    }
                }
            }
        }
        let mut ric = [[0.0f64; 5]; 5];
        for mu in 0..n {
            for nu in 0..n {
                let mut v = 0.0;
                for xi in 0..n {
                    v += dgamma[xi][xi][mu][nu] - dgamma[mu][xi][xi][nu];
                    for tau in 0..n {
                        v += center[xi][xi][tau] * center[tau][mu][nu]
                            - center[xi][mu][tau] * center[tau][xi][nu];
                    }
                }
                ric[mu][nu] = v;
            }
        }
        ric
    }

    /// Lowered Riemann tensor `R_{mu nu kappa sigma}` at the center.
    fn riemann_level(&mut self, t: i64) -> Vec<f64> {
        let n = self.ctx.dim_total();
        let step = t as f64 * self.quantum;
        let center = self.christoffel(0, [0; 3], t);
        let metric = self.metric(0, [0; 3]);
        let mut dgamma = vec![vec![[[0.0f64; 5]; 5]; 5]; n];
        for sigma in 1..n {
            let (mut qs_p, mut qx_p) = (0i64, [0i64; 3]);
            let (mut qs_m, mut qx_m) = (0i64, [0i64; 3]);
            if sigma == 1 {
                qs_p += t;
                qs_m -= t;
            } else {
                qx_p[sigma - 2] += t;
                qx_m[sigma - 2] -= t;
            }
            let plus = self.christoffel(qs_p, qx_p, t);
            let minus = self.christoffel(qs_m, qx_m, t);
            for lam in 0..n {
                for mu in 0..n {
                    for nu in 0..n {
                        dgamma[sigma][lam][mu][nu] =
                            (plus[lam][mu][nu] - minus[lam][mu][nu]) / (2.0 * step);
                    }
                }
            }
        }
        let coeff = |l: usize, k: usize, mu: usize, nu: usize| {
            let mut v = dgamma[mu][l][nu][k] - dgamma[nu][l][mu][k];
            for tau in 0..n {
                v += center[l][mu][tau] * center[tau][nu][k]
                    - center[l][nu][tau] * center[tau][mu][k];
            }
            v
        };
        let mut out = vec![0.0; n * n * n * n];
        for mu in 0..n {
            for nu in 0..n {
                for k in 0..n {
                    for s in 0..n {
                        let mut v = 0.0;
                        for l in 0..n {
                            v += metric[s][l] * coeff(l, k, mu, nu);
                        }
                        out[((mu * n + nu) * n + k) * n + s] = v;
                    }
                }
            }
        }
        out
    }
}

/// Full Ricci matrices at the requested points, after one Richardson step
/// from levels `h` and `h/2`.
pub fn ricci_fd_oracle(
    wave: &PPWaveMetric,
    h: f64,
    points: &[OraclePoint],
) -> Result<Vec<FdRicci>, WaveError> {
    let ctx = BlockCoeffs::new(wave);
    points
        .par_iter()
        .map(|p| {
            let mut cluster = Cluster::new(&ctx, *p, h)?;
            let coarse = cluster.ricci_level(2);
            let fine = cluster.ricci_level(1);
            let n = ctx.dim_total();
            let mut components = vec![0.0; n * n];
            let mut gap = 0.0f64;
            for mu in 0..n {
                for nu in 0..n {
                    components[mu * n + nu] = (4.0 * fine[mu][nu] - coarse[mu][nu]) / 3.0;
                    gap = gap.max((fine[mu][nu] - coarse[mu][nu]).abs());
                }
            }
            Ok(FdRicci {
                point: *p,
                components,
                richardson_gap: gap,
            })
        })
        .collect()
}

/// Richardson-extrapolated FD Christoffel symbols at one point, indexed
/// `[lambda][mu][nu]` in block coordinates.
pub fn christoffel_fd_at(
    ctx: &BlockCoeffs,
    point: OraclePoint,
    h: f64,
) -> Result<Vec<DenseMat>, WaveError> {
    let mut cluster = Cluster::new(ctx, point, h)?;
    let coarse = cluster.christoffel(0, [0; 3], 2);
    let fine = cluster.christoffel(0, [0; 3], 1);
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| {
            let mut out = [[0.0; 5]; 5];
            for mu in 0..5 {
                for nu in 0..5 {
                    out[mu][nu] = (4.0 * f[mu][nu] - c[mu][nu]) / 3.0;
                }
            }
            out
        })
        .collect())
}

/// Lowered FD Riemann tensor at one point after one Richardson step.
pub fn riemann_fd_at(
    ctx: &BlockCoeffs,
    point: OraclePoint,
    h: f64,
) -> Result<Vec<f64>, WaveError> {
    let mut cluster = Cluster::new(ctx, point, h)?;
    let coarse = cluster.riemann_level(2);
    let fine = cluster.riemann_level(1);
    Ok(fine
        .iter()
        .zip(&coarse)
        .map(|(f, c)| (4.0 * f - c) / 3.0)
        .collect())
}

/// Splits an FD Ricci matrix into named block residuals, with the
/// closed-form comparison values supplied by the caller.
pub struct RicciBlocks {
    pub vv: f64,
    pub vi: f64,
    pub vs: f64,
    pub ss: f64,
    pub si: f64,
    pub ij: f64,
}

pub fn ricci_blocks(d: usize, components: &[f64]) -> RicciBlocks {
    let n = d + 2;
    let at = |mu: usize, nu: usize| components[mu * n + nu].abs();
    let mut vi = 0.0f64;
    let mut si = 0.0f64;
    let mut ij = 0.0f64;
    for i in 0..d {
        vi = vi.max(at(0, i + 2)).max(at(i + 2, 0));
        si = si.max(at(1, i + 2)).max(at(i + 2, 1));
        for j in 0..d {
            ij = ij.max(at(i + 2, j + 2));
        }
    }
    RicciBlocks {
        vv: at(0, 0),
        vi,
        vs: at(0, 1).max(at(1, 0)),
        ss: at(1, 1),
        si,
        ij,
    }
}

/// Curvature-vanishing residuals of a flat-leaf metric: the maximum of
/// `R(., X, Y, Z)` over all coordinate first slots and triples `X, Y, Z`
/// orthogonal to `d/dv`, and the traced combination
/// `sum_i R(nu, e_i, e_i, Z)`.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureVanishing {
    pub max_triple: f64,
    pub max_traced: f64,
}

pub fn curvature_vanishing_check(
    wave: &PPWaveMetric,
    h: f64,
    points: &[OraclePoint],
) -> Result<CurvatureVanishing, WaveError> {
    let ctx = BlockCoeffs::new(wave);
    let grid = wave.grid();
    let d = grid.dim();
    let n = d + 2;
    let results: Result<Vec<CurvatureVanishing>, WaveError> = points
        .par_iter()
        .map(|p| {
            let riem = riemann_fd_at(&ctx, *p, h)?;
            let at = |mu: usize, nu: usize, k: usize, s: usize| riem[((mu * n + nu) * n + k) * n + s];
            // orthonormal leaf frame and the block vectors nu = u d/ds
            let gfield = MetricFieldAt::new(wave, *p)?;
            let frame = gfield.frame; // frame[i][a]: coords of E_a
            let u = gfield.u;
            // basis of the d/dv-orthogonal complement: d/dv and the leaf frame
            let mut triples: Vec<[f64; 5]> = Vec::with_capacity(d + 1);
            let mut dv = [0.0; 5];
            dv[0] = 1.0;
            triples.push(dv);
            for a in 0..d {
                let mut e = [0.0; 5];
                for i in 0..d {
                    e[i + 2] = frame[i][a];
                }
                triples.push(e);
            }
            let contract = |first: &[f64; 5], x: &[f64; 5], y: &[f64; 5], z: &[f64; 5]| {
                let mut v = 0.0;
                for mu in 0..n {
                    if first[mu] == 0.0 {
                        continue;
                    }
                    for nu in 0..n {
                        if x[nu] == 0.0 {
                            continue;
                        }
                        for k in 0..n {
                            if y[k] == 0.0 {
                                continue;
                            }
                            for s in 0..n {
                                if z[s] == 0.0 {
                                    continue;
                                }
                                v += first[mu] * x[nu] * y[k] * z[s] * at(mu, nu, k, s);
                            }
                        }
                    }
                }
                v
            };
            let mut max_triple = 0.0f64;
            for mu in 0..n {
                let mut first = [0.0; 5];
                first[mu] = 1.0;
                for x in &triples {
                    for y in &triples {
                        for z in &triples {
                            max_triple = max_triple.max(contract(&first, x, y, z).abs());
                        }
                    }
                }
            }
            // traced identity with nu = u d/ds
            let mut nu_vec = [0.0; 5];
            nu_vec[1] = u;
            let mut max_traced = 0.0f64;
            for z in triples.iter().skip(1) {
                let mut total = 0.0;
                for a in 1..=d {
                    total += contract(&nu_vec, &triples[a], &triples[a], z);
                }
                max_traced = max_traced.max(total.abs());
            }
            Ok(CurvatureVanishing {
                max_triple,
                max_traced,
            })
        })
        .collect();
    let results = results?;
    Ok(CurvatureVanishing {
        max_triple: results.iter().map(|r| r.max_triple).fold(0.0, f64::max),
        max_traced: results.iter().map(|r| r.max_traced).fold(0.0, f64::max),
    })
}

struct MetricFieldAt {
    frame: [[f64; 3]; 3],
    u: f64,
}

impl MetricFieldAt {
    fn new(wave: &PPWaveMetric, p: OraclePoint) -> Result<Self, WaveError> {
        let g = crate::riemann::MetricField::new(wave.spatial().sample(p.sample).clone())?;
        Ok(Self {
            frame: g.cholesky_frame(p.flat),
            u: wave.u_curve().sample(p.sample).data()[p.flat],
        })
    }
}

/// Uniformly spread oracle points: every `stride`-th grid point on a set of
/// interior samples.
pub fn spread_points(
    wave: &PPWaveMetric,
    n_samples: usize,
    stride: usize,
) -> Vec<OraclePoint> {
    let m = wave.sgrid().len();
    let margin = 3.max(m / 20);
    let usable = m - 2 * margin;
    let mut points = Vec::new();
    for k in 0..n_samples {
        let sample = margin + usable * k / n_samples.max(1) + usable / (2 * n_samples.max(1));
        for flat in (0..wave.grid().len()).step_by(stride) {
            points.push(OraclePoint { sample, flat });
        }
    }
    points
}

/// Scalar helper for tests: value of a sampled field at a point.
pub fn field_value(f: &ScalarField, flat: usize) -> f64 {
    f.data()[flat]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FieldCurve, SGrid, SymTensorField};
    use crate::wave::{ricci_closed_form, PPWaveMetric};

    fn grid2() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    fn points() -> Vec<OraclePoint> {
        vec![
            OraclePoint { sample: 50, flat: 5 },
            OraclePoint { sample: 100, flat: 700 },
        ]
    }

    #[test]
    fn product_metric_is_flat_to_oracle_accuracy() {
        let sg = SGrid::new(0.0, 2.0, 201).unwrap();
        let wave =
            PPWaveMetric::product(sg, SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap();
        let out = ricci_fd_oracle(&wave, DEFAULT_STEP, &points()).unwrap();
        for r in &out {
            let max = r.components.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max < 1e-6, "residual {max}");
        }
    }

    #[test]
    fn exponential_family_matches_closed_form() {
        let sg = SGrid::new(-1.0, 1.0, 201).unwrap();
        let u = FieldCurve::from_fn(sg, |_| {
            crate::grid::ScalarField::constant(grid2(), 1.0)
        })
        .unwrap();
        let spatial = FieldCurve::from_fn_with_derivative(
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
        let wave = PPWaveMetric::new(u, spatial).unwrap();
        let out = ricci_fd_oracle(&wave, DEFAULT_STEP, &points()).unwrap();
        let n = 4;
        for r in &out {
            assert!((r.components[n + 1] + 2.0).abs() < 1e-5, "ss block");
            for mu in 0..n {
                for nu in 0..n {
                    if !(mu == 1 && nu == 1) {
                        assert!(r.components[mu * n + nu].abs() < 1e-6);
                    }
                }
            }
            let blocks = ricci_blocks(2, &r.components);
            assert!(blocks.vv < 1e-6 && blocks.vi < 1e-6 && blocks.vs < 1e-6);
        }
        // cross-check against the closed form
        let cf = ricci_closed_form(&wave).unwrap();
        for (r, p) in out.iter().zip(points()) {
            let cf_ss = cf.rho.sample(p.sample).data()[p.flat];
            assert!((r.components[n + 1] - cf_ss).abs() < 1e-4);
        }
    }

    #[test]
    fn oracle_rejects_boundary_samples() {
        let sg = SGrid::new(0.0, 1.0, 51).unwrap();
        let wave =
            PPWaveMetric::product(sg, SymTensorField::constant(grid2(), &[1.0, 0.0, 0.0, 1.0]))
                .unwrap();
        let res = ricci_fd_oracle(
            &wave,
            DEFAULT_STEP,
            &[OraclePoint { sample: 0, flat: 0 }],
        );
        assert!(matches!(res, Err(crate::wave::WaveError::OracleBoundary(_))));
    }

    #[test]
    fn curvature_vanishing_on_flat_families() {
        let sg = SGrid::new(-1.0, 1.0, 201).unwrap();
        let u = FieldCurve::from_fn(sg, |_| {
            crate::grid::ScalarField::constant(grid2(), 1.0)
        })
        .unwrap();
        let spatial = FieldCurve::from_fn_with_derivative(
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
        let wave = PPWaveMetric::new(u, spatial).unwrap();
        let cv = curvature_vanishing_check(&wave, DEFAULT_STEP, &points()).unwrap();
        assert!(cv.max_triple < 1e-5, "triple {}", cv.max_triple);
        assert!(cv.max_traced < 1e-5, "traced {}", cv.max_traced);
    }
}
