//! Pointwise helpers for small symmetric matrices (d <= 3): determinants,
//! adjugate inverses, Cholesky factors and extremal eigenvalues.

/// Dense symmetric matrix in a fixed-size buffer, `m[i][j]`.
pub type SmallMat = [[f64; 3]; 3];

pub fn from_packed(d: usize, packed: &[f64]) -> SmallMat {
    let mut m = [[0.0; 3]; 3];
    for i in 0..d {
        for j in i..d {
            let v = packed[crate::grid::sym_index(d, i, j)];
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn to_packed(d: usize, m: &SmallMat, out: &mut [f64]) {
    for i in 0..d {
        for j in i..d {
            out[crate::grid::sym_index(d, i, j)] = m[i][j];
        }
    }
}

pub fn det(d: usize, m: &SmallMat) -> f64 {
    match d {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => unreachable!(),
    }
}

/// Inverse by adjugate; caller guarantees a nonzero determinant.
pub fn inverse(d: usize, m: &SmallMat) -> SmallMat {
    let dt = det(d, m);
    let mut inv = [[0.0; 3]; 3];
    match d {
        1 => inv[0][0] = 1.0 / dt,
        2 => {
            inv[0][0] = m[1][1] / dt;
            inv[1][1] = m[0][0] / dt;
            inv[0][1] = -m[0][1] / dt;
            inv[1][0] = -m[1][0] / dt;
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let r = [(i + 1) % 3, (i + 2) % 3];
                    let c = [(j + 1) % 3, (j + 2) % 3];
                    // cofactor transpose
                    inv[j][i] = (m[r[0]][c[0]] * m[r[1]][c[1]] - m[r[0]][c[1]] * m[r[1]][c[0]]) / dt;
                }
            }
        }
        _ => unreachable!(),
    }
    inv
}

/// Leading principal minors, used for the positivity check.
pub fn principal_minors(d: usize, m: &SmallMat) -> [f64; 3] {
    let mut out = [1.0; 3];
    out[0] = m[0][0];
    if d >= 2 {
        out[1] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    }
    if d >= 3 {
        out[2] = det(3, m);
    }
    out
}

/// Lower-triangular Cholesky factor of an SPD matrix, `m = L L^T`.
pub fn cholesky(d: usize, m: &SmallMat) -> SmallMat {
    let mut l = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    l
}

/// Inverse transpose of a lower-triangular matrix; columns are the
/// orthonormal-frame vectors of the metric `m = L L^T`.
pub fn inv_transpose_lower(d: usize, l: &SmallMat) -> SmallMat {
    // forward substitution for L^{-1}, then transpose
    let mut linv = [[0.0; 3]; 3];
    for i in 0..d {
        linv[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum += l[i][k] * linv[k][j];
            }
            linv[i][j] = -sum / l[i][i];
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = linv[j][i];
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric matrix, closed form for d <= 3.
pub fn min_eigenvalue(d: usize, m: &SmallMat) -> f64 {
    match d {
        1 => m[0][0],
        2 => {
            let tr = m[0][0] + m[1][1];
            let dt = det(2, m);
            let disc = (tr * tr / 4.0 - dt).max(0.0).sqrt();
            tr / 2.0 - disc
        }
        3 => {
            // Smith's trigonometric method for symmetric 3x3
            let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
            let mut b = *m;
            for i in 0..3 {
                b[i][i] -= q;
            }
            let p2 = (b[0][0] * b[0][0]
                + b[1][1] * b[1][1]
                + b[2][2] * b[2][2]
                + 2.0 * (b[0][1] * b[0][1] + b[0][2] * b[0][2] + b[1][2] * b[1][2]))
                / 6.0;
            let p = p2.sqrt();
            if p < 1e-300 {
                return q;
            }
            let detb = det(3, &b) / (p * p * p);
            let r = (detb / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            // eigenvalues q + 2p cos(phi + 2k pi/3); the minimum is at k = 1
            q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
        }
        _ => unreachable!(),
    }
}

/// m * v for the leading d x d block.
pub fn matvec(d: usize, m: &SmallMat, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..d {
        for j in 0..d {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}


/// Dense matrix in a fixed 5x5 buffer, for the (d+2)-dimensional block
/// metrics of the brute-force curvature oracle.
pub type DenseMat = [[f64; 5]; 5];

/// Gauss-Jordan inverse with partial pivoting for n <= 5.
pub fn invert_dense(n: usize, m: &DenseMat) -> DenseMat {
    let mut a = *m;
    let mut inv = [[0.0; 5]; 5];
    for (i, row) in inv.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}
