//! Polynomial interpolation in the curve parameter `s`: stencil selection and
//! Lagrange weights shared by the flow integrators and the brute-force
//! curvature oracle.

use crate::grid::{GridField, SGrid};

/// Index window of `width` samples centered as well as possible around `s`.
pub fn stencil(sgrid: SGrid, s: f64, width: usize) -> (usize, usize) {
    let m = sgrid.len();
    assert!(width <= m);
    let pos = (s - sgrid.start()) / sgrid.ds();
    let center = pos.round() as isize;
    let lo = (center - width as isize / 2)
        .clamp(0, (m - width) as isize) as usize;
    (lo, lo + width - 1)
}

/// Lagrange weights of the nodes `lo..=hi` at `s`.
pub fn lagrange_weights(sgrid: SGrid, lo: usize, hi: usize, s: f64) -> Vec<f64> {
    let nodes: Vec<f64> = (lo..=hi).map(|i| sgrid.s(i)).collect();
    let mut w = vec![1.0; nodes.len()];
    for (i, wi) in w.iter_mut().enumerate() {
        for (j, xj) in nodes.iter().enumerate() {
            if i != j {
                *wi *= (s - xj) / (nodes[i] - xj);
            }
        }
    }
    w
}

/// Interpolates sampled scalars at `s` with a `width`-point stencil.
pub fn interp_values(sgrid: SGrid, values: &[f64], s: f64, width: usize) -> f64 {
    let (lo, hi) = stencil(sgrid, s, width);
    let w = lagrange_weights(sgrid, lo, hi, s);
    (lo..=hi).map(|i| w[i - lo] * values[i]).sum()
}

/// Interpolates sampled fields at `s` with a `width`-point stencil.
pub fn interp_fields<F: GridField>(sgrid: SGrid, samples: &[F], s: f64, width: usize) -> F {
    let (lo, hi) = stencil(sgrid, s, width);
    let w = lagrange_weights(sgrid, lo, hi, s);
    let mut out = F::zeros(samples[0].grid());
    for i in lo..=hi {
        out = out.axpy(w[i - lo], &samples[i]);
    }
    out
}

/// First-derivative weights of the Lagrange interpolant through the nodes
/// `lo..=hi`, evaluated at the node `at`.
pub fn derivative_weights(sgrid: SGrid, lo: usize, hi: usize, at: usize) -> Vec<f64> {
    let nodes: Vec<f64> = (lo..=hi).map(|i| sgrid.s(i)).collect();
    let k = at - lo;
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for j in 0..n {
        if j == k {
            let mut acc = 0.0;
            for m in 0..n {
                if m != k {
                    acc += 1.0 / (nodes[k] - nodes[m]);
                }
            }
            w[j] = acc;
        } else {
            let mut prod = 1.0 / (nodes[j] - nodes[k]);
            for m in 0..n {
                if m != j && m != k {
                    prod *= (nodes[k] - nodes[m]) / (nodes[j] - nodes[m]);
                }
            }
            w[j] = prod;
        }
    }
    w
}

/// High-order derivative of sampled fields with a `width`-point moving
/// stencil; exact on polynomials up to degree `width - 1`.
pub fn stencil_derivative<F: GridField>(sgrid: SGrid, samples: &[F], width: usize) -> Vec<F> {
    let m = sgrid.len();
    let width = width.min(m);
    (0..m)
        .map(|i| {
            let lo = (i as isize - width as isize / 2)
                .clamp(0, (m - width) as isize) as usize;
            let w = derivative_weights(sgrid, lo, lo + width - 1, i);
            let mut acc = F::zeros(samples[0].grid());
            for (j, wj) in w.iter().enumerate() {
                acc = acc.axpy(*wj, &samples[lo + j]);
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_reproduces_cubic_polynomials() {
        let sg = SGrid::new(0.0, 1.0, 11).unwrap();
        let p = |s: f64| 1.0 + s - 2.0 * s * s + 0.5 * s * s * s;
        let vals: Vec<f64> = sg.values().iter().map(|s| p(*s)).collect();
        for &s in &[0.03, 0.517, 0.98] {
            assert!((interp_values(sg, &vals, s, 4) - p(s)).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_weights_exact_on_degree_six() {
        use crate::grid::{ScalarField, TorusGrid};
        let sg = SGrid::new(0.0, 1.0, 21).unwrap();
        let grid = TorusGrid::new(1, 8).unwrap();
        let p = |s: f64| 1.0 - s + 0.5 * s.powi(3) + 2.0 * s.powi(6);
        let dp = |s: f64| -1.0 + 1.5 * s * s + 12.0 * s.powi(5);
        let samples: Vec<ScalarField> = sg
            .values()
            .iter()
            .map(|s| ScalarField::constant(grid, p(*s)))
            .collect();
        let der = stencil_derivative(sg, &samples, 7);
        for (i, f) in der.iter().enumerate() {
            assert!((f.data()[0] - dp(sg.s(i))).abs() < 1e-9);
        }
    }

    #[test]
    fn quintic_reproduces_quintic_polynomials() {
        let sg = SGrid::new(-1.0, 1.0, 21).unwrap();
        let p = |s: f64| s.powi(5) - 0.3 * s.powi(4) + s;
        let vals: Vec<f64> = sg.values().iter().map(|s| p(*s)).collect();
        for &s in &[-0.93, 0.011, 0.77] {
            assert!((interp_values(sg, &vals, s, 6) - p(s)).abs() < 1e-12);
        }
    }
}
