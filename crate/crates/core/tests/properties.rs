//! Property tests of the spectral calculus and the decomposition, over
//! randomized band-limited fields.

use ppwave_core::grid::{
    integrate, interpolate, spectral_diff, GridField, ScalarField, SymTensorField, TorusGrid,
    MAX_DIM,
};
use ppwave_core::riemann::MetricOps;
use ppwave_core::split::{decompose, diagnostics};
use proptest::prelude::*;
use std::f64::consts::PI;

fn grid() -> TorusGrid {
    TorusGrid::new(2, 32).unwrap()
}

/// A smooth random field from a handful of low modes.
fn smooth_field(params: &[(i32, i32, f64, f64)]) -> ScalarField {
    ScalarField::from_fn(grid(), |x| {
        params
            .iter()
            .map(|(k1, k2, amp, phase)| {
                amp * (2.0 * PI * (*k1 as f64 * x[0] + *k2 as f64 * x[1]) + phase).sin()
            })
            .sum()
    })
}

fn mode_strategy() -> impl Strategy<Value = Vec<(i32, i32, f64, f64)>> {
    prop::collection::vec(
        (-4i32..=4, -4i32..=4, -1.0f64..1.0, 0.0f64..(2.0 * PI)),
        1..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mixed_spectral_derivatives_commute(params in mode_strategy()) {
        let f = smooth_field(&params);
        let dxy = spectral_diff(&spectral_diff(&f, 0).unwrap(), 1).unwrap();
        let dyx = spectral_diff(&spectral_diff(&f, 1).unwrap(), 0).unwrap();
        let scale = dxy.sup_norm().max(1.0);
        prop_assert!(dxy.axpy(-1.0, &dyx).sup_norm() / scale < 1e-12);
    }

    #[test]
    fn derivatives_integrate_to_zero(params in mode_strategy(), axis in 0usize..2) {
        let f = smooth_field(&params);
        let df = spectral_diff(&f, axis).unwrap();
        let one = ScalarField::constant(grid(), 1.0);
        let scale = f.sup_norm().max(1.0);
        prop_assert!(integrate(&df, &one).unwrap().abs() / scale < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_grid_samples(params in mode_strategy()) {
        let f = smooth_field(&params);
        let g = grid();
        let mut points = Vec::new();
        let mut x = [0.0f64; MAX_DIM];
        for idx in (0..g.len()).step_by(37) {
            g.point(idx, &mut x);
            points.push(x);
        }
        let vals = interpolate(&f, &points);
        let scale = f.sup_norm().max(1.0);
        for (v, idx) in vals.iter().zip((0..g.len()).step_by(37)) {
            prop_assert!((v - f.data()[idx]).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn decomposition_reconstructs_smooth_tensors(
        params in mode_strategy(),
        c in -1.0f64..1.0,
        e in -1.0f64..1.0,
    ) {
        // a solution-shaped tensor: constant conformal part, a Hessian and a
        // constant trace-free remainder
        let ops = MetricOps::from_tensor(
            SymTensorField::constant(grid(), &[1.0, 0.0, 0.0, 1.0]),
        ).unwrap();
        let f = smooth_field(&params);
        let mut h = ops.hessian(&f).unwrap();
        h = h.axpy(c, ops.metric.tensor());
        h = h.axpy(1.0, &SymTensorField::constant(grid(), &[e, 0.3 * e, 0.3 * e, -e]));
        let split = decompose(&ops, &h, 1e-11).unwrap();
        let diag = diagnostics(&ops, &h, &split).unwrap();
        let scale = h.sup_norm().max(1.0);
        prop_assert!(diag.reconstruction / scale < 1e-9);
        prop_assert!(diag.tt_trace / scale < 1e-9);
        prop_assert!(diag.tt_divergence / scale < 1e-9);
        prop_assert!((split.constant - c).abs() / scale < 1e-9);
    }
}
