use dfosr::basis::{quantile_knots, BasisSystem, ObservationGrid};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn grid(m: usize) -> ObservationGrid {
    ObservationGrid::new(&(0..m).map(|i| i as f64 / (m - 1) as f64).collect::<Vec<_>>()).unwrap()
}

fn least_squares_line(x: &[f64], y: &DVector<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.sum() / n;
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    x.iter().map(|a| my + slope * (a - mx)).collect()
}

#[test]
fn infinite_smoothing_gives_least_squares_line() {
    for m in [20, 50, 120] {
        let g = grid(m);
        let basis = BasisSystem::new(&g).unwrap();
        let y = DVector::from_iterator(m, g.points().iter().map(|t| (6.0 * t).sin() + t * t));
        let fit = basis.smooth(&y, 1e12);
        let line = least_squares_line(g.points(), &y);
        let err = fit.iter().zip(&line).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "M = {m}: {err}");
    }
}

#[test]
fn more_knots_barely_change_smooth_fit() {
    let g = grid(200);
    let y = DVector::from_iterator(200, g.points().iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()));
    for n in [30, 40, 50] {
        let a = BasisSystem::build(&g, &quantile_knots(&g, n)).unwrap().smooth(&y, 1.0);
        let b = BasisSystem::build(&g, &quantile_knots(&g, n + 5)).unwrap().smooth(&y, 1.0);
        let sup = (a - b).amax();
        assert!(sup < 1e-2, "n = {n}: {sup}");
    }
}

#[test]
fn penalty_null_space_is_linear() {
    for m in [6, 25, 26, 80] {
        let basis = BasisSystem::new(&grid(m)).unwrap();
        let eig = SymmetricEigen::new(basis.penalty().clone());
        let max = eig.eigenvalues.amax();
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-8 * max.max(1.0)).count();
        assert_eq!(zeros, 2, "M = {m}");
        assert!(eig.eigenvalues.iter().all(|v| *v > -1e-8 * max.max(1.0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_functions_are_reproduced(
        m in 5usize..60,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        lambda_idx in 0usize..3,
        jitter in proptest::collection::vec(0.0f64..0.4, 60),
    ) {
        let lambda = [1e-4, 1.0, 1e6][lambda_idx];
        let mut pts = Vec::with_capacity(m);
        let mut x = 0.0;
        for i in 0..m {
            x += 0.3 + jitter[i];
            pts.push(x);
        }
        let g = ObservationGrid::new(&pts).unwrap();
        let basis = BasisSystem::new(&g).unwrap();
        let y = DVector::from_iterator(m, pts.iter().map(|t| a + b * t));
        let fit = basis.smooth(&y, lambda);
        let scale = y.amax().max(1.0);
        prop_assert!((fit - &y).amax() < 1e-8 * scale);
    }

    #[test]
    fn basis_is_orthonormal(m in 4usize..300) {
        let basis = BasisSystem::new(&grid(m)).unwrap();
        let b = basis.matrix();
        let l = b.ncols();
        prop_assert!(l <= m);
        prop_assert!((b.tr_mul(b) - DMatrix::<f64>::identity(l, l)).amax() < 1e-10);
        let omega = basis.penalty();
        prop_assert!((omega - omega.transpose()).amax() < 1e-10);
    }
}
