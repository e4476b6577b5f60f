//! Low-rank thin plate spline basis on a univariate observation grid.
//!
//! Construction follows three steps: the raw basis `[W₀ : Z₀]` with cubic
//! radial kernel and knot penalty `Ω_Z`; diagonalization
//! `B₀ = [W₀ : Z₀ Ω_Z^{-1/2}]` with penalty `Ω₀ = diag(0, 0, 1, …, 1)`; and
//! orthonormalization `B₀ = QR`, giving `B = Q` and `Ω = R'⁻¹ Ω₀ R⁻¹`.
//!
//! Points are rescaled affinely to `[0, 1]` before the kernel is evaluated.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Domain dimension supported by this basis.
pub const DOMAIN_DIM: usize = 1;

/// Grids up to this size use (capped) full-rank knots.
const FULL_RANK_MAX_POINTS: usize = 25;
const MAX_KNOTS: usize = 150;
const EIGEN_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unsupported domain dimension {0} (only D = 1 is implemented)")]
    UnsupportedDimension(usize),
    #[error("knot penalty matrix is numerically singular (eigenvalue ratio {0:e})")]
    DegenerateKnots(f64),
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("evaluation point {tau} outside the grid range [{lo}, {hi}]")]
    OutOfRange { tau: f64, lo: f64, hi: f64 },
}

/// Sorted, de-duplicated observation points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationGrid {
    points: Vec<f64>,
}

impl ObservationGrid {
    pub fn new(points: &[f64]) -> Result<Self, BasisError> {
        if let Some(bad) = points.iter().find(|x| !x.is_finite()) {
            return Err(BasisError::InvalidGrid(format!("non-finite point {bad}")));
        }
        let mut pts = points.to_vec();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.len() < 4 {
            return Err(BasisError::InvalidGrid(format!(
                "need at least 4 unique points, got {}",
                pts.len()
            )));
        }
        Ok(Self { points: pts })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0], self.points[self.points.len() - 1])
    }

    fn unit_scale(&self, tau: f64) -> f64 {
        let (lo, hi) = self.range();
        (tau - lo) / (hi - lo)
    }
}

/// Cubic thin plate kernel `b(r)`; only the odd-dimension case `D = 1`
/// (`b(r) = r³`) is supported.
pub fn tps_kernel(r: f64, dim: usize) -> Result<f64, BasisError> {
    if dim != DOMAIN_DIM {
        return Err(BasisError::UnsupportedDimension(dim));
    }
    Ok(r.powi(3))
}

/// Sample quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `n` knots at the `ℓ/(n+1)` sample quantiles of the grid.
pub fn quantile_knots(grid: &ObservationGrid, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|l| quantile_sorted(grid.points(), l as f64 / (n + 1) as f64))
        .collect()
}

/// Default knot rule: `M − 2` quantile knots for `M ≤ 25`, otherwise
/// `min(⌊M/4⌋, 150)`.
pub fn select_knots(grid: &ObservationGrid) -> Vec<f64> {
    let m = grid.len();
    let n = if m <= FULL_RANK_MAX_POINTS {
        m.min(m - DOMAIN_DIM - 1)
    } else {
        (m / 4).min(MAX_KNOTS)
    };
    quantile_knots(grid, n)
}

/// Orthonormal basis and matching penalty for one observation grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSystem {
    grid: ObservationGrid,
    knots: Vec<f64>,
    /// `M × L`, orthonormal columns.
    basis: DMatrix<f64>,
    /// `L × L` penalty.
    penalty: DMatrix<f64>,
    /// `Ω_Z^{-1/2}` applied to the raw kernel block.
    kernel_transform: DMatrix<f64>,
    /// `R⁻¹` from the thin QR of the diagonalized basis.
    r_inv: DMatrix<f64>,
}

impl BasisSystem {
    /// Basis with the default knot rule.
    pub fn new(grid: &ObservationGrid) -> Result<Self, BasisError> {
        let knots = select_knots(grid);
        Self::build(grid, &knots)
    }

    pub fn build(grid: &ObservationGrid, knots: &[f64]) -> Result<Self, BasisError> {
        let m = grid.len();
        let n_knots = knots.len();
        let l_dim = n_knots + DOMAIN_DIM + 1;
        if n_knots == 0 {
            return Err(BasisError::InvalidKnots("no knots".into()));
        }
        if l_dim > m {
            return Err(BasisError::InvalidKnots(format!(
                "{n_knots} knots give {l_dim} basis functions for {m} points"
            )));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BasisError::InvalidKnots("knots must be strictly increasing".into()));
        }
        let (lo, hi) = grid.range();
        if knots.iter().any(|&k| !(lo..=hi).contains(&k)) {
            return Err(BasisError::InvalidKnots("knots must lie within the grid range".into()));
        }

        let u: Vec<f64> = grid.points().iter().map(|&t| grid.unit_scale(t)).collect();
        let kappa: Vec<f64> = knots.iter().map(|&k| grid.unit_scale(k)).collect();

        let omega_z = DMatrix::from_fn(n_knots, n_knots, |a, b| {
            (kappa[a] - kappa[b]).abs().powi(3)
        });
        // Ω_Z is only conditionally positive definite for the cubic kernel, so
        // its inverse square root uses the magnitudes of the eigenvalues.
        let eig = SymmetricEigen::new(omega_z);
        let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(min_abs > EIGEN_REL_TOL * max_abs) {
            return Err(BasisError::DegenerateKnots(min_abs / max_abs));
        }
        let mut kernel_transform = eig.eigenvectors.clone();
        for (c, ev) in eig.eigenvalues.iter().enumerate() {
            let s = ev.abs().sqrt().recip();
            kernel_transform.column_mut(c).scale_mut(s);
        }

        let z0 = DMatrix::from_fn(m, n_knots, |j, l| (u[j] - kappa[l]).abs().powi(3));
        let z_diag = &z0 * &kernel_transform;
        let mut b0 = DMatrix::zeros(m, l_dim);
        for j in 0..m {
            b0[(j, 0)] = 1.0;
            b0[(j, 1)] = u[j];
        }
        b0.view_mut((0, DOMAIN_DIM + 1), (m, n_knots)).copy_from(&z_diag);

        let qr = b0.qr();
        let q = qr.q();
        let r = qr.r();
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or(BasisError::DegenerateKnots(0.0))?;
        let mut omega0 = DMatrix::<f64>::zeros(l_dim, l_dim);
        for i in (DOMAIN_DIM + 1)..l_dim {
            omega0[(i, i)] = 1.0;
        }
        let penalty = r_inv.transpose() * omega0 * &r_inv;
        let penalty = (&penalty + penalty.transpose()) * 0.5;

        Ok(Self {
            grid: grid.clone(),
            knots: knots.to_vec(),
            basis: q,
            penalty,
            kernel_transform,
            r_inv,
        })
    }

    pub fn grid(&self) -> &ObservationGrid {
        &self.grid
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `M × L` orthonormal basis matrix `B`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `L × L` penalty `Ω`.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn n_points(&self) -> usize {
        self.basis.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.basis.ncols()
    }

    pub fn domain_dim(&self) -> usize {
        DOMAIN_DIM
    }

    /// Row of the basis at an arbitrary point inside the grid range.
    pub fn evaluate(&self, tau: f64) -> Result<DVector<f64>, BasisError> {
        let (lo, hi) = self.grid.range();
        if !(tau >= lo && tau <= hi) {
            return Err(BasisError::OutOfRange { tau, lo, hi });
        }
        let u = self.grid.unit_scale(tau);
        let raw = DVector::from_iterator(
            self.knots.len(),
            self.knots
                .iter()
                .map(|&k| (u - self.grid.unit_scale(k)).abs().powi(3)),
        );
        let kernel = self.kernel_transform.tr_mul(&raw);
        let mut b0 = DVector::zeros(self.n_basis());
        b0[0] = 1.0;
        b0[1] = u;
        b0.rows_mut(DOMAIN_DIM + 1, self.knots.len()).copy_from(&kernel);
        Ok(self.r_inv.tr_mul(&b0))
    }

    /// Basis rows at several points, one row per point.
    pub fn evaluate_many(&self, taus: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        let mut out = DMatrix::zeros(taus.len(), self.n_basis());
        for (i, &t) in taus.iter().enumerate() {
            out.row_mut(i).copy_from(&self.evaluate(t)?.transpose());
        }
        Ok(out)
    }

    /// Penalized least-squares coefficients `(B'B + λΩ)⁻¹ B'y`.
    pub fn smooth_coefficients(&self, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let lhs = DMatrix::identity(self.n_basis(), self.n_basis()) + &self.penalty * lambda;
        let rhs = self.basis.tr_mul(y);
        lhs.lu().solve(&rhs).expect("I + λΩ is positive definite")
    }

    /// Penalized least-squares fit at the grid points.
    pub fn smooth(&self, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
        &self.basis * self.smooth_coefficients(y, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_grid(m: usize) -> ObservationGrid {
        let pts: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        ObservationGrid::new(&pts).unwrap()
    }

    #[test]
    fn knot_counts_follow_the_rule() {
        assert_eq!(select_knots(&uniform_grid(100)).len(), 25);
        assert_eq!(select_knots(&uniform_grid(20)).len(), 18);
        assert_eq!(select_knots(&uniform_grid(604)).len(), 150);
        let g = uniform_grid(20);
        let k = select_knots(&g);
        assert!(k.len() + 2 <= g.len());
        assert!(k.windows(2).all(|w| w[1] > w[0]));
        let (lo, hi) = g.range();
        assert!(k.iter().all(|&x| x >= lo && x <= hi));
    }

    #[test]
    fn small_grids_put_knots_on_interior_points() {
        let g = uniform_grid(20);
        let k = select_knots(&g);
        for (l, kn) in k.iter().enumerate() {
            assert!((kn - g.points()[l + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(ObservationGrid::new(&[0.0, 1.0, 2.0]).is_err());
        assert!(ObservationGrid::new(&[0.0, 1.0, 1.0, 2.0]).is_err());
        assert!(ObservationGrid::new(&[0.0, 1.0, f64::NAN, 2.0, 3.0]).is_err());
        let g = ObservationGrid::new(&[3.0, 1.0, 2.0, 2.0, 0.0]).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(tps_kernel(0.0, 1).unwrap(), 0.0);
        assert_eq!(tps_kernel(1.0, 1).unwrap(), 1.0);
        assert_eq!(tps_kernel(2.0, 1).unwrap(), 8.0);
        assert!(matches!(tps_kernel(1.0, 2), Err(BasisError::UnsupportedDimension(2))));
    }

    #[test]
    fn basis_is_orthonormal_and_penalty_has_linear_null_space() {
        for &m in &[5usize, 12, 20, 30, 100, 250] {
            let sys = BasisSystem::new(&uniform_grid(m)).unwrap();
            let b = sys.matrix();
            let btb = b.tr_mul(b);
            let err = (&btb - DMatrix::identity(sys.n_basis(), sys.n_basis())).amax();
            assert!(err < 1e-10, "M={m}: B'B error {err}");
            let om = sys.penalty();
            assert!((om - om.transpose()).amax() < 1e-10);
            let ev = SymmetricEigen::new(om.clone()).eigenvalues;
            let zeros = ev.iter().filter(|v| v.abs() < 1e-8).count();
            assert_eq!(zeros, 2, "M={m}: spectrum {ev}");
            assert!(ev.iter().all(|&v| v > -1e-8));
        }
    }

    #[test]
    fn straight_line_is_reproduced_for_any_smoothing() {
        let g = uniform_grid(20);
        let sys = BasisSystem::new(&g).unwrap();
        assert_eq!(sys.n_basis(), 20);
        let y = DVector::from_iterator(20, g.points().iter().map(|t| 2.0 + 3.0 * t));
        for &lam in &[1e-4, 1.0, 1e6] {
            let fit = sys.smooth(&y, lam);
            assert!((&fit - &y).amax() < 1e-8, "lambda {lam}");
        }
    }

    #[test]
    fn evaluator_matches_basis_rows() {
        let pts: Vec<f64> = (0..40).map(|i| 1.0 + 29.0 * (i as f64 / 39.0).powf(1.3)).collect();
        let g = ObservationGrid::new(&pts).unwrap();
        let sys = BasisSystem::new(&g).unwrap();
        for j in [0usize, 4, 17, 39] {
            let row = sys.evaluate(g.points()[j]).unwrap();
            let diff = (&row - sys.matrix().row(j).transpose()).amax();
            assert!(diff < 1e-10, "row {j}: {diff}");
        }
    }

    #[test]
    fn evaluator_interpolates_linear_functions() {
        let g = uniform_grid(60);
        let sys = BasisSystem::new(&g).unwrap();
        let y = DVector::from_iterator(60, g.points().iter().copied());
        let coef = sys.smooth_coefficients(&y, 1.0);
        let (t5, t6) = (g.points()[5], g.points()[6]);
        let mid = 0.5 * (t5 + t6);
        let val = sys.evaluate(mid).unwrap().dot(&coef);
        assert!((val - mid).abs() < 1e-6);
    }

    #[test]
    fn evaluator_rejects_extrapolation() {
        let sys = BasisSystem::new(&uniform_grid(10)).unwrap();
        assert!(matches!(sys.evaluate(1.5), Err(BasisError::OutOfRange { .. })));
        assert!(matches!(sys.evaluate(-0.01), Err(BasisError::OutOfRange { .. })));
    }

    #[test]
    fn knot_validation() {
        let g = uniform_grid(10);
        assert!(BasisSystem::build(&g, &[0.5, 0.4]).is_err());
        assert!(BasisSystem::build(&g, &[0.1, 1.5]).is_err());
        let too_many: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert!(BasisSystem::build(&g, &too_many).is_err());
    }

    #[test]
    fn unscaled_domains_give_the_same_smoother() {
        // the internal rescaling makes the smoother invariant to affine maps
        let a = uniform_grid(30);
        let pts: Vec<f64> = a.points().iter().map(|t| 1.0 + 29.0 * t).collect();
        let b = ObservationGrid::new(&pts).unwrap();
        let sa = BasisSystem::new(&a).unwrap();
        let sb = BasisSystem::new(&b).unwrap();
        let y = DVector::from_iterator(30, a.points().iter().map(|t| (5.0 * t).sin()));
        assert!((sa.smooth(&y, 0.3) - sb.smooth(&y, 0.3)).amax() < 1e-8);
    }
}
