//! Variance components and their hyperparameters.
//!
//! * Horseshoe hierarchy on the innovations of the dynamic coefficients,
//!   written with the half-Cauchy scale-mixture expansion
//!   `σ⁻² ~ Gamma(1/2, ξ)`, `ξ ~ Gamma(1/2, λ⁻²)` at every level.
//! * Normal-inverse-gamma alternative and the static (one level shorter)
//!   hierarchy for non-dynamic coefficients.
//! * Multiplicative gamma process for the intercepts and factor innovations,
//!   with Student-t local scales on the innovations.
//! * Student-t₃ initial states via gamma expansions.
//! * Slice updates for the MGP shapes and the degrees of freedom.
//! * Stochastic volatility for the observation variance using the
//!   ten-component normal mixture approximation of `log χ²₁`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::Array3;
use crate::sampling::{RandomStream, SamplingError, SliceSampler};
use crate::statespace::{simulation_smoother, DlmSpec, StateSpaceError};

/// Smallest precision any update may return; the reciprocal caps variances.
pub const PRECISION_FLOOR: f64 = 1e-12;
pub const PRECISION_CAP: f64 = 1e12;

/// Slice bounds for the MGP shape parameters.
pub const SHAPE_BOUNDS: (f64, f64) = (0.1, 50.0);
/// Support of the uniform prior on the degrees of freedom.
pub const NU_BOUNDS: (f64, f64) = (2.0, 128.0);

#[derive(Debug, Error)]
pub enum ShrinkageError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
    #[error("non-finite {what} at index {index:?}")]
    NonFinite {
        what: &'static str,
        index: (usize, usize, usize),
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Shape/rate of a gamma full conditional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    /// Draw, with the rate floored at the smallest normal double and the
    /// result clamped to `[PRECISION_FLOOR, PRECISION_CAP]`.
    pub fn sample(&self, rng: &mut RandomStream) -> Result<f64, SamplingError> {
        let draw = rng.gamma(self.shape, self.rate.max(f64::MIN_POSITIVE))?;
        Ok(draw.clamp(PRECISION_FLOOR, PRECISION_CAP))
    }
}

/// Full conditional of one local innovation precision `σ⁻²_{ω,j,k,t}`.
pub fn horseshoe_local_params(xi_sigma: f64, omega: Option<f64>) -> GammaParams {
    match omega {
        Some(w) => GammaParams::new(1.0, xi_sigma + 0.5 * w * w),
        None => GammaParams::new(0.5, xi_sigma),
    }
}

/// Full conditional of an auxiliary scale given its two neighbouring precisions.
pub fn auxiliary_params(upper: f64, lower: f64) -> GammaParams {
    GammaParams::new(1.0, upper + lower)
}

/// Full conditional of `λ⁻²_{j,k}` given the `T − 1` local auxiliaries.
pub fn horseshoe_jk_params(n_times: usize, xi_lambda_jk: f64, sum_xi_sigma: f64) -> GammaParams {
    GammaParams::new(n_times as f64 / 2.0, xi_lambda_jk + sum_xi_sigma)
}

/// Full conditional of `λ⁻²_j` given the `K` auxiliaries below it.
pub fn horseshoe_j_params(n_factors: usize, xi_lambda_j: f64, sum_xi_jk: f64) -> GammaParams {
    GammaParams::new((n_factors as f64 + 1.0) / 2.0, xi_lambda_j + sum_xi_jk)
}

/// Full conditional of `λ⁻²_0` given the `p` auxiliaries below it.
pub fn horseshoe_global_params(n_predictors: usize, xi_lambda_0: f64, sum_xi_j: f64) -> GammaParams {
    GammaParams::new((n_predictors as f64 + 1.0) / 2.0, xi_lambda_0 + sum_xi_j)
}

/// Full conditional of `ξ_{λ_0}`, whose prior scale is tied to `T − 1`.
pub fn horseshoe_global_aux_params(n_times: usize, lambda0_prec: f64) -> GammaParams {
    GammaParams::new(1.0, (n_times as f64 - 1.0) + lambda0_prec)
}

/// Nested half-Cauchy hierarchy over predictors `j`, factors `k`, times `t`.
///
/// Precisions are stored rather than standard deviations. Entry `t = 0` of
/// the local arrays is unused: innovations exist for `t ≥ 1` only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorseshoeState {
    pub sigma_prec: Array3,
    pub xi_sigma: Array3,
    pub lambda_jk_prec: DMatrix<f64>,
    pub xi_lambda_jk: DMatrix<f64>,
    pub lambda_j_prec: DVector<f64>,
    pub xi_lambda_j: DVector<f64>,
    pub lambda0_prec: f64,
    pub xi_lambda0: f64,
}

impl HorseshoeState {
    pub fn new(p: usize, k: usize, t: usize) -> Self {
        Self {
            sigma_prec: Array3::filled(p, k, t, 1.0),
            xi_sigma: Array3::filled(p, k, t, 1.0),
            lambda_jk_prec: DMatrix::from_element(p, k, 1.0),
            xi_lambda_jk: DMatrix::from_element(p, k, 1.0),
            lambda_j_prec: DVector::from_element(p, 1.0),
            xi_lambda_j: DVector::from_element(p, 1.0),
            lambda0_prec: 1.0,
            xi_lambda0: 1.0,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.sigma_prec.dims()
    }

    /// Innovation standard deviation `σ_{ω,j,k,t}`.
    pub fn sigma_omega(&self, j: usize, k: usize, t: usize) -> f64 {
        self.sigma_prec[(j, k, t)].recip().sqrt()
    }

    /// Scale `λ_{j,k}`.
    pub fn lambda_jk(&self, j: usize, k: usize) -> f64 {
        self.lambda_jk_prec[(j, k)].recip().sqrt()
    }

    /// One sweep of the hierarchy given the increments `ω_{j,k,t}`
    /// (`p × K × T`, entry `t = 0` ignored).
    pub fn update(&mut self, omega: &Array3, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        if omega.dims() != self.dims() {
            return Err(ShrinkageError::Dimension(format!(
                "increments are {:?}, hierarchy is {:?}",
                omega.dims(),
                self.dims()
            )));
        }
        let [p, k, t] = self.dims();
        for j in 0..p {
            for kk in 0..k {
                for tt in 1..t {
                    let w = omega[(j, kk, tt)];
                    if !w.is_finite() {
                        return Err(ShrinkageError::NonFinite {
                            what: "innovation increment",
                            index: (j, kk, tt),
                        });
                    }
                }
            }
        }
        self.sweep(Some(omega), rng)
    }

    /// One sweep with no likelihood: a Gibbs chain on the prior.
    pub fn update_prior_only(&mut self, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        self.sweep(None, rng)
    }

    fn sweep(&mut self, omega: Option<&Array3>, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let [p, k, t] = self.dims();
        for j in 0..p {
            for kk in 0..k {
                let lambda_jk = self.lambda_jk_prec[(j, kk)];
                let mut sum_xi = 0.0;
                for tt in 1..t {
                    let w = omega.map(|o| o[(j, kk, tt)]);
                    let prec = horseshoe_local_params(self.xi_sigma[(j, kk, tt)], w).sample(rng)?;
                    self.sigma_prec[(j, kk, tt)] = prec;
                    let xi = auxiliary_params(lambda_jk, prec).sample(rng)?;
                    self.xi_sigma[(j, kk, tt)] = xi;
                    sum_xi += xi;
                }
                self.lambda_jk_prec[(j, kk)] =
                    horseshoe_jk_params(t, self.xi_lambda_jk[(j, kk)], sum_xi).sample(rng)?;
            }
        }
        self.update_upper_levels(t, rng)
    }

    /// Static-coefficient hierarchy: `α_{j,k} ~ N(0, λ²_{j,k})` with the
    /// local innovation level removed. `alpha` is `p × K`.
    pub fn update_static(
        &mut self,
        alpha: &DMatrix<f64>,
        n_times: usize,
        rng: &mut RandomStream,
    ) -> Result<(), ShrinkageError> {
        let [p, k, _] = self.dims();
        if alpha.shape() != (p, k) {
            return Err(ShrinkageError::Dimension(format!(
                "static coefficients are {:?}, expected ({p}, {k})",
                alpha.shape()
            )));
        }
        for j in 0..p {
            for kk in 0..k {
                let a = alpha[(j, kk)];
                if !a.is_finite() {
                    return Err(ShrinkageError::NonFinite {
                        what: "static coefficient",
                        index: (j, kk, 0),
                    });
                }
                self.lambda_jk_prec[(j, kk)] =
                    GammaParams::new(1.0, self.xi_lambda_jk[(j, kk)] + 0.5 * a * a).sample(rng)?;
            }
        }
        self.update_upper_levels(n_times, rng)
    }

    fn update_upper_levels(&mut self, n_times: usize, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let [p, k, _] = self.dims();
        for j in 0..p {
            let mut sum = 0.0;
            for kk in 0..k {
                let xi = auxiliary_params(self.lambda_j_prec[j], self.lambda_jk_prec[(j, kk)]).sample(rng)?;
                self.xi_lambda_jk[(j, kk)] = xi;
                sum += xi;
            }
            self.lambda_j_prec[j] = horseshoe_j_params(k, self.xi_lambda_j[j], sum).sample(rng)?;
        }
        let mut sum = 0.0;
        for j in 0..p {
            let xi = auxiliary_params(self.lambda0_prec, self.lambda_j_prec[j]).sample(rng)?;
            self.xi_lambda_j[j] = xi;
            sum += xi;
        }
        self.lambda0_prec = horseshoe_global_params(p, self.xi_lambda0, sum).sample(rng)?;
        self.xi_lambda0 = horseshoe_global_aux_params(n_times, self.lambda0_prec).sample(rng)?;
        Ok(())
    }
}

/// Normal-inverse-gamma innovations: one precision per `(j, k)`, shared over
/// time, with a `Gamma(0.001, 0.001)` prior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NigState {
    pub prec: DMatrix<f64>,
}

pub const NIG_PRIOR: f64 = 0.001;

impl NigState {
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            prec: DMatrix::from_element(p, k, 1.0),
        }
    }

    pub fn params(n_increments: usize, sum_sq: f64) -> GammaParams {
        GammaParams::new(NIG_PRIOR + n_increments as f64 / 2.0, NIG_PRIOR + 0.5 * sum_sq)
    }

    pub fn update(&mut self, omega: &Array3, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let [p, k, t] = omega.dims();
        if (p, k) != self.prec.shape() {
            return Err(ShrinkageError::Dimension(format!(
                "increments are {:?}, precisions are {:?}",
                omega.dims(),
                self.prec.shape()
            )));
        }
        for j in 0..p {
            for kk in 0..k {
                let lane = omega.lane(j, kk);
                if let Some(tt) = (1..t).find(|&tt| !lane[tt].is_finite()) {
                    return Err(ShrinkageError::NonFinite {
                        what: "innovation increment",
                        index: (j, kk, tt),
                    });
                }
                let ss: f64 = lane[1..].iter().map(|w| w * w).sum();
                self.prec[(j, kk)] = Self::params(t.saturating_sub(1), ss).sample(rng)?;
            }
        }
        Ok(())
    }
}

/// Multiplicative gamma process on the intercept and innovation variances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MgpState {
    pub delta_mu: DVector<f64>,
    pub sigma_mu: DVector<f64>,
    pub delta_eta: DVector<f64>,
    pub sigma_eta: DVector<f64>,
    /// `K × T` local precisions; column 0 is unused.
    pub xi_eta: DMatrix<f64>,
    pub a_mu1: f64,
    pub a_mu2: f64,
    pub a_eta1: f64,
    pub a_eta2: f64,
    pub nu_eta: f64,
}

impl MgpState {
    pub fn new(k: usize, t: usize) -> Self {
        let mut s = Self {
            delta_mu: DVector::from_element(k, 1.0),
            sigma_mu: DVector::from_element(k, 1.0),
            delta_eta: DVector::from_element(k, 1.0),
            sigma_eta: DVector::from_element(k, 1.0),
            xi_eta: DMatrix::from_element(k, t, 1.0),
            a_mu1: 2.0,
            a_mu2: 3.0,
            a_eta1: 2.0,
            a_eta2: 3.0,
            nu_eta: 3.0,
        };
        s.refresh();
        s
    }

    pub fn n_factors(&self) -> usize {
        self.delta_mu.len()
    }

    /// Recompute `σ_k = Π_{ℓ≤k} δ_ℓ^{-1/2}` for both chains.
    pub fn refresh(&mut self) {
        self.sigma_mu = cumulative_sd(&self.delta_mu);
        self.sigma_eta = cumulative_sd(&self.delta_eta);
    }

    /// Innovation standard deviation `σ_{η,k,t} = σ_{η,k} / √ξ_{η,k,t}`.
    pub fn eta_sd(&self, k: usize, t: usize) -> f64 {
        self.sigma_eta[k] / self.xi_eta[(k, t)].sqrt()
    }

    /// Full conditional of `δ_ℓ` given weighted squared terms `s_k`
    /// (with `n_per_factor` terms per factor), using the other multipliers in `delta`.
    pub fn delta_params(
        delta: &DVector<f64>,
        ell: usize,
        weighted_sq: &[f64],
        n_per_factor: usize,
        a1: f64,
        a2: f64,
    ) -> GammaParams {
        let k = delta.len();
        let a = if ell == 0 { a1 } else { a2 };
        let shape = a + ((k - ell) * n_per_factor) as f64 / 2.0;
        let mut tau = 1.0;
        for h in 0..ell {
            tau *= delta[h];
        }
        let mut rate = 1.0;
        for kk in ell..k {
            if kk > ell {
                tau *= delta[kk];
            }
            rate += 0.5 * tau * weighted_sq[kk];
        }
        GammaParams::new(shape, rate)
    }

    /// Update `δ_μ` given the intercepts.
    pub fn update_mu(&mut self, mu: &DVector<f64>, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let k = self.n_factors();
        if mu.len() != k {
            return Err(ShrinkageError::Dimension(format!("{} intercepts for K = {k}", mu.len())));
        }
        if let Some(i) = mu.iter().position(|v| !v.is_finite()) {
            return Err(ShrinkageError::NonFinite {
                what: "intercept",
                index: (i, 0, 0),
            });
        }
        let sq: Vec<f64> = mu.iter().map(|m| m * m).collect();
        for ell in 0..k {
            let params = Self::delta_params(&self.delta_mu, ell, &sq, 1, self.a_mu1, self.a_mu2);
            self.delta_mu[ell] = params.sample(rng)?;
        }
        self.refresh();
        Ok(())
    }

    /// Update `δ_η` and the local scales `ξ_{η,k,t}` given innovations
    /// `η` (`K × T`, column 0 ignored).
    pub fn update_eta(&mut self, eta: &DMatrix<f64>, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let (k, t) = eta.shape();
        if (k, t) != self.xi_eta.shape() {
            return Err(ShrinkageError::Dimension(format!(
                "innovations are {:?}, local scales are {:?}",
                eta.shape(),
                self.xi_eta.shape()
            )));
        }
        for kk in 0..k {
            for tt in 1..t {
                if !eta[(kk, tt)].is_finite() {
                    return Err(ShrinkageError::NonFinite {
                        what: "factor innovation",
                        index: (kk, tt, 0),
                    });
                }
            }
        }
        let n = t.saturating_sub(1);
        let sq: Vec<f64> = (0..k)
            .map(|kk| (1..t).map(|tt| eta[(kk, tt)].powi(2) * self.xi_eta[(kk, tt)]).sum())
            .collect();
        for ell in 0..k {
            let params = Self::delta_params(&self.delta_eta, ell, &sq, n, self.a_eta1, self.a_eta2);
            self.delta_eta[ell] = params.sample(rng)?;
        }
        self.refresh();
        let half_nu = 0.5 * self.nu_eta;
        for kk in 0..k {
            let var = self.sigma_eta[kk].powi(2);
            for tt in 1..t {
                let e = eta[(kk, tt)];
                self.xi_eta[(kk, tt)] = GammaParams::new(half_nu + 0.5, half_nu + e * e / (2.0 * var)).sample(rng)?;
            }
        }
        Ok(())
    }

    /// Slice updates of the four shapes and `ν_η`.
    pub fn update_hyper_shapes(&mut self, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let slice = SliceSampler::default();
        let k = self.n_factors();
        let d_mu = self.delta_mu.clone();
        let d_eta = self.delta_eta.clone();
        self.a_mu1 = slice.sample(|a| shape_log_density(a, &d_mu.as_slice()[..1]), self.a_mu1, SHAPE_BOUNDS, rng)?;
        self.a_mu2 = slice.sample(|a| shape_log_density(a, &d_mu.as_slice()[1..k]), self.a_mu2, SHAPE_BOUNDS, rng)?;
        self.a_eta1 = slice.sample(|a| shape_log_density(a, &d_eta.as_slice()[..1]), self.a_eta1, SHAPE_BOUNDS, rng)?;
        self.a_eta2 = slice.sample(|a| shape_log_density(a, &d_eta.as_slice()[1..k]), self.a_eta2, SHAPE_BOUNDS, rng)?;
        let xi = self.xi_eta.columns(1, self.xi_eta.ncols().saturating_sub(1)).into_owned();
        let nu_slice = SliceSampler {
            width: 10.0,
            ..slice
        };
        self.nu_eta = nu_slice.sample(|nu| nu_log_density(nu, xi.as_slice()), self.nu_eta, NU_BOUNDS, rng)?;
        Ok(())
    }
}

fn cumulative_sd(delta: &DVector<f64>) -> DVector<f64> {
    let mut prod = 1.0;
    DVector::from_iterator(
        delta.len(),
        delta.iter().map(|d| {
            prod *= d;
            prod.recip().sqrt()
        }),
    )
}

/// Log conditional of an MGP shape `a`: `Gamma(2, 1)` prior times the
/// `Gamma(a, 1)` likelihood of the multipliers it governs.
pub fn shape_log_density(a: f64, deltas: &[f64]) -> f64 {
    let prior = a.ln() - a;
    let lik: f64 = deltas.iter().map(|d| a * d.ln() - ln_gamma(a)).sum();
    prior + lik
}

/// Log conditional of `ν` under a flat prior: `Gamma(ν/2, ν/2)` likelihood
/// of the local precisions.
pub fn nu_log_density(nu: f64, xi: &[f64]) -> f64 {
    let h = 0.5 * nu;
    let n = xi.len() as f64;
    let (sum_log, sum) = xi.iter().fold((0.0, 0.0), |(l, s), x| (l + x.ln(), s + x));
    n * (h * h.ln() - ln_gamma(h)) + (h - 1.0) * sum_log - h * sum
}

/// Full conditional of an initial-state expansion scale: with
/// `s ~ N(0, 1/ξ)` and `ξ ~ Gamma(3/2, 3/2)`, the marginal of `s` is `t₃`.
pub fn init_scale_params(state: f64) -> GammaParams {
    GammaParams::new(2.0, 1.5 + 0.5 * state * state)
}

/// Expansion scales of the initial states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitScales {
    /// `ξ_{η,k,0}`, length `K`.
    pub xi_eta: DVector<f64>,
    /// `ξ_{ω,j,k,0}`, `p × K`.
    pub xi_omega: DMatrix<f64>,
}

impl InitScales {
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            xi_eta: DVector::from_element(k, 1.0),
            xi_omega: DMatrix::from_element(p, k, 1.0),
        }
    }

    /// Refresh from the first-time states: `gamma0` length `K`, `alpha0`
    /// `p × K` (skipped when `None`).
    pub fn update(
        &mut self,
        gamma0: &DVector<f64>,
        alpha0: Option<&DMatrix<f64>>,
        rng: &mut RandomStream,
    ) -> Result<(), ShrinkageError> {
        for (k, &g) in gamma0.iter().enumerate() {
            self.xi_eta[k] = init_scale_params(g).sample(rng)?;
        }
        if let Some(a) = alpha0 {
            for j in 0..a.nrows() {
                for k in 0..a.ncols() {
                    self.xi_omega[(j, k)] = init_scale_params(a[(j, k)]).sample(rng)?;
                }
            }
        }
        Ok(())
    }
}

/// Mixture weights, means and variances of the ten-component normal
/// approximation to the `log χ²₁` distribution.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// Replacement for residuals that are exactly zero before log-squaring.
pub const ZERO_RESIDUAL_OFFSET: f64 = 1e-10;

const SV_MU_PRIOR_MEAN: f64 = -10.0;
const SV_MU_PRIOR_VAR: f64 = 100.0;
const SV_SIGMA_MAX: f64 = 100.0;

/// AR(1) log-variance process `h_t = μ_h + φ_h (h_{t-1} − μ_h) + σ_ν ν_t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolatilityState {
    pub h: Vec<f64>,
    pub mu_h: f64,
    pub phi_h: f64,
    pub sigma_nu: f64,
}

impl VolatilityState {
    /// Constant path at `log(variance)`.
    pub fn constant(n_times: usize, variance: f64) -> Self {
        let level = variance.ln();
        Self {
            h: vec![level; n_times],
            mu_h: level,
            phi_h: 0.9,
            sigma_nu: 0.1,
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        self.h.iter().map(|h| h.exp()).collect()
    }

    /// Full stochastic-volatility update: log-variance path, then `μ_h`,
    /// `φ_h`, `σ_ν`. `residuals` is `T × M`.
    pub fn update(&mut self, residuals: &DMatrix<f64>, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        self.update_path(residuals, rng)?;
        self.update_parameters(rng)
    }

    /// Draw `h` given the AR parameters through the mixture linearization.
    /// At each `t` the `M` linearized observations are pooled into their
    /// precision-weighted mean.
    pub fn update_path(&mut self, residuals: &DMatrix<f64>, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        let (t, m) = residuals.shape();
        if t != self.h.len() {
            return Err(ShrinkageError::Dimension(format!(
                "{t} residual rows for a volatility path of length {}",
                self.h.len()
            )));
        }
        let mut obs = vec![0.0; t];
        let mut obs_var = vec![0.0; t];
        let mut weights = [0.0; 10];
        for tt in 0..t {
            let (mut num, mut den) = (0.0, 0.0);
            for mm in 0..m {
                let r = residuals[(tt, mm)];
                if !r.is_finite() {
                    return Err(ShrinkageError::NonFinite {
                        what: "residual",
                        index: (tt, mm, 0),
                    });
                }
                let r = if r == 0.0 { ZERO_RESIDUAL_OFFSET } else { r };
                let y = (r * r).ln();
                let e = y - self.h[tt];
                let mut max = f64::NEG_INFINITY;
                for s in 0..10 {
                    let d = e - MIX_MEAN[s];
                    weights[s] = MIX_PROB[s].ln() - 0.5 * MIX_VAR[s].ln() - 0.5 * d * d / MIX_VAR[s];
                    max = max.max(weights[s]);
                }
                let mut total = 0.0;
                for w in weights.iter_mut() {
                    *w = (*w - max).exp();
                    total += *w;
                }
                let u = rng.uniform() * total;
                let mut acc = 0.0;
                let mut comp = 9;
                for (s, w) in weights.iter().enumerate() {
                    acc += w;
                    if u <= acc {
                        comp = s;
                        break;
                    }
                }
                num += (y - MIX_MEAN[comp]) / MIX_VAR[comp];
                den += 1.0 / MIX_VAR[comp];
            }
            obs[tt] = num / den - self.mu_h;
            obs_var[tt] = 1.0 / den;
        }
        let innov = self.sigma_nu * self.sigma_nu;
        let spec = DlmSpec {
            design: DMatrix::from_element(t, 1, 1.0),
            phi: self.phi_h,
            obs_var,
            alpha_innov_var: DMatrix::zeros(t, 0),
            gamma_innov_var: vec![innov; t],
            init_var: vec![innov / (1.0 - self.phi_h * self.phi_h)],
        };
        let path = simulation_smoother(&spec, &obs, rng)?;
        for (h, g) in self.h.iter_mut().zip(&path.gamma) {
            *h = self.mu_h + g;
        }
        Ok(())
    }

    /// Update `μ_h` (conjugate normal), `φ_h` and `σ_ν` (slice) given `h`.
    pub fn update_parameters(&mut self, rng: &mut RandomStream) -> Result<(), ShrinkageError> {
        self.update_mu(rng);
        let slice = SliceSampler::default();
        let h = self.h.clone();
        let (mu, sigma) = (self.mu_h, self.sigma_nu);
        self.phi_h = slice.sample(
            |phi| ar1_log_likelihood(&h, mu, phi, sigma) + 19.0 * (0.5 * (1.0 + phi)).ln() + 0.5 * (0.5 * (1.0 - phi)).ln(),
            self.phi_h,
            (-1.0, 1.0),
            rng,
        )?;
        let phi = self.phi_h;
        let width = (0.5 * self.sigma_nu).max(1e-3);
        self.sigma_nu = SliceSampler {
            width,
            ..slice
        }
        .sample(|s| ar1_log_likelihood(&h, mu, phi, s), self.sigma_nu, (0.0, SV_SIGMA_MAX), rng)?;
        Ok(())
    }

    fn update_mu(&mut self, rng: &mut RandomStream) {
        let phi = self.phi_h;
        let var = self.sigma_nu * self.sigma_nu;
        let h = &self.h;
        let stat = 1.0 - phi * phi;
        let mut prec = 1.0 / SV_MU_PRIOR_VAR + stat / var;
        let mut lin = SV_MU_PRIOR_MEAN / SV_MU_PRIOR_VAR + h[0] * stat / var;
        for t in 1..h.len() {
            prec += (1.0 - phi).powi(2) / var;
            lin += (1.0 - phi) * (h[t] - phi * h[t - 1]) / var;
        }
        self.mu_h = lin / prec + rng.normal() / prec.sqrt();
    }
}

/// Log density of a stationary AR(1) path with mean `mu`.
pub fn ar1_log_likelihood(h: &[f64], mu: f64, phi: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let stat = 1.0 - phi * phi;
    let d0 = h[0] - mu;
    let mut ll = 0.5 * (stat / var).ln() - 0.5 * d0 * d0 * stat / var;
    for t in 1..h.len() {
        let e = (h[t] - mu) - phi * (h[t - 1] - mu);
        ll += -0.5 * var.ln() - 0.5 * e * e / var;
    }
    ll
}
