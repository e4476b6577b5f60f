//! The Gibbs sampler.
//!
//! One sweep runs, in order:
//!
//! 1. impute unobserved cells from the current fit;
//! 2. update each loading curve (smoothing precision, then a draw of its
//!    basis coefficients orthogonal to the other curves, then rescaling);
//! 3. project the data onto the loadings, `Ỹ = F'Y`;
//! 4. draw each factor's dynamic states jointly with the simulation smoother;
//! 5. update intercepts and AR coefficients;
//! 6. update observation variance, MGP multipliers and innovation shrinkage;
//! 7. refresh the initial-state expansion scales;
//! 8. slice-update the MGP shapes and the degrees of freedom.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSystem, ObservationGrid};
use crate::data::{Array3, FunctionalDataset};
use crate::sampling::{
    sample_constrained_gaussian, sample_truncated_gamma, GaussianSystem, RandomStream, SamplingError,
    SliceSampler,
};
use crate::shrinkage::{
    GammaParams, HorseshoeState, InitScales, MgpState, NigState, ShrinkageError, VolatilityState,
};
use crate::statespace::{build_dlm_spec, simulation_smoother, StatePath, StateSpaceError};

/// Lower truncation point of the smoothing precisions.
pub const LAMBDA_F_LOWER: f64 = 1e-8;
/// Tolerance of the in-loop orthonormality check.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;
/// Tolerance of the in-loop factor recomposition check.
pub const RECOMPOSITION_TOL: f64 = 1e-10;
const RSS_RATE_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("iteration {iteration}, {step}: {source}")]
    Step {
        iteration: usize,
        step: &'static str,
        #[source]
        source: StepError,
    },
    #[error("index out of range: {0}")]
    Index(String),
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
    #[error(transparent)]
    Shrinkage(#[from] ShrinkageError),
    #[error("loading {k} collapsed (norm {norm:e})")]
    DegenerateLoading { k: usize, norm: f64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Model variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Dynamic coefficients with horseshoe innovations.
    #[serde(rename = "hs")]
    DfosrHs,
    /// Dynamic coefficients with normal-inverse-gamma innovations.
    #[serde(rename = "nig")]
    DfosrNig,
    /// Static coefficients with AR(1) factor errors.
    #[serde(rename = "fosr-ar")]
    FosrAr,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::DfosrHs => "hs",
            Variant::DfosrNig => "nig",
            Variant::FosrAr => "fosr-ar",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hs" | "dfosr-hs" => Ok(Variant::DfosrHs),
            "nig" | "dfosr-nig" => Ok(Variant::DfosrNig),
            "fosr-ar" | "ar" => Ok(Variant::FosrAr),
            other => Err(format!("unknown variant '{other}' (expected hs, nig or fosr-ar)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub k: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub variant: Variant,
    /// Stochastic volatility instead of a constant observation variance.
    pub sv: bool,
    /// `Beta(5, 2)` prior on `(φ+1)/2`; otherwise flat on `(−0.99, 0.99)`.
    pub stationary_phi: bool,
    pub seed: u64,
    /// Run the per-factor state draws on the rayon pool.
    pub parallel: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            k: 6,
            n_iter: 16_000,
            burn_in: 10_000,
            thin: 3,
            variant: Variant::DfosrHs,
            sv: false,
            stationary_phi: true,
            seed: 0,
            parallel: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.k == 0 {
            return Err(GibbsError::Config("K must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(GibbsError::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(GibbsError::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.n_iter
            )));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn is_retained(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// Loading curves in basis (`Ψ`, `L × K`) and grid (`F = BΨ`, `M × K`) form.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadingSet {
    pub psi: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl LoadingSet {
    pub fn from_psi(basis: &BasisSystem, psi: DMatrix<f64>) -> Self {
        let f = basis.matrix() * &psi;
        Self { psi, f }
    }

    /// `max |F'F − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.f.tr_mul(&self.f);
        let k = g.nrows();
        (g - DMatrix::identity(k, k)).amax()
    }
}

/// Observation-variance model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ObsVariance {
    Constant(f64),
    Stochastic(VolatilityState),
}

impl ObsVariance {
    pub fn variances(&self, n_times: usize) -> Vec<f64> {
        match self {
            ObsVariance::Constant(v) => vec![*v; n_times],
            ObsVariance::Stochastic(sv) => sv.variances(),
        }
    }
}

/// Prior on the coefficient dynamics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CoefficientPrior {
    Horseshoe(HorseshoeState),
    Nig(NigState),
    /// Static coefficients shrunk by the horseshoe levels above `λ_{j,k}`.
    Static(HorseshoeState),
}

/// Full state of the chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    pub loadings: LoadingSet,
    pub lambda_f: DVector<f64>,
    /// `K × T`.
    pub beta: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub phi: DVector<f64>,
    /// `K × T`.
    pub gamma: DMatrix<f64>,
    /// `p × K × T`.
    pub alpha: Array3,
    pub coefficients: CoefficientPrior,
    pub mgp: MgpState,
    pub obs: ObsVariance,
    pub init: InitScales,
    /// Response with unobserved cells at their current imputations (`T × M`).
    pub y: DMatrix<f64>,
}

impl ModelState {
    pub fn n_factors(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.beta.ncols()
    }

    pub fn n_predictors(&self) -> usize {
        self.alpha.dims()[0]
    }

    pub fn obs_variances(&self) -> Vec<f64> {
        self.obs.variances(self.n_times())
    }

    /// `β_{k,t} = μ_k + x_t'α_{·,k,t} + γ_{k,t}` for every `(k, t)`.
    pub fn recompose_beta(&mut self, x: &DMatrix<f64>) {
        self.beta = recompose(&self.mu, &self.alpha, &self.gamma, x);
    }

    /// `max |β − (μ + Xα + γ)|`.
    pub fn recomposition_error(&self, x: &DMatrix<f64>) -> f64 {
        (&self.beta - recompose(&self.mu, &self.alpha, &self.gamma, x)).amax()
    }

    /// Increments `α_{j,k,t} − α_{j,k,t−1}` (entry `t = 0` is zero).
    pub fn alpha_increments(&self) -> Array3 {
        let [p, k, t] = self.alpha.dims();
        let mut out = Array3::zeros(p, k, t);
        for j in 0..p {
            for kk in 0..k {
                let lane = self.alpha.lane(j, kk);
                let dst = out.lane_mut(j, kk);
                for tt in 1..t {
                    dst[tt] = lane[tt] - lane[tt - 1];
                }
            }
        }
        out
    }

    /// AR innovations `γ_{k,t} − φ_k γ_{k,t−1}` (column 0 is zero).
    pub fn eta(&self) -> DMatrix<f64> {
        let (k, t) = self.gamma.shape();
        DMatrix::from_fn(k, t, |kk, tt| {
            if tt == 0 {
                0.0
            } else {
                self.gamma[(kk, tt)] - self.phi[kk] * self.gamma[(kk, tt - 1)]
            }
        })
    }

    /// Residual matrix `Y − (Fβ)'`, `T × M`.
    pub fn residuals(&self) -> DMatrix<f64> {
        &self.y - (&self.loadings.f * &self.beta).transpose()
    }
}

fn recompose(mu: &DVector<f64>, alpha: &Array3, gamma: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, t) = gamma.shape();
    let p = alpha.dims()[0];
    DMatrix::from_fn(k, t, |kk, tt| {
        let mut b = mu[kk] + gamma[(kk, tt)];
        for j in 0..p {
            b += x[(tt, j)] * alpha[(j, kk, tt)];
        }
        b
    })
}

/// Projected data `Ỹ = Ψ'(B'Y')`, `K × T`.
pub fn project(loadings: &LoadingSet, basis_data: &DMatrix<f64>) -> DMatrix<f64> {
    loadings.psi.tr_mul(basis_data)
}

/// Gaussian full conditional of `β_t` from the projected observation
/// `Ỹ_t` with noise variance `σ²_t`, combined with a Gaussian prior in
/// canonical form.
pub fn working_conditional(ytilde: &DVector<f64>, obs_var: f64, prior: &GaussianSystem) -> GaussianSystem {
    let k = ytilde.len();
    GaussianSystem {
        precision: &prior.precision + DMatrix::identity(k, k) / obs_var,
        linear: &prior.linear + ytilde / obs_var,
    }
}

/// A sampler bound to one dataset.
pub struct GibbsSampler {
    config: McmcConfig,
    basis: BasisSystem,
    predictors: DMatrix<f64>,
    missing: Vec<(usize, usize)>,
    state: ModelState,
    /// `B'Y'` for the current imputations, `L × T`.
    basis_data: DMatrix<f64>,
    rng: RandomStream,
}

impl GibbsSampler {
    pub fn new(config: McmcConfig, data: &FunctionalDataset) -> Result<Self, GibbsError> {
        config.validate()?;
        let grid = ObservationGrid::new(&data.points)?;
        if grid.len() != data.n_points() {
            return Err(GibbsError::Config("observation points must be distinct".into()));
        }
        let basis = BasisSystem::new(&grid)?;
        let state = initial_state(&config, data, &basis)?;
        let basis_data = basis.matrix().tr_mul(&state.y.transpose());
        Ok(Self {
            rng: RandomStream::new(config.seed),
            predictors: data.predictors.clone(),
            missing: data.missing_cells(),
            config,
            basis,
            state,
            basis_data,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    /// One full sweep of steps 1–8.
    pub fn sweep(&mut self, iteration: usize) -> Result<(), GibbsError> {
        let wrap = |step: &'static str| move |source: StepError| GibbsError::Step { iteration, step, source };
        self.impute_missing().map_err(wrap("imputation"))?;
        self.update_loadings().map_err(wrap("loading curves"))?;
        let ytilde = self.project();
        self.update_dynamic_states(&ytilde).map_err(wrap("dynamic states"))?;
        self.update_mu_phi().map_err(wrap("intercepts and AR coefficients"))?;
        self.update_observation_variance().map_err(wrap("observation variance"))?;
        self.update_shrinkage().map_err(wrap("shrinkage"))?;
        self.update_initial_scales().map_err(wrap("initial-state scales"))?;
        self.state
            .mgp
            .update_hyper_shapes(&mut self.rng)
            .map_err(|e| wrap("hyperparameters")(e.into()))?;
        Ok(())
    }

    /// Step 1.
    pub fn impute_missing(&mut self) -> Result<(), StepError> {
        if self.missing.is_empty() {
            return Ok(());
        }
        let var = self.state.obs_variances();
        let f = &self.state.loadings.f;
        for &(t, m) in &self.missing {
            let fit = f.row(m).dot(&self.state.beta.column(t).transpose());
            self.state.y[(t, m)] = fit + var[t].sqrt() * self.rng.normal();
        }
        self.basis_data = self.basis.matrix().tr_mul(&self.state.y.transpose());
        Ok(())
    }

    /// Step 2.
    pub fn update_loadings(&mut self) -> Result<(), StepError> {
        let var = self.state.obs_variances();
        let omega = &self.basis.penalty().clone();
        let l = self.basis.n_basis();
        let k_total = self.state.n_factors();
        let shape = (l as f64 + 1.0) / 2.0;
        for k in 0..k_total {
            let psi_k = self.state.loadings.psi.column(k).into_owned();
            let quad = (psi_k.transpose() * omega * &psi_k)[(0, 0)];
            let lambda = sample_truncated_gamma(shape, (0.5 * quad).max(1e-12), LAMBDA_F_LOWER, &mut self.rng)?;
            self.state.lambda_f[k] = lambda;

            let w = DVector::from_iterator(var.len(), self.state.beta.row(k).iter().zip(&var).map(|(b, v)| b / v));
            let scale: f64 = self.state.beta.row(k).iter().zip(&var).map(|(b, v)| b * b / v).sum();
            let mut linear = &self.basis_data * &w;
            let mut constraints = DMatrix::zeros(k_total - 1, l);
            let mut row = 0;
            for j in 0..k_total {
                if j == k {
                    continue;
                }
                let cross = self.state.beta.row(j).transpose().dot(&w);
                let psi_j = self.state.loadings.psi.column(j);
                linear -= psi_j * cross;
                constraints.row_mut(row).copy_from(&psi_j.transpose());
                row += 1;
            }
            let precision = DMatrix::identity(l, l) * scale + omega * lambda;
            let sys = GaussianSystem::new(precision, linear)?;
            let draw = sample_constrained_gaussian(&sys, &constraints, &mut self.rng)?;
            let norm = draw.norm();
            if !(norm >= 1e-12 && norm.is_finite()) {
                return Err(StepError::DegenerateLoading { k, norm });
            }
            self.state.loadings.psi.set_column(k, &(draw / norm));
            self.rescale_factor(k, norm);
        }
        self.state.loadings.f = self.basis.matrix() * &self.state.loadings.psi;
        Ok(())
    }

    fn rescale_factor(&mut self, k: usize, c: f64) {
        let s = &mut self.state;
        s.beta.row_mut(k).scale_mut(c);
        s.gamma.row_mut(k).scale_mut(c);
        s.mu[k] *= c;
        for j in 0..s.n_predictors() {
            for a in s.alpha.lane_mut(j, k) {
                *a *= c;
            }
        }
    }

    /// Step 3.
    pub fn project(&self) -> DMatrix<f64> {
        project(&self.state.loadings, &self.basis_data)
    }

    /// Step 4.
    pub fn update_dynamic_states(&mut self, ytilde: &DMatrix<f64>) -> Result<(), StepError> {
        let k_total = self.state.n_factors();
        let mut jobs = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let spec = build_dlm_spec(k, &self.state, &self.predictors)?;
            let y: Vec<f64> = ytilde.row(k).iter().map(|v| v - self.state.mu[k]).collect();
            jobs.push((spec, y, self.rng.fork()));
        }
        let run = |(spec, y, mut rng): (_, Vec<f64>, RandomStream)| simulation_smoother(&spec, &y, &mut rng);
        let paths: Vec<Result<StatePath, StateSpaceError>> = if self.config.parallel {
            jobs.into_par_iter().map(run).collect()
        } else {
            jobs.into_iter().map(run).collect()
        };
        let p = self.state.n_predictors();
        for (k, path) in paths.into_iter().enumerate() {
            let path = path?;
            for j in 0..p {
                let lane = self.state.alpha.lane_mut(j, k);
                for (t, a) in lane.iter_mut().enumerate() {
                    *a = path.alpha[(t, j)];
                }
            }
            for (t, g) in path.gamma.iter().enumerate() {
                self.state.gamma[(k, t)] = *g;
            }
        }
        self.state.recompose_beta(&self.predictors);
        Ok(())
    }

    /// Step 5.
    pub fn update_mu_phi(&mut self) -> Result<(), StepError> {
        let t_len = self.state.n_times();
        let slice = SliceSampler::default();
        for k in 0..self.state.n_factors() {
            let s = &mut self.state;
            let centered: Vec<f64> = (0..t_len).map(|t| s.gamma[(k, t)] + s.mu[k]).collect();
            let inv_var: Vec<f64> = (0..t_len).map(|t| s.mgp.eta_sd(k, t).powi(-2)).collect();
            let phi = s.phi[k];
            let (prec, lin) = mu_conditional(&centered, &inv_var, phi, s.mgp.sigma_mu[k]);
            let mu = lin / prec + self.rng.normal() / prec.sqrt();
            s.mu[k] = mu;
            let gamma: Vec<f64> = centered.iter().map(|c| c - mu).collect();
            for (t, g) in gamma.iter().enumerate() {
                s.gamma[(k, t)] = *g;
            }
            let stationary = self.config.stationary_phi;
            let bounds = if stationary { (-1.0, 1.0) } else { (-0.99, 0.99) };
            let start = phi.clamp(bounds.0 + 1e-9, bounds.1 - 1e-9);
            s.phi[k] = slice.sample(
                |phi| ar_log_likelihood(&gamma, &inv_var, phi) + if stationary { phi_log_prior(phi) } else { 0.0 },
                start,
                bounds,
                &mut self.rng,
            )?;
        }
        Ok(())
    }

    /// Step 6(a).
    pub fn update_observation_variance(&mut self) -> Result<(), StepError> {
        let resid = self.state.residuals();
        match &mut self.state.obs {
            ObsVariance::Constant(v) => {
                let (t, m) = resid.shape();
                let rate = 0.5 * resid.norm_squared();
                let rate = if rate < RSS_RATE_FLOOR {
                    log::warn!("residual sum of squares is numerically zero; the fit is degenerate");
                    RSS_RATE_FLOOR
                } else {
                    rate
                };
                *v = 1.0 / GammaParams::new(0.5 * (m * t) as f64, rate).sample(&mut self.rng)?;
            }
            ObsVariance::Stochastic(sv) => sv.update(&resid, &mut self.rng)?,
        }
        Ok(())
    }

    /// Step 6(b) and 6(c).
    pub fn update_shrinkage(&mut self) -> Result<(), StepError> {
        let s = &mut self.state;
        s.mgp.update_mu(&s.mu, &mut self.rng)?;
        let eta = s.eta();
        s.mgp.update_eta(&eta, &mut self.rng)?;
        let increments = s.alpha_increments();
        let t_len = s.n_times();
        match &mut s.coefficients {
            CoefficientPrior::Horseshoe(hs) => hs.update(&increments, &mut self.rng)?,
            CoefficientPrior::Nig(nig) => nig.update(&increments, &mut self.rng)?,
            CoefficientPrior::Static(hs) => {
                let [p, k, _] = s.alpha.dims();
                let a0 = DMatrix::from_fn(p, k, |j, kk| s.alpha[(j, kk, 0)]);
                hs.update_static(&a0, t_len, &mut self.rng)?
            }
        }
        Ok(())
    }

    /// Step 7.
    pub fn update_initial_scales(&mut self) -> Result<(), StepError> {
        let s = &mut self.state;
        let gamma0 = s.gamma.column(0).into_owned();
        let [p, k, _] = s.alpha.dims();
        let alpha0 = match s.coefficients {
            CoefficientPrior::Static(_) => None,
            _ => Some(DMatrix::from_fn(p, k, |j, kk| s.alpha[(j, kk, 0)])),
        };
        s.init.update(&gamma0, alpha0.as_ref(), &mut self.rng)?;
        Ok(())
    }

    fn check_invariants(&self, iteration: usize) -> Result<(), GibbsError> {
        let ortho = self.state.loadings.orthonormality_error();
        let recomposition = self.state.recomposition_error(&self.predictors);
        let fail = |msg: String| GibbsError::Step {
            iteration,
            step: "invariant check",
            source: StepError::Invariant(msg),
        };
        if !(ortho < ORTHONORMALITY_TOL) {
            return Err(fail(format!("max |F'F - I| = {ortho:e}")));
        }
        if !(recomposition < RECOMPOSITION_TOL) {
            return Err(fail(format!("factor recomposition error {recomposition:e}")));
        }
        Ok(())
    }

    /// Run the configured number of sweeps.
    pub fn run(mut self) -> Result<PosteriorDraws, GibbsError> {
        let mut draws = PosteriorDraws::empty(&self);
        for iteration in 0..self.config.n_iter {
            self.sweep(iteration)?;
            if self.config.is_retained(iteration) {
                self.check_invariants(iteration)?;
                draws.push(&self.state, &self.missing);
            }
            if (iteration + 1) % 1000 == 0 {
                log::debug!("completed {} of {} iterations", iteration + 1, self.config.n_iter);
            }
        }
        Ok(draws)
    }
}

/// Canonical parameters `(precision, linear term)` of the intercept full
/// conditional in the centered parametrization `γᶜ = γ + μ`.
pub fn mu_conditional(centered: &[f64], inv_var: &[f64], phi: f64, sigma_mu: f64) -> (f64, f64) {
    let mut prec = sigma_mu.powi(-2);
    let mut lin = 0.0;
    for t in 1..centered.len() {
        prec += (1.0 - phi).powi(2) * inv_var[t];
        lin += (1.0 - phi) * (centered[t] - phi * centered[t - 1]) * inv_var[t];
    }
    (prec, lin)
}

fn ar_log_likelihood(gamma: &[f64], inv_var: &[f64], phi: f64) -> f64 {
    (1..gamma.len())
        .map(|t| {
            let e = gamma[t] - phi * gamma[t - 1];
            -0.5 * e * e * inv_var[t]
        })
        .sum()
}

/// `Beta(5, 2)` log density of `(φ+1)/2`, up to a constant.
fn phi_log_prior(phi: f64) -> f64 {
    let u = 0.5 * (phi + 1.0);
    4.0 * u.ln() + (1.0 - u).ln()
}

fn initial_state(config: &McmcConfig, data: &FunctionalDataset, basis: &BasisSystem) -> Result<ModelState, GibbsError> {
    let (t, m) = data.response.shape();
    let p = data.n_predictors();
    let l = basis.n_basis();
    let k = config.k;
    if k > l || k > t || k > m {
        return Err(GibbsError::Config(format!(
            "K = {k} exceeds the basis dimension ({l}), the number of times ({t}) or of points ({m})"
        )));
    }
    let y = data.interpolated_response();
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let coef = basis.matrix().tr_mul(&centered.transpose());
    let svd = coef.svd(true, false);
    let u = svd.u.expect("left singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let psi = DMatrix::from_fn(l, k, |i, j| u[(i, order[j])]);
    let loadings = LoadingSet::from_psi(basis, psi);

    let basis_data = basis.matrix().tr_mul(&y.transpose());
    let beta = loadings.psi.tr_mul(&basis_data);
    let mu = DVector::from_iterator(k, beta.row_iter().map(|r| r.mean()));
    let gamma = DMatrix::from_fn(k, t, |kk, tt| beta[(kk, tt)] - mu[kk]);
    let resid = &y - (&loadings.f * &beta).transpose();
    let pooled = (resid.norm_squared() / (t * m) as f64).max(1e-8);
    let obs = if config.sv {
        ObsVariance::Stochastic(VolatilityState::constant(t, pooled))
    } else {
        ObsVariance::Constant(pooled)
    };
    let coefficients = match config.variant {
        Variant::DfosrHs => CoefficientPrior::Horseshoe(HorseshoeState::new(p, k, t)),
        Variant::DfosrNig => CoefficientPrior::Nig(NigState::new(p, k)),
        Variant::FosrAr => CoefficientPrior::Static(HorseshoeState::new(p, k, 1)),
    };
    Ok(ModelState {
        loadings,
        lambda_f: DVector::from_element(k, 1.0),
        beta,
        mu,
        phi: DVector::from_element(k, 0.5),
        gamma,
        alpha: Array3::zeros(p, k, t),
        coefficients,
        mgp: MgpState::new(k, t),
        obs,
        init: InitScales::new(p, k),
        y,
    })
}

/// Run a chain on `data` and return its retained draws.
pub fn run_gibbs(config: &McmcConfig, data: &FunctionalDataset) -> Result<PosteriorDraws, GibbsError> {
    GibbsSampler::new(config.clone(), data)?.run()
}

/// Retained draws of one chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: McmcConfig,
    pub points: Vec<f64>,
    pub predictors: DMatrix<f64>,
    /// `(t, m)` of each imputed cell, matching the order of `imputed`.
    pub missing: Vec<(usize, usize)>,
    pub psi: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    pub alpha: Vec<Array3>,
    pub beta: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub phi: Vec<DVector<f64>>,
    pub obs_var: Vec<Vec<f64>>,
    pub imputed: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    fn empty(sampler: &GibbsSampler) -> Self {
        let n = sampler.config.n_retained();
        Self {
            config: sampler.config.clone(),
            points: sampler.basis.grid().points().to_vec(),
            predictors: sampler.predictors.clone(),
            missing: sampler.missing.clone(),
            psi: Vec::with_capacity(n),
            f: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            beta: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            mu: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            obs_var: Vec::with_capacity(n),
            imputed: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, s: &ModelState, missing: &[(usize, usize)]) {
        self.psi.push(s.loadings.psi.clone());
        self.f.push(s.loadings.f.clone());
        self.alpha.push(s.alpha.clone());
        self.beta.push(s.beta.clone());
        self.gamma.push(s.gamma.clone());
        self.mu.push(s.mu.clone());
        self.phi.push(s.phi.clone());
        self.obs_var.push(s.obs_variances());
        self.imputed.push(missing.iter().map(|&(t, m)| s.y[(t, m)]).collect());
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn n_times(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Surface `α̃_{j,t}(τ_m) = Σ_k f_k(τ_m) α_{j,k,t}` of one draw, `T × M`.
    pub fn surface(&self, draw: usize, j: usize) -> Result<DMatrix<f64>, GibbsError> {
        if j >= self.n_predictors() {
            return Err(GibbsError::Index(format!("predictor {j} of {}", self.n_predictors())));
        }
        let alpha = &self.alpha[draw];
        let [_, k, t] = alpha.dims();
        let a = DMatrix::from_fn(k, t, |kk, tt| alpha[(j, kk, tt)]);
        Ok((&self.f[draw] * a).transpose())
    }

    /// Per-draw regression surfaces for predictor `j`.
    pub fn regression_surface(&self, j: usize) -> Result<Vec<DMatrix<f64>>, GibbsError> {
        (0..self.len()).map(|d| self.surface(d, j)).collect()
    }

    /// Posterior mean surface for predictor `j`.
    pub fn mean_surface(&self, j: usize) -> Result<DMatrix<f64>, GibbsError> {
        let mut acc = DMatrix::zeros(self.n_times(), self.n_points());
        for d in 0..self.len() {
            acc += self.surface(d, j)?;
        }
        Ok(acc / self.len().max(1) as f64)
    }

    /// Fitted curves `Ŷ_t(τ_m) = Σ_k f_k(τ_m) β_{k,t}` of one draw, `T × M`.
    pub fn fitted(&self, draw: usize) -> DMatrix<f64> {
        (&self.f[draw] * &self.beta[draw]).transpose()
    }

    pub fn fitted_curves(&self) -> Vec<DMatrix<f64>> {
        (0..self.len()).map(|d| self.fitted(d)).collect()
    }

    /// Loading draws with each curve's sign flipped to agree with the running
    /// mean of the previously aligned draws.
    pub fn aligned_loadings(&self) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.len());
        let mut running: Option<DMatrix<f64>> = None;
        for (d, f) in self.f.iter().enumerate() {
            let mut aligned = f.clone();
            if let Some(mean) = &running {
                for k in 0..aligned.ncols() {
                    if aligned.column(k).dot(&mean.column(k)) < 0.0 {
                        aligned.column_mut(k).neg_mut();
                    }
                }
            }
            running = Some(match running {
                None => aligned.clone(),
                Some(mean) => &mean + (&aligned - &mean) / (d + 1) as f64,
            });
            out.push(aligned);
        }
        out
    }

    /// `max |β − (μ + Xα + γ)|` over all stored draws.
    pub fn max_recomposition_error(&self) -> f64 {
        (0..self.len())
            .map(|d| (&self.beta[d] - recompose(&self.mu[d], &self.alpha[d], &self.gamma[d], &self.predictors)).amax())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(t: usize, m: usize, p: usize, seed: u64) -> FunctionalDataset {
        let mut rng = RandomStream::new(seed);
        let points: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        let x = DMatrix::from_fn(t, p, |_, _| rng.normal());
        let y = DMatrix::from_fn(t, m, |i, j| {
            let tau = points[j];
            (i as f64 * 0.2).sin() + tau * (1.0 + x.get((i, 0)).copied().unwrap_or(0.0)) + 0.1 * rng.normal()
        });
        FunctionalDataset::new(points, y, x).unwrap()
    }

    fn config(k: usize, n_iter: usize, burn_in: usize, thin: usize) -> McmcConfig {
        McmcConfig {
            k,
            n_iter,
            burn_in,
            thin,
            seed: 11,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn retained_count() {
        let data = toy(12, 10, 2, 1);
        let draws = run_gibbs(&config(2, 10, 5, 2), &data).unwrap();
        assert_eq!(draws.len(), 2);
        assert_eq!(config(2, 10, 5, 2).n_retained(), 2);
    }

    #[test]
    fn invalid_configs() {
        let data = toy(12, 10, 2, 1);
        assert!(run_gibbs(&config(0, 10, 5, 1), &data).is_err());
        assert!(run_gibbs(&config(2, 10, 10, 1), &data).is_err());
        assert!(run_gibbs(&config(2, 10, 5, 0), &data).is_err());
        assert!(run_gibbs(&config(13, 20, 5, 1), &data).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::DfosrHs, Variant::DfosrNig, Variant::FosrAr] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("lasso".parse::<Variant>().is_err());
    }

    #[test]
    fn loading_rescale_keeps_likelihood() {
        let data = toy(15, 12, 1, 2);
        let mut sampler = GibbsSampler::new(config(1, 10, 5, 1), &data).unwrap();
        for it in 0..3 {
            sampler.sweep(it).unwrap();
        }
        let before = sampler.state().residuals();
        let fit_before = &sampler.state().loadings.f * &sampler.state().beta;
        let norm = 1.7;
        let s = sampler.state_mut();
        s.loadings.psi.scale_mut(norm);
        s.loadings.f.scale_mut(norm);
        sampler.rescale_factor(0, 1.0 / norm);
        let fit_after = &sampler.state().loadings.f * &sampler.state().beta;
        assert!((fit_before - fit_after).amax() < 1e-10);
        assert!((before - sampler.state().residuals()).amax() < 1e-10);
    }

    #[test]
    fn canonical_loadings_select_coordinates() {
        let m = 6;
        let f = DMatrix::from_fn(m, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let loadings = LoadingSet {
            psi: f.clone(),
            f,
        };
        let y = DMatrix::from_fn(m, 3, |i, t| (i * 10 + t) as f64);
        let yt = project(&loadings, &y);
        for t in 0..3 {
            assert_eq!(yt[(0, t)], y[(0, t)]);
            assert_eq!(yt[(1, t)], y[(1, t)]);
        }
    }

    #[test]
    fn mu_conditional_flat_limit() {
        let centered = [0.3, 1.0, 2.0, -0.5, 0.7];
        let inv = [1.0; 5];
        let (prec, lin) = mu_conditional(&centered, &inv, 0.0, 1e12);
        let mean = (1.0 + 2.0 - 0.5 + 0.7) / 4.0;
        assert!((lin / prec - mean).abs() < 1e-12);
    }

    #[test]
    fn no_missing_cells_leave_data_unchanged() {
        let data = toy(10, 8, 1, 3);
        let mut sampler = GibbsSampler::new(config(2, 10, 5, 1), &data).unwrap();
        let before = sampler.state().y.clone();
        sampler.impute_missing().unwrap();
        assert_eq!(before, sampler.state().y);
    }

    #[test]
    fn imputation_with_negligible_noise_matches_fit() {
        let mut data = toy(10, 8, 1, 4);
        data.response[(3, 2)] = f64::NAN;
        data.response[(7, 5)] = f64::NAN;
        let mut sampler = GibbsSampler::new(config(2, 10, 5, 1), &data).unwrap();
        sampler.state_mut().obs = ObsVariance::Constant(1e-12);
        sampler.impute_missing().unwrap();
        let s = sampler.state();
        let fit = (&s.loadings.f * &s.beta).transpose();
        assert!((s.y[(3, 2)] - fit[(3, 2)]).abs() < 1e-5);
        assert!((s.y[(7, 5)] - fit[(7, 5)]).abs() < 1e-5);
    }

    #[test]
    fn reproducible_with_and_without_parallel_states() {
        let data = toy(20, 10, 2, 5);
        let a = run_gibbs(&config(3, 30, 10, 2), &data).unwrap();
        let b = run_gibbs(&config(3, 30, 10, 2), &data).unwrap();
        let serial = run_gibbs(
            &McmcConfig {
                parallel: false,
                ..config(3, 30, 10, 2)
            },
            &data,
        )
        .unwrap();
        for d in 0..a.len() {
            assert_eq!(a.beta[d], b.beta[d]);
            assert_eq!(a.f[d], serial.f[d]);
            assert_eq!(a.alpha[d], serial.alpha[d]);
        }
    }

    #[test]
    fn static_variant_keeps_coefficients_constant() {
        let data = toy(20, 10, 2, 6);
        let cfg = McmcConfig {
            variant: Variant::FosrAr,
            ..config(2, 20, 10, 1)
        };
        let draws = run_gibbs(&cfg, &data).unwrap();
        for a in &draws.alpha {
            for j in 0..2 {
                for k in 0..2 {
                    let lane = a.lane(j, k);
                    assert!(lane.iter().all(|v| (v - lane[0]).abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn surface_of_constant_loading() {
        let data = toy(5, 6, 1, 7);
        let mut draws = run_gibbs(&config(1, 4, 2, 1), &data).unwrap();
        let m = 6.0f64;
        draws.f[0] = DMatrix::from_element(6, 1, 1.0 / m.sqrt());
        draws.alpha[0] = Array3::filled(1, 1, 5, m.sqrt());
        let s = draws.surface(0, 0).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
        draws.alpha[0] = Array3::zeros(1, 1, 5);
        assert!(draws.surface(0, 0).unwrap().iter().all(|v| *v == 0.0));
        assert!(draws.surface(0, 1).is_err());
    }

    #[test]
    fn sign_alignment_removes_flips() {
        let data = toy(5, 6, 1, 8);
        let mut draws = run_gibbs(&config(1, 6, 2, 1), &data).unwrap();
        let base = draws.f[0].clone();
        for (d, f) in draws.f.iter_mut().enumerate() {
            *f = if d % 2 == 0 { base.clone() } else { -base.clone() };
        }
        for f in draws.aligned_loadings() {
            assert_eq!(f, base);
        }
    }
}
