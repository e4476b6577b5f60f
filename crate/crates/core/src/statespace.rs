//! Joint draws of the dynamic states of one factor.
//!
//! For factor `k` the projected series obeys the dynamic linear model
//!
//! ```text
//! y_t   = (x_t', 1) s_t + ε_t,            ε_t ~ N(0, σ²_{ε,t})
//! s_t   = diag(1, …, 1, φ) s_{t-1} + w_t,  w_t ~ N(0, diag(σ²_{ω,·,t}, σ²_{η,t}))
//! s_1   ~ N(0, diag(init_var))
//! ```
//!
//! with state `s_t = (α_{1,t}, …, α_{p,t}, γ_t)`. The whole path is drawn with
//! the mean-correction simulation smoother: simulate an unconditional path and
//! pseudo-observations, then add the smoothed state mean computed from the
//! observation residual. Filtering uses the covariance form with a scalar
//! observation, so each step costs `O((p+1)²)`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::gibbs::{CoefficientPrior, ModelState};
use crate::sampling::RandomStream;

#[derive(Debug, Error)]
pub enum StateSpaceError {
    #[error("invalid state-space specification: {0}")]
    InvalidSpec(String),
    #[error("observation {0} is not finite")]
    NonFiniteObservation(usize),
    #[error("prediction variance lost positivity at t = {t} (F = {value:e})")]
    Degenerate { t: usize, value: f64 },
}

/// Dynamic linear model for a single factor.
#[derive(Clone, Debug)]
pub struct DlmSpec {
    /// `T × (p+1)` observation rows `(x_t', 1)`.
    pub design: DMatrix<f64>,
    /// AR coefficient of the `γ` state.
    pub phi: f64,
    /// Observation variances, length `T`.
    pub obs_var: Vec<f64>,
    /// `T × p` innovation variances of `α`; row 0 is not used because the
    /// first state is drawn from `init_var`.
    pub alpha_innov_var: DMatrix<f64>,
    /// Innovation variances of `γ`, length `T`; entry 0 is not used.
    pub gamma_innov_var: Vec<f64>,
    /// Variances of the first state `(α_{·,1}, γ_1)`, length `p+1`.
    pub init_var: Vec<f64>,
}

impl DlmSpec {
    pub fn n_times(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.design.ncols().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), StateSpaceError> {
        let t = self.n_times();
        let p = self.n_predictors();
        let bad = |msg: String| Err(StateSpaceError::InvalidSpec(msg));
        if self.design.ncols() == 0 || t == 0 {
            return bad("empty design".into());
        }
        if self.obs_var.len() != t || self.gamma_innov_var.len() != t {
            return bad(format!("variance vectors must have length T = {t}"));
        }
        if self.alpha_innov_var.shape() != (t, p) {
            return bad(format!(
                "alpha innovation variances are {:?}, expected ({t}, {p})",
                self.alpha_innov_var.shape()
            ));
        }
        if self.init_var.len() != p + 1 {
            return bad(format!("init_var must have length p + 1 = {}", p + 1));
        }
        if !self.phi.is_finite() {
            return bad("phi is not finite".into());
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            return bad("design contains non-finite values".into());
        }
        if self.obs_var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("observation variances must be positive and finite".into());
        }
        let state_vars = self
            .alpha_innov_var
            .iter()
            .chain(&self.gamma_innov_var)
            .chain(&self.init_var);
        for &v in state_vars {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("state variance {v} must be non-negative and finite"));
            }
        }
        Ok(())
    }

    fn transition(&self) -> Vec<f64> {
        let mut d = vec![1.0; self.n_predictors() + 1];
        d[self.n_predictors()] = self.phi;
        d
    }

    /// State innovation variances entering at (0-based) time `t ≥ 1`.
    fn innovation_var(&self, t: usize, out: &mut [f64]) {
        let p = self.n_predictors();
        for j in 0..p {
            out[j] = self.alpha_innov_var[(t, j)];
        }
        out[p] = self.gamma_innov_var[t];
    }
}

/// One draw of the full state path.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePath {
    /// `T × p` dynamic coefficients.
    pub alpha: DMatrix<f64>,
    /// AR error path, length `T`.
    pub gamma: Vec<f64>,
}

struct FilterOutput {
    innovations: Vec<f64>,
    pred_var: Vec<f64>,
    gains: Vec<f64>,
    m: usize,
}

fn kalman_filter(spec: &DlmSpec, y: &[f64]) -> Result<FilterOutput, StateSpaceError> {
    let n = spec.n_times();
    let m = spec.design.ncols();
    let d = spec.transition();
    let mut a = vec![0.0; m];
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        p[i * m + i] = spec.init_var[i];
    }
    let mut q = vec![0.0; m];
    let mut pz = vec![0.0; m];
    let mut innovations = vec![0.0; n];
    let mut pred_var = vec![0.0; n];
    let mut gains = vec![0.0; n * m];

    for t in 0..n {
        let z = spec.design.row(t);
        let mut f = prediction_variance(&p, &z, m, spec.obs_var[t], &mut pz);
        if !(f > 0.0 && f.is_finite()) {
            symmetrize(&mut p, m);
            f = prediction_variance(&p, &z, m, spec.obs_var[t], &mut pz);
            if !(f > 0.0 && f.is_finite()) {
                return Err(StateSpaceError::Degenerate { t, value: f });
            }
        }
        let v = y[t] - (0..m).map(|i| z[i] * a[i]).sum::<f64>();
        innovations[t] = v;
        pred_var[t] = f;
        for i in 0..m {
            gains[t * m + i] = d[i] * pz[i] / f;
        }
        if t + 1 == n {
            break;
        }
        for i in 0..m {
            a[i] = d[i] * a[i] + gains[t * m + i] * v;
        }
        spec.innovation_var(t + 1, &mut q);
        for i in 0..m {
            for j in 0..m {
                let filtered = p[i * m + j] - pz[i] * pz[j] / f;
                p[i * m + j] = d[i] * d[j] * filtered;
            }
            p[i * m + i] += q[i];
        }
        symmetrize(&mut p, m);
    }
    Ok(FilterOutput {
        innovations,
        pred_var,
        gains,
        m,
    })
}

fn prediction_variance(
    p: &[f64],
    z: &nalgebra::MatrixView1xX<'_, f64, nalgebra::Const<1>, nalgebra::Dyn>,
    m: usize,
    h: f64,
    pz: &mut [f64],
) -> f64 {
    for i in 0..m {
        pz[i] = (0..m).map(|j| p[i * m + j] * z[j]).sum();
    }
    (0..m).map(|i| z[i] * pz[i]).sum::<f64>() + h
}

fn symmetrize(p: &mut [f64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (p[i * m + j] + p[j * m + i]);
            p[i * m + j] = s;
            p[j * m + i] = s;
        }
    }
}

/// Smoothed state mean `E[s_t | y]` for every `t`, as a `T × (p+1)` matrix.
pub fn smoothed_mean(spec: &DlmSpec, y: &[f64]) -> Result<DMatrix<f64>, StateSpaceError> {
    spec.validate()?;
    if y.len() != spec.n_times() {
        return Err(StateSpaceError::InvalidSpec(format!(
            "{} observations for T = {}",
            y.len(),
            spec.n_times()
        )));
    }
    if let Some(t) = y.iter().position(|v| !v.is_finite()) {
        return Err(StateSpaceError::NonFiniteObservation(t));
    }
    state_smoother(spec, y)
}

fn state_smoother(spec: &DlmSpec, y: &[f64]) -> Result<DMatrix<f64>, StateSpaceError> {
    let n = spec.n_times();
    let filt = kalman_filter(spec, y)?;
    let m = filt.m;
    let d = spec.transition();

    // backward pass: r[t] holds r_{t} with r[n] = 0
    let mut r = vec![0.0; (n + 1) * m];
    for t in (0..n).rev() {
        let z = spec.design.row(t);
        let k = &filt.gains[t * m..(t + 1) * m];
        let (head, tail) = r.split_at_mut((t + 1) * m);
        let next = &tail[..m];
        let kr: f64 = (0..m).map(|i| k[i] * next[i]).sum();
        let scale = filt.innovations[t] / filt.pred_var[t];
        let cur = &mut head[t * m..(t + 1) * m];
        for i in 0..m {
            cur[i] = z[i] * scale + d[i] * next[i] - z[i] * kr;
        }
    }

    // forward pass
    let mut out = DMatrix::zeros(n, m);
    let mut q = vec![0.0; m];
    for i in 0..m {
        out[(0, i)] = spec.init_var[i] * r[i];
    }
    for t in 1..n {
        spec.innovation_var(t, &mut q);
        for i in 0..m {
            out[(t, i)] = d[i] * out[(t - 1, i)] + q[i] * r[t * m + i];
        }
    }
    Ok(out)
}

/// One draw from the joint conditional distribution of all states given `y`.
pub fn simulation_smoother(
    spec: &DlmSpec,
    y: &[f64],
    rng: &mut RandomStream,
) -> Result<StatePath, StateSpaceError> {
    spec.validate()?;
    let n = spec.n_times();
    if y.len() != n {
        return Err(StateSpaceError::InvalidSpec(format!(
            "{} observations for T = {n}",
            y.len()
        )));
    }
    if let Some(t) = y.iter().position(|v| !v.is_finite()) {
        return Err(StateSpaceError::NonFiniteObservation(t));
    }
    let m = spec.design.ncols();
    let p = m - 1;
    let d = spec.transition();

    // unconditional pseudo path and pseudo data
    let mut sim = DMatrix::zeros(n, m);
    let mut resid = vec![0.0; n];
    let mut q = vec![0.0; m];
    for t in 0..n {
        if t == 0 {
            for i in 0..m {
                sim[(0, i)] = spec.init_var[i].sqrt() * rng.normal();
            }
        } else {
            spec.innovation_var(t, &mut q);
            for i in 0..m {
                sim[(t, i)] = d[i] * sim[(t - 1, i)] + q[i].sqrt() * rng.normal();
            }
        }
        let z = spec.design.row(t);
        let y_plus = (0..m).map(|i| z[i] * sim[(t, i)]).sum::<f64>()
            + spec.obs_var[t].sqrt() * rng.normal();
        resid[t] = y[t] - y_plus;
    }

    let correction = state_smoother(spec, &resid)?;
    let draw = sim + correction;
    Ok(StatePath {
        alpha: draw.columns(0, p).into_owned(),
        gamma: draw.column(p).iter().copied().collect(),
    })
}

/// Dynamic linear model of factor `k` given the rest of the chain state.
///
/// `predictors` is `T × p`. Static coefficients enter as initial states with
/// variance `λ²_{j,k}` and no innovations.
pub fn build_dlm_spec(
    k: usize,
    state: &ModelState,
    predictors: &DMatrix<f64>,
) -> Result<DlmSpec, StateSpaceError> {
    let [p, k_total, t] = state.alpha.dims();
    if k >= k_total {
        return Err(StateSpaceError::InvalidSpec(format!("factor {k} of {k_total}")));
    }
    if predictors.shape() != (t, p) {
        return Err(StateSpaceError::InvalidSpec(format!(
            "predictors are {:?}, expected ({t}, {p})",
            predictors.shape()
        )));
    }
    let mut design = DMatrix::from_element(t, p + 1, 1.0);
    design.columns_mut(0, p).copy_from(predictors);

    let mut init_var = Vec::with_capacity(p + 1);
    let alpha_innov_var = match &state.coefficients {
        CoefficientPrior::Horseshoe(hs) => {
            init_var.extend((0..p).map(|j| 1.0 / state.init.xi_omega[(j, k)]));
            DMatrix::from_fn(t, p, |tt, j| if tt == 0 { 0.0 } else { 1.0 / hs.sigma_prec[(j, k, tt)] })
        }
        CoefficientPrior::Nig(nig) => {
            init_var.extend((0..p).map(|j| 1.0 / state.init.xi_omega[(j, k)]));
            DMatrix::from_fn(t, p, |tt, j| if tt == 0 { 0.0 } else { 1.0 / nig.prec[(j, k)] })
        }
        CoefficientPrior::Static(hs) => {
            init_var.extend((0..p).map(|j| 1.0 / hs.lambda_jk_prec[(j, k)]));
            DMatrix::zeros(t, p)
        }
    };
    init_var.push(1.0 / state.init.xi_eta[k]);
    let gamma_innov_var = (0..t)
        .map(|tt| if tt == 0 { 0.0 } else { state.mgp.eta_sd(k, tt).powi(2) })
        .collect();
    Ok(DlmSpec {
        design,
        phi: state.phi[k],
        obs_var: state.obs_variances(),
        alpha_innov_var,
        gamma_innov_var,
        init_var,
    })
}
