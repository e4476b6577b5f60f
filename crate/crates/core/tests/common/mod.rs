//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dfosr::sampling::RandomStream;
use dfosr::statespace::DlmSpec;
use nalgebra::{DMatrix, DVector};

/// Exact posterior of the stacked state vector `(s_1, …, s_T)` of a DLM,
/// built from the explicit joint covariance and Gaussian conditioning.
pub fn dense_dlm_posterior(spec: &DlmSpec, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let t_len = spec.design.nrows();
    let m = spec.design.ncols();
    let p = m - 1;
    let n = t_len * m;
    let d = DMatrix::from_fn(m, m, |i, j| {
        if i != j {
            0.0
        } else if i == p {
            spec.phi
        } else {
            1.0
        }
    });
    // s_t = Σ_{u≤t} D^{t−u} w_u with independent w_u
    let mut a = DMatrix::zeros(n, n);
    let mut w_var = DVector::zeros(n);
    for u in 0..t_len {
        for i in 0..m {
            w_var[u * m + i] = if u == 0 {
                spec.init_var[i]
            } else if i < p {
                spec.alpha_innov_var[(u, i)]
            } else {
                spec.gamma_innov_var[u]
            };
        }
        let mut power = DMatrix::identity(m, m);
        for t in u..t_len {
            a.view_mut((t * m, u * m), (m, m)).copy_from(&power);
            power = &d * power;
        }
    }
    let sigma = &a * DMatrix::from_diagonal(&w_var) * a.transpose();
    let mut h = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        for i in 0..m {
            h[(t, t * m + i)] = spec.design[(t, i)];
        }
    }
    let s_yy = &h * &sigma * h.transpose() + DMatrix::from_diagonal(&DVector::from_vec(spec.obs_var.clone()));
    let s_xy = &sigma * h.transpose();
    let inv = s_yy.try_inverse().expect("observation covariance is invertible");
    let gain = &s_xy * inv;
    let mean = &gain * DVector::from_column_slice(y);
    let cov = &sigma - &gain * s_xy.transpose();
    (mean, cov)
}

/// A random DLM with `T` times and `p` predictors.
pub fn random_spec(t: usize, p: usize, rng: &mut RandomStream) -> DlmSpec {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    let design = DMatrix::from_fn(t, p + 1, |_, j| if j == p { 1.0 } else { 0.0 });
    let mut spec = DlmSpec {
        design,
        phi: u(-0.9, 0.9),
        obs_var: (0..t).map(|_| u(0.3, 2.0)).collect(),
        alpha_innov_var: DMatrix::from_fn(t, p, |_, _| 0.0),
        gamma_innov_var: (0..t).map(|_| u(0.2, 1.5)).collect(),
        init_var: (0..=p).map(|_| u(0.5, 2.0)).collect(),
    };
    for i in 0..t {
        for j in 0..p {
            spec.design[(i, j)] = rng.normal();
            spec.alpha_innov_var[(i, j)] = 0.2 + 1.3 * rng.uniform();
        }
    }
    spec
}

/// Empirical mean and covariance of row vectors, with Monte Carlo standard
/// errors of every entry.
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub se_mean: DVector<f64>,
    pub se_cov: DMatrix<f64>,
}

pub fn moments(draws: &[DVector<f64>]) -> Moments {
    let n = draws.len() as f64;
    let dim = draws[0].len();
    let mut mean = DVector::zeros(dim);
    for d in draws {
        mean += d;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut sq = DMatrix::zeros(dim, dim);
    for d in draws {
        let c = d - &mean;
        let outer = &c * c.transpose();
        sq += outer.component_mul(&outer);
        cov += outer;
    }
    cov /= n;
    let var_prod = sq / n - cov.component_mul(&cov);
    let se_cov = var_prod.map(|v| (v.max(0.0) / n).sqrt());
    let se_mean = DVector::from_fn(dim, |i, _| (cov[(i, i)] / n).sqrt());
    Moments {
        mean,
        cov,
        se_mean,
        se_cov,
    }
}

/// Largest deviation, in standard errors, of the empirical moments from the
/// reference mean and covariance.
pub fn max_standardized_error(m: &Moments, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..mean.len() {
        if m.se_mean[i] > 0.0 {
            worst = worst.max((m.mean[i] - mean[i]).abs() / m.se_mean[i]);
        }
        for j in 0..mean.len() {
            if m.se_cov[(i, j)] > 0.0 {
                worst = worst.max((m.cov[(i, j)] - cov[(i, j)]).abs() / m.se_cov[(i, j)]);
            }
        }
    }
    worst
}

/// One-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Ratios `σ_ω/λ_{j,k}` from a prior-only horseshoe chain; `C⁺(0, 1)` in law.
pub fn horseshoe_prior_ratios(n: usize, seed: u64) -> Vec<f64> {
    use dfosr::shrinkage::HorseshoeState;
    let (p, k, t) = (2, 2, 26);
    let mut hs = HorseshoeState::new(p, k, t);
    let mut rng = RandomStream::new(seed);
    for _ in 0..200 {
        hs.update_prior_only(&mut rng).unwrap();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        hs.update_prior_only(&mut rng).unwrap();
        for j in 0..p {
            for kk in 0..k {
                let lambda = hs.lambda_jk(j, kk);
                for tt in 1..t {
                    out.push(hs.sigma_omega(j, kk, tt) / lambda);
                }
            }
        }
    }
    out.truncate(n);
    out
}

pub fn half_cauchy_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        2.0 / std::f64::consts::PI * x.atan()
    }
}

/// Initial states from independent prior-only chains on the expansion
/// scales; `t₃` in law.
pub fn initial_state_prior_draws(n: usize, seed: u64) -> Vec<f64> {
    use dfosr::shrinkage::InitScales;
    let chains = 100;
    let mut scales = InitScales::new(0, chains);
    let mut rng = RandomStream::new(seed);
    let mut out = Vec::with_capacity(n);
    let mut it = 0;
    while out.len() < n {
        let g = DVector::from_fn(chains, |k, _| rng.normal() / scales.xi_eta[k].sqrt());
        if it >= 100 {
            out.extend(g.iter().copied());
        }
        scales.update(&g, None, &mut rng).unwrap();
        it += 1;
    }
    out.truncate(n);
    out
}

/// Monte Carlo means of `σ²_{μ_k}` from a prior-only chain with `K = 6`.
pub fn mgp_prior_variance_means(n: usize, seed: u64) -> Vec<f64> {
    use dfosr::shrinkage::MgpState;
    let k = 6;
    let mut mgp = MgpState::new(k, 2);
    let mut rng = RandomStream::new(seed);
    let mut sums = vec![0.0; k];
    for it in 0..n + 1000 {
        let mu = DVector::from_fn(k, |kk, _| mgp.sigma_mu[kk] * rng.normal());
        mgp.update_mu(&mu, &mut rng).unwrap();
        if it >= 1000 {
            for (s, sd) in sums.iter_mut().zip(mgp.sigma_mu.iter()) {
                *s += sd * sd;
            }
        }
    }
    sums.iter().map(|s| s / n as f64).collect()
}

/// Largest discrepancy between the `β_t` full conditional computed from the
/// projected data and the one computed from the full `M`-dimensional
/// likelihood, on `T = 4`, `M = 5`, `K = 2`.
pub fn working_likelihood_error(seed: u64) -> f64 {
    use dfosr::basis::{BasisSystem, ObservationGrid};
    use dfosr::gibbs::{project, working_conditional, LoadingSet};
    use dfosr::sampling::GaussianSystem;
    let (t, m, k) = (4, 5, 2);
    let mut rng = RandomStream::new(seed);
    let grid = ObservationGrid::new(&[0.0, 0.2, 0.45, 0.7, 1.0]).unwrap();
    let basis = BasisSystem::new(&grid).unwrap();
    let l = basis.n_basis();
    let psi = DMatrix::from_fn(l, k, |_, _| rng.normal()).qr().q();
    let loadings = LoadingSet::from_psi(&basis, psi);
    let y = DMatrix::from_fn(t, m, |_, _| rng.normal());
    let ytilde = project(&loadings, &basis.matrix().tr_mul(&y.transpose()));
    let f = &loadings.f;
    let mut worst: f64 = 0.0;
    for tt in 0..t {
        let var = 0.3 + rng.uniform();
        let a = DMatrix::from_fn(k, k, |_, _| rng.normal());
        let prior = GaussianSystem::new(&a * a.transpose() + DMatrix::identity(k, k), rng.normal_vector(k)).unwrap();
        let working = working_conditional(&ytilde.column(tt).into_owned(), var, &prior);
        let full_prec = &prior.precision + f.tr_mul(f) / var;
        let full_lin = &prior.linear + f.tr_mul(&y.row(tt).transpose()) / var;
        let full_mean = full_prec.clone().try_inverse().unwrap() * &full_lin;
        let work_mean = working.precision.clone().try_inverse().unwrap() * &working.linear;
        worst = worst
            .max((working.precision - full_prec).amax())
            .max((working.linear - full_lin).amax())
            .max((work_mean - full_mean).amax());
    }
    worst
}

/// Posterior summaries of a fit to a simulated dynamic design.
pub struct RecoveryFit {
    pub phi_mean: Vec<f64>,
    pub sigma_mean: f64,
    pub sigma_true: f64,
}

pub fn recovery_fit(t: usize, m: usize, k: usize, n_iter: usize, burn_in: usize, seed: u64) -> RecoveryFit {
    use dfosr::gibbs::{run_gibbs, McmcConfig};
    use dfosr::simstudy::{simulate_design, DesignKind};
    let truth = simulate_design(DesignKind::Dynamic, t, m, seed).unwrap();
    let config = McmcConfig {
        k,
        n_iter,
        burn_in,
        thin: 1,
        seed,
        ..McmcConfig::default()
    };
    let draws = run_gibbs(&config, &truth.dataset()).unwrap();
    let n = draws.len() as f64;
    let phi_mean = (0..k).map(|kk| draws.phi.iter().map(|p| p[kk]).sum::<f64>() / n).collect();
    let sigma_mean = draws.obs_var.iter().map(|v| v[0].sqrt()).sum::<f64>() / n;
    RecoveryFit {
        phi_mean,
        sigma_mean,
        sigma_true: truth.sigma_star,
    }
}

/// Stochastic-volatility fit to residuals with sd 0.1 over the first half of
/// `T = 300` times and 1.0 over the second (`M = 50`). Returns the
/// regime-averaged posterior mean of `exp(h_t/2)` with the true value.
pub fn two_regime_volatility(seed: u64) -> [(f64, f64); 2] {
    use dfosr::shrinkage::VolatilityState;
    let (t, m) = (300, 50);
    let truth: Vec<f64> = (0..t).map(|i| if i < t / 2 { 0.1 } else { 1.0 }).collect();
    let mut rng = RandomStream::new(seed);
    let resid = DMatrix::from_fn(t, m, |i, _| truth[i] * rng.normal());
    let mut sv = VolatilityState::constant(t, 0.3);
    let mut sums = vec![0.0; t];
    let (burn, keep) = (500, 1500);
    for it in 0..burn + keep {
        sv.update(&resid, &mut rng).unwrap();
        if it >= burn {
            for (s, h) in sums.iter_mut().zip(&sv.h) {
                *s += (h / 2.0).exp();
            }
        }
    }
    let regime = |lo: usize, hi: usize| sums[lo..hi].iter().map(|s| s / keep as f64).sum::<f64>() / (hi - lo) as f64;
    [(regime(0, t / 2), 0.1), (regime(t / 2, t), 1.0)]
}
