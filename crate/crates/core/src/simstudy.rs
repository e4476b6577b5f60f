//! Synthetic designs with known truth, and the metrics used to compare
//! model variants on them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Array3, FunctionalDataset};
use crate::gibbs::{run_gibbs, McmcConfig, PosteriorDraws};
use crate::sampling::RandomStream;

/// Number of true factors.
pub const K_STAR: usize = 4;
/// Number of predictors, of which the first `N_ACTIVE` are relevant.
pub const N_PREDICTORS: usize = 15;
pub const N_ACTIVE: usize = 5;
pub const RSNR: f64 = 5.0;
pub const AR_COEF: f64 = 0.8;
pub const JUMP_PROB: f64 = 0.01;
/// Minimum number of draws for interval metrics.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least {MIN_DRAWS} draws, got {0}")]
    TooFewDraws(usize),
    #[error("invalid design: {0}")]
    Design(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignKind {
    /// Locally constant coefficient paths with rare jumps.
    Dynamic,
    /// Coefficients constant over time.
    Static,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Dynamic => "dynamic",
            DesignKind::Static => "static",
        })
    }
}

impl FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dynamic" => Ok(DesignKind::Dynamic),
            "static" => Ok(DesignKind::Static),
            other => Err(format!("unknown design kind '{other}'")),
        }
    }
}

/// Design size and kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub kind: DesignKind,
    pub t: usize,
    pub m: usize,
}

impl StudyDesign {
    pub fn small(kind: DesignKind) -> Self {
        Self { kind, t: 50, m: 20 }
    }

    pub fn large(kind: DesignKind) -> Self {
        Self { kind, t: 200, m: 100 }
    }
}

impl FromStr for StudyDesign {
    type Err = String;

    /// Accepts `dynamic-small`, `static-large`, and so on.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, size) = s
            .split_once('-')
            .ok_or_else(|| format!("design '{s}' should look like dynamic-small"))?;
        let kind: DesignKind = kind.parse()?;
        match size {
            "small" => Ok(Self::small(kind)),
            "large" => Ok(Self::large(kind)),
            other => Err(format!("unknown design size '{other}'")),
        }
    }
}

/// A simulated dataset together with every true parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimTruth {
    pub kind: DesignKind,
    pub points: Vec<f64>,
    /// `M × K*`.
    pub f_star: DMatrix<f64>,
    /// `p × K* × T`.
    pub alpha_star: Array3,
    pub mu_star: DVector<f64>,
    /// `K* × T`.
    pub gamma_star: DMatrix<f64>,
    /// `K* × T`.
    pub beta_star: DMatrix<f64>,
    pub sigma_star: f64,
    /// `T × p`.
    pub x: DMatrix<f64>,
    /// Noiseless and observed curves, `T × M`.
    pub y_star: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl SimTruth {
    pub fn n_times(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }

    pub fn dataset(&self) -> FunctionalDataset {
        FunctionalDataset::new(self.points.clone(), self.y.clone(), self.x.clone())
            .expect("simulated data are well formed")
    }

    /// True surface `Σ_k f*_k(τ_m) α*_{j,k,t}`, `T × M`.
    pub fn surface(&self, j: usize) -> DMatrix<f64> {
        let [_, k, t] = self.alpha_star.dims();
        let a = DMatrix::from_fn(k, t, |kk, tt| self.alpha_star[(j, kk, tt)]);
        (&self.f_star * a).transpose()
    }

    /// Order-sensitive hash of the observed data, for checking that paired
    /// methods see the same replicate.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.y.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Orthonormal columns of degrees `0, 2, 3, …, k` on `m` equally spaced
/// points of `[0, 1]` (the linear direction is orthogonalized out but not
/// returned). The first column is the constant `1/√m`.
pub fn orthonormal_polynomials(m: usize, k: usize) -> DMatrix<f64> {
    let tau: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let degree = k.max(1);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(degree + 1);
    for d in 0..=degree {
        let mut v = DVector::from_iterator(m, tau.iter().map(|x| (2.0 * x - 1.0).powi(d as i32)));
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let n = v.norm();
        basis.push(v / n);
    }
    let mut out = DMatrix::zeros(m, k);
    out.set_column(0, &basis[0]);
    for col in 1..k {
        out.set_column(col, &basis[col + 1]);
    }
    out
}

fn truncated_poisson(rng: &mut RandomStream, lo: usize, hi: usize) -> usize {
    loop {
        // Knuth's product method; the mean is 1
        let limit = (-1.0f64).exp();
        let mut n = 0;
        let mut prod = rng.uniform();
        while prod > limit {
            n += 1;
            prod *= rng.uniform();
        }
        if (lo..=hi).contains(&n) {
            return n;
        }
    }
}

fn choose_without_replacement(rng: &mut RandomStream, n: usize, count: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + (rng.uniform() * (n - i) as f64) as usize;
        pool.swap(i, j.min(n - 1));
    }
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Simulate one replicate of the design.
pub fn simulate_design(kind: DesignKind, t: usize, m: usize, seed: u64) -> Result<SimTruth, SimError> {
    if t < 2 || m < 8 {
        return Err(SimError::Design(format!("need T >= 2 and M >= 8, got T = {t}, M = {m}")));
    }
    let mut rng = RandomStream::new(seed);
    let points: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let f_star = orthonormal_polynomials(m, K_STAR);

    let mut alpha = Array3::zeros(N_PREDICTORS, K_STAR, t);
    for j in 0..N_ACTIVE {
        let count = truncated_poisson(&mut rng, 1, K_STAR);
        for k in choose_without_replacement(&mut rng, K_STAR, count) {
            let sd = 1.0 / (k + 1) as f64;
            let lane = alpha.lane_mut(j, k);
            match kind {
                DesignKind::Static => {
                    let a = sd * rng.normal();
                    lane.iter_mut().for_each(|v| *v = a);
                }
                DesignKind::Dynamic => {
                    let mut level = sd * rng.normal();
                    for v in lane.iter_mut() {
                        let z = sd * rng.normal();
                        if rng.uniform() < JUMP_PROB {
                            level += z;
                        }
                        *v = level;
                    }
                }
            }
        }
    }

    let x = DMatrix::from_fn(t, N_PREDICTORS, |_, _| rng.normal());
    let mu_star = DVector::from_fn(K_STAR, |k, _| 1.0 / (k + 1) as f64);
    let mut gamma = DMatrix::zeros(K_STAR, t);
    for k in 0..K_STAR {
        let sd = 1.0 / (k + 1) as f64;
        let innov_sd = sd * (1.0 - AR_COEF * AR_COEF).sqrt();
        let mut prev = sd * rng.normal();
        for tt in 0..t {
            prev = AR_COEF * prev + innov_sd * rng.normal();
            gamma[(k, tt)] = prev;
        }
    }
    let beta = DMatrix::from_fn(K_STAR, t, |k, tt| {
        let reg: f64 = (0..N_PREDICTORS).map(|j| x[(tt, j)] * alpha[(j, k, tt)]).sum();
        mu_star[k] + reg + gamma[(k, tt)]
    });
    let y_star = (&f_star * &beta).transpose();
    let sigma_star = sample_sd(&y_star) / RSNR;
    let y = DMatrix::from_fn(t, m, |i, j| y_star[(i, j)] + sigma_star * rng.normal());
    Ok(SimTruth {
        kind,
        points,
        f_star,
        alpha_star: alpha,
        mu_star,
        gamma_star: gamma,
        beta_star: beta,
        sigma_star,
        x,
        y_star,
        y,
    })
}

/// Standard deviation of all entries with the `n − 1` denominator.
pub fn sample_sd(y: &DMatrix<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.mean();
    (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Root mean squared error of per-predictor surface estimates (`T × M`
/// each) against the true surfaces.
pub fn rmse(estimates: &[DMatrix<f64>], truth: &SimTruth) -> Result<f64, SimError> {
    let truths: Vec<DMatrix<f64>> = (0..truth.n_predictors()).map(|j| truth.surface(j)).collect();
    rmse_surfaces(estimates, &truths)
}

/// [`rmse`] against explicit true surfaces.
pub fn rmse_surfaces(estimates: &[DMatrix<f64>], truths: &[DMatrix<f64>]) -> Result<f64, SimError> {
    if estimates.len() != truths.len() {
        return Err(SimError::Dimension(format!(
            "{} estimated surfaces for {} predictors",
            estimates.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, t) in estimates.iter().zip(truths) {
        if e.shape() != t.shape() {
            return Err(SimError::Dimension(format!("surface {:?} vs truth {:?}", e.shape(), t.shape())));
        }
        sum += (e - t).norm_squared();
        count += e.len();
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summed widths and covered count of the central 90% intervals, per cell,
/// for draws of one surface. Returns `(sum of widths, covered cells, cells)`.
pub fn interval_totals(draws: &[DMatrix<f64>], truth: &DMatrix<f64>) -> Result<(f64, usize, usize), SimError> {
    if draws.len() < MIN_DRAWS {
        return Err(SimError::TooFewDraws(draws.len()));
    }
    if draws.iter().any(|d| d.shape() != truth.shape()) {
        return Err(SimError::Dimension("draw and truth shapes differ".into()));
    }
    let mut buf = vec![0.0; draws.len()];
    let mut width = 0.0;
    let mut covered = 0;
    for (cell, &target) in truth.iter().enumerate() {
        for (b, d) in buf.iter_mut().zip(draws) {
            *b = d.as_slice()[cell];
        }
        buf.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&buf, 0.05);
        let hi = quantile_sorted(&buf, 0.95);
        width += hi - lo;
        if lo <= target && target <= hi {
            covered += 1;
        }
    }
    Ok((width, covered, truth.len()))
}

/// Mean credible interval width and empirical coverage of the 90% intervals
/// for all regression surfaces.
pub fn mciw_and_coverage(draws: &PosteriorDraws, truth: &SimTruth) -> Result<(f64, f64), SimError> {
    if draws.len() < MIN_DRAWS {
        return Err(SimError::TooFewDraws(draws.len()));
    }
    if draws.n_predictors() != truth.n_predictors() {
        return Err(SimError::Dimension("predictor counts differ".into()));
    }
    let (mut width, mut covered, mut cells) = (0.0, 0, 0);
    for j in 0..truth.n_predictors() {
        let surfaces = draws
            .regression_surface(j)
            .map_err(|e| SimError::Dimension(e.to_string()))?;
        let (w, c, n) = interval_totals(&surfaces, &truth.surface(j))?;
        width += w;
        covered += c;
        cells += n;
    }
    Ok((width / cells as f64, covered as f64 / cells as f64))
}

/// One (replicate, method) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replicate: usize,
    pub method: String,
    pub seed: u64,
    pub data_checksum: u64,
    pub rmse: Option<f64>,
    pub mciw: Option<f64>,
    pub coverage: Option<f64>,
    pub error: Option<String>,
}

/// Rows ordered by replicate, then method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<StudyRow>,
}

impl MetricReport {
    /// Values of one metric for one method, in replicate order, skipping failures.
    pub fn metric(&self, method: &str, pick: impl Fn(&StudyRow) -> Option<f64>) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).filter_map(pick).collect()
    }
}

/// Label of a method in study output.
pub fn method_label(config: &McmcConfig) -> String {
    if config.sv {
        format!("{}+sv", config.variant)
    } else {
        config.variant.to_string()
    }
}

/// Seed of replicate `rep`; shared by the design and every method.
pub fn replicate_seed(base_seed: u64, rep: usize) -> u64 {
    RandomStream::new(base_seed).derive(rep as u64).next_u64()
}

fn evaluate(config: &McmcConfig, truth: &SimTruth) -> Result<(f64, f64, f64), String> {
    let draws = run_gibbs(config, &truth.dataset()).map_err(|e| e.to_string())?;
    let means = (0..truth.n_predictors())
        .map(|j| draws.mean_surface(j))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let err = rmse(&means, truth).map_err(|e| e.to_string())?;
    let (mciw, cov) = mciw_and_coverage(&draws, truth).map_err(|e| e.to_string())?;
    Ok((err, mciw, cov))
}

/// Fit every method on `n_reps` paired replicates. Replicates and methods
/// run in parallel; failures are recorded in the row and do not stop the study.
pub fn run_study(design: &StudyDesign, methods: &[McmcConfig], n_reps: usize, base_seed: u64) -> MetricReport {
    let jobs: Vec<(usize, usize)> = (0..n_reps).flat_map(|r| (0..methods.len()).map(move |m| (r, m))).collect();
    let truths: Vec<Result<SimTruth, SimError>> = (0..n_reps)
        .into_par_iter()
        .map(|r| simulate_design(design.kind, design.t, design.m, replicate_seed(base_seed, r)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(r, mi)| {
            let seed = replicate_seed(base_seed, r);
            let method = method_label(&methods[mi]);
            let mut row = StudyRow {
                replicate: r,
                method,
                seed,
                data_checksum: 0,
                rmse: None,
                mciw: None,
                coverage: None,
                error: None,
            };
            match &truths[r] {
                Err(e) => row.error = Some(e.to_string()),
                Ok(truth) => {
                    row.data_checksum = truth.checksum();
                    let config = McmcConfig {
                        seed,
                        ..methods[mi].clone()
                    };
                    match evaluate(&config, truth) {
                        Ok((e, w, c)) => {
                            row.rmse = Some(e);
                            row.mciw = Some(w);
                            row.coverage = Some(c);
                        }
                        Err(msg) => {
                            log::warn!("replicate {r}, method {}: {msg}", row.method);
                            row.error = Some(msg);
                        }
                    }
                }
            }
            row
        })
        .collect();
    MetricReport { rows }
}
