//! Random-variate primitives shared by every sampler in the crate.
//!
//! All Gaussian draws are made in precision form through a Cholesky factor;
//! no explicit inverse is ever formed. Linear equality constraints are handled
//! by conditioning an unconstrained draw (the "conditioning by kriging" move),
//! reusing the same triangular factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("constraint system is singular (redundant constraints)")]
    RedundantConstraints,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("log density returned NaN at x = {x} ({context})")]
    NanDensity { x: f64, context: String },
    #[error("log density is not finite at the initial point x0 = {0}")]
    InvalidStart(f64),
    #[error("truncated gamma: mass above {lower} is {mass:e}, below representable range")]
    TruncationUnderflow { lower: f64, mass: f64 },
    #[error("invalid gamma parameters shape = {shape}, rate = {rate}")]
    InvalidGamma { shape: f64, rate: f64 },
}

/// Seedable random stream.
///
/// Identical seed and identical call sequence give bit-identical output.
/// Streams for parallel workers come from [`RandomStream::derive`], which
/// selects an independent ChaCha stream for the same key.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for worker `index`, determined only by the master
    /// seed and the index.
    pub fn derive(&self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        Self {
            seed: self.seed,
            rng,
        }
    }

    /// Child stream seeded from the next output of this stream.
    pub fn fork(&mut self) -> Self {
        Self::new(self.rng.next_u64())
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            // 53 random mantissa bits
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Gamma draw with the shape/rate parameterization used throughout.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> Result<f64, SamplingError> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(SamplingError::InvalidGamma { shape, rate });
        }
        let dist = Gamma::new(shape, 1.0 / rate)
            .map_err(|_| SamplingError::InvalidGamma { shape, rate })?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Gaussian full conditional in canonical form: mean `Q⁻¹ℓ`, covariance `Q⁻¹`.
#[derive(Clone, Debug)]
pub struct GaussianSystem {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl GaussianSystem {
    pub fn new(precision: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, SamplingError> {
        let n = precision.nrows();
        if precision.ncols() != n || linear.len() != n {
            return Err(SamplingError::Dimension(format!(
                "precision {}x{}, linear term {}",
                n,
                precision.ncols(),
                linear.len()
            )));
        }
        Ok(Self { precision, linear })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>, SamplingError> {
        let sym = (&self.precision + self.precision.transpose()) * 0.5;
        Cholesky::new(sym).ok_or(SamplingError::NotPositiveDefinite)
    }
}

fn draw_from_factor(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut RandomStream,
) -> DVector<f64> {
    let l = chol.l_dirty();
    // L ℓ̄ = ℓ, then L' ψ = ℓ̄ + z
    let mut rhs = l
        .solve_lower_triangular(linear)
        .expect("cholesky factor has a positive diagonal");
    rhs += rng.normal_vector(linear.len());
    l.tr_solve_lower_triangular(&rhs)
        .expect("cholesky factor has a positive diagonal")
}

/// One draw from `N(Q⁻¹ℓ, Q⁻¹)`.
pub fn sample_gaussian_precision(
    sys: &GaussianSystem,
    rng: &mut RandomStream,
) -> Result<DVector<f64>, SamplingError> {
    let chol = sys.factor()?;
    Ok(draw_from_factor(&chol, &sys.linear, rng))
}

/// One draw from `N(Q⁻¹ℓ, Q⁻¹)` conditioned on `Cψ = 0`.
///
/// `constraints` is `c × n` with full row rank; an empty matrix (zero rows)
/// reduces to [`sample_gaussian_precision`].
pub fn sample_constrained_gaussian(
    sys: &GaussianSystem,
    constraints: &DMatrix<f64>,
    rng: &mut RandomStream,
) -> Result<DVector<f64>, SamplingError> {
    let n = sys.dim();
    if constraints.nrows() > 0 && constraints.ncols() != n {
        return Err(SamplingError::Dimension(format!(
            "constraint matrix has {} columns, system has dimension {}",
            constraints.ncols(),
            n
        )));
    }
    let chol = sys.factor()?;
    let mut psi = draw_from_factor(&chol, &sys.linear, rng);
    if constraints.nrows() == 0 {
        return Ok(psi);
    }
    if constraints.nrows() >= n {
        return Err(SamplingError::RedundantConstraints);
    }

    // L C̄ = C', L' C̃ = C̄, so C̃ = Q⁻¹C'
    let l = chol.l_dirty();
    let c_bar = l
        .solve_lower_triangular(&constraints.transpose())
        .expect("cholesky factor has a positive diagonal");
    let c_tilde = l
        .tr_solve_lower_triangular(&c_bar)
        .expect("cholesky factor has a positive diagonal");
    let schur = constraints * &c_tilde;
    let schur_chol = Cholesky::new((&schur + schur.transpose()) * 0.5)
        .ok_or(SamplingError::RedundantConstraints)?;

    // the oblique projection is idempotent; a second pass removes rounding
    for _ in 0..2 {
        let resid = constraints * &psi;
        let w = schur_chol.solve(&resid);
        psi -= &c_tilde * w;
    }
    Ok(psi)
}

/// Stepping-out and shrinkage slice sampler for a univariate target.
#[derive(Clone, Copy, Debug)]
pub struct SliceSampler {
    pub width: f64,
    pub max_steps: usize,
}

impl Default for SliceSampler {
    fn default() -> Self {
        Self {
            width: 1.0,
            max_steps: 100,
        }
    }
}

impl SliceSampler {
    /// One update of `x0` targeting `exp(log_density)` restricted to `(lo, hi)`.
    pub fn sample<F>(
        &self,
        mut log_density: F,
        x0: f64,
        bounds: (f64, f64),
        rng: &mut RandomStream,
    ) -> Result<f64, SamplingError>
    where
        F: FnMut(f64) -> f64,
    {
        let (lo, hi) = bounds;
        let mut eval = |x: f64| -> Result<f64, SamplingError> {
            if x <= lo || x >= hi {
                return Ok(f64::NEG_INFINITY);
            }
            let v = log_density(x);
            if v.is_nan() {
                return Err(SamplingError::NanDensity {
                    x,
                    context: "slice sampler".into(),
                });
            }
            Ok(v)
        };

        let f0 = eval(x0)?;
        if !f0.is_finite() {
            return Err(SamplingError::InvalidStart(x0));
        }
        let level = f0 + rng.uniform().ln();

        let mut left = x0 - self.width * rng.uniform();
        let mut right = left + self.width;
        let mut j = (self.max_steps as f64 * rng.uniform()).floor() as usize;
        let mut k = self.max_steps.saturating_sub(1).saturating_sub(j);
        while j > 0 && left > lo && eval(left)? > level {
            left -= self.width;
            j -= 1;
        }
        while k > 0 && right < hi && eval(right)? > level {
            right += self.width;
            k -= 1;
        }
        left = left.max(lo);
        right = right.min(hi);

        loop {
            let x1 = left + rng.uniform() * (right - left);
            if eval(x1)? > level {
                return Ok(x1);
            }
            if x1 < x0 {
                left = x1;
            } else {
                right = x1;
            }
            if right - left <= f64::EPSILON * x0.abs().max(1.0) {
                return Ok(x0);
            }
        }
    }
}

/// Convenience wrapper around [`SliceSampler::default`].
pub fn slice_sample<F>(
    log_density: F,
    x0: f64,
    bounds: (f64, f64),
    width: f64,
    rng: &mut RandomStream,
) -> Result<f64, SamplingError>
where
    F: FnMut(f64) -> f64,
{
    SliceSampler {
        width,
        ..SliceSampler::default()
    }
    .sample(log_density, x0, bounds, rng)
}

/// Draw from `Gamma(shape, rate)` conditioned on exceeding `lower`, by
/// inverting the CDF on the truncated region.
pub fn sample_truncated_gamma(
    shape: f64,
    rate: f64,
    lower: f64,
    rng: &mut RandomStream,
) -> Result<f64, SamplingError> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() && lower >= 0.0) {
        return Err(SamplingError::InvalidGamma { shape, rate });
    }
    let z_lower = rate * lower;
    let upper_mass = if z_lower > 0.0 { gamma_ur(shape, z_lower) } else { 1.0 };
    if upper_mass < 1e-300 {
        return Err(SamplingError::TruncationUnderflow {
            lower,
            mass: upper_mass,
        });
    }
    let u = rng.uniform();
    // survival target S(z) = u · S(lower); work from whichever tail keeps precision
    let q = u * upper_mass;
    let z = if q < 0.5 {
        invert_regularized_gamma(shape, q, Tail::Upper)
    } else {
        invert_regularized_gamma(shape, 1.0 - q, Tail::Lower)
    };
    Ok((z / rate).max(lower))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tail {
    Lower,
    Upper,
}

/// Solve `P(a, z) = target` (lower tail) or `Q(a, z) = target` (upper tail)
/// by safeguarded Newton iteration in log z.
fn invert_regularized_gamma(a: f64, target: f64, tail: Tail) -> f64 {
    let objective = |z: f64| match tail {
        Tail::Lower => gamma_lr(a, z) - target,
        Tail::Upper => target - gamma_ur(a, z),
    };
    // increasing in z for both tails
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), (a + 1.0).ln());
    while objective(hi.exp()) < 0.0 && hi < 800.0 {
        lo = hi;
        hi += 1.0_f64.max(hi.abs());
    }
    let ln_norm = ln_gamma(a);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let z = x.exp();
        let g = objective(z);
        if g == 0.0 {
            return z;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // d/dx of the CDF in log z: z · density(z)
        let log_deriv = a * x - z - ln_norm;
        let deriv = log_deriv.exp();
        if deriv > 0.0 && (g / deriv).abs() < 1e-15 * x.abs().max(1.0) {
            return z;
        }
        let newton = x - g / deriv;
        x = if deriv > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x.exp()
}
