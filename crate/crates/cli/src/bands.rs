use dfosr::simstudy::quantile_sorted;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub const MIN_BAND_DRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum BandError {
    #[error("need at least {MIN_BAND_DRAWS} draws, got {0}")]
    TooFewDraws(usize),
    #[error("band level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("draws contain non-finite values")]
    NonFinite,
}

/// Posterior mean with pointwise and simultaneous credible bands of one curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandSummary {
    pub level: f64,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sim_lower: Vec<f64>,
    pub sim_upper: Vec<f64>,
    /// Quantile of the maximal standardized deviation.
    pub critical: f64,
}

/// Bands from `n_draws × M` curve draws.
///
/// Pointwise limits are per-point quantiles. The simultaneous band is
/// `mean ± c·sd`, with `c` the `level` quantile over draws of
/// `max_m |draw_m − mean_m| / sd_m`; points with zero sd are left out of the
/// maximum. Both bands are widened where needed so that the mean lies in the
/// pointwise band and the pointwise band lies in the simultaneous one.
pub fn simultaneous_band(draws: &DMatrix<f64>, level: f64) -> Result<BandSummary, BandError> {
    let (n, m) = draws.shape();
    if n < MIN_BAND_DRAWS {
        return Err(BandError::TooFewDraws(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(BandError::Level(level));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(BandError::NonFinite);
    }
    let nf = n as f64;
    let mean: Vec<f64> = draws.column_iter().map(|c| c.sum() / nf).collect();
    let sd: Vec<f64> = draws
        .column_iter()
        .zip(&mean)
        .map(|(c, mu)| (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt())
        .collect();

    let tail = 0.5 * (1.0 - level);
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut buf = vec![0.0; n];
    for (j, col) in draws.column_iter().enumerate() {
        buf.copy_from_slice(col.as_slice());
        buf.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&buf, tail).min(mean[j]));
        upper.push(quantile_sorted(&buf, 1.0 - tail).max(mean[j]));
    }

    let mut max_dev: Vec<f64> = draws
        .row_iter()
        .map(|row| {
            (0..m)
                .filter(|&j| sd[j] > 0.0)
                .map(|j| (row[j] - mean[j]).abs() / sd[j])
                .fold(0.0, f64::max)
        })
        .collect();
    max_dev.sort_by(f64::total_cmp);
    let critical = quantile_sorted(&max_dev, level);

    let sim_lower = (0..m).map(|j| (mean[j] - critical * sd[j]).min(lower[j])).collect();
    let sim_upper = (0..m).map(|j| (mean[j] + critical * sd[j]).max(upper[j])).collect();
    Ok(BandSummary {
        level,
        mean,
        lower,
        upper,
        sim_lower,
        sim_upper,
        critical,
    })
}

impl BandSummary {
    /// Whether the curve lies inside the simultaneous band at every point.
    pub fn covers(&self, curve: &[f64]) -> bool {
        curve
            .iter()
            .zip(self.sim_lower.iter().zip(&self.sim_upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}
