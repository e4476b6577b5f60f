use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("observation points must be finite and strictly increasing")]
    UnsortedPoints,
    #[error("non-finite predictor value at row {row}, column {col}")]
    NonFinitePredictor { row: usize, col: usize },
    #[error("infinite response value at row {row}, column {col}")]
    InfiniteResponse { row: usize, col: usize },
}

/// A functional time series on a common grid.
///
/// `response` is `T × M` with `NaN` marking unobserved cells; `predictors` is
/// `T × p` (possibly `p = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    pub points: Vec<f64>,
    pub response: DMatrix<f64>,
    pub predictors: DMatrix<f64>,
    pub time_labels: Vec<String>,
    pub predictor_names: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(
        points: Vec<f64>,
        response: DMatrix<f64>,
        predictors: DMatrix<f64>,
    ) -> Result<Self, DataError> {
        let t = response.nrows();
        let time_labels = (1..=t).map(|i| i.to_string()).collect();
        let predictor_names = (1..=predictors.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_labels(points, response, predictors, time_labels, predictor_names)
    }

    pub fn with_labels(
        points: Vec<f64>,
        response: DMatrix<f64>,
        predictors: DMatrix<f64>,
        time_labels: Vec<String>,
        predictor_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let (t, m) = response.shape();
        if points.len() != m {
            return Err(DataError::Dimension(format!(
                "{} observation points for {m} response columns",
                points.len()
            )));
        }
        if predictors.nrows() != t {
            return Err(DataError::Dimension(format!(
                "response has {t} rows, predictors have {}",
                predictors.nrows()
            )));
        }
        if time_labels.len() != t || predictor_names.len() != predictors.ncols() {
            return Err(DataError::Dimension("label counts do not match data".into()));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::UnsortedPoints);
        }
        for r in 0..t {
            for c in 0..predictors.ncols() {
                if !predictors[(r, c)].is_finite() {
                    return Err(DataError::NonFinitePredictor { row: r, col: c });
                }
            }
        }
        for r in 0..t {
            for c in 0..m {
                if response[(r, c)].is_infinite() {
                    return Err(DataError::InfiniteResponse { row: r, col: c });
                }
            }
        }
        Ok(Self {
            points,
            response,
            predictors,
            time_labels,
            predictor_names,
        })
    }

    pub fn n_times(&self) -> usize {
        self.response.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.response.ncols()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.ncols()
    }

    pub fn is_missing(&self, t: usize, m: usize) -> bool {
        self.response[(t, m)].is_nan()
    }

    /// `(t, m)` of every unobserved cell, in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let (t, m) = self.response.shape();
        (0..t)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_missing(i, j))
            .collect()
    }

    /// Center each predictor and scale it to unit sample standard deviation.
    /// Constant columns are only centered.
    pub fn standardize_predictors(&mut self) {
        let t = self.n_times() as f64;
        for mut col in self.predictors.column_iter_mut() {
            let mean = col.sum() / t;
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (t - 1.0)).sqrt();
            if sd > 0.0 {
                col.scale_mut(1.0 / sd);
            }
        }
    }

    /// Response with every missing cell filled by linear interpolation across
    /// the observed points of its row (constant beyond the end points). Rows
    /// with no observations are filled with the mean of the observed data.
    pub fn interpolated_response(&self) -> DMatrix<f64> {
        let (t, m) = self.response.shape();
        let observed: Vec<f64> = self.response.iter().copied().filter(|v| !v.is_nan()).collect();
        let global = if observed.is_empty() {
            0.0
        } else {
            observed.iter().sum::<f64>() / observed.len() as f64
        };
        let mut out = self.response.clone();
        for i in 0..t {
            let obs: Vec<(f64, f64)> = (0..m)
                .filter(|&j| !self.is_missing(i, j))
                .map(|j| (self.points[j], self.response[(i, j)]))
                .collect();
            for j in 0..m {
                if !self.is_missing(i, j) {
                    continue;
                }
                out[(i, j)] = interpolate(&obs, self.points[j]).unwrap_or(global);
            }
        }
        out
    }
}

fn interpolate(obs: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = obs.first()?;
    let last = obs.last()?;
    if x <= first.0 {
        return Some(first.1);
    }
    if x >= last.0 {
        return Some(last.1);
    }
    let idx = obs.partition_point(|p| p.0 < x);
    let (x0, y0) = obs[idx - 1];
    let (x1, y1) = obs[idx];
    Some(y0 + (x - x0) / (x1 - x0) * (y1 - y0))
}

/// Dense three-way array with the last index contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Array3 {
    pub fn filled(a: usize, b: usize, c: usize, value: f64) -> Self {
        Self {
            dims: [a, b, c],
            data: vec![value; a * b * c],
        }
    }

    pub fn zeros(a: usize, b: usize, c: usize) -> Self {
        Self::filled(a, b, c, 0.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    /// Contiguous slice over the last index for fixed `(i, j)`.
    pub fn lane(&self, i: usize, j: usize) -> &[f64] {
        let c = self.dims[2];
        let start = (i * self.dims[1] + j) * c;
        &self.data[start..start + c]
    }

    pub fn lane_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let c = self.dims[2];
        let start = (i * self.dims[1] + j) * c;
        &mut self.data[start..start + c]
    }

    fn offset(&self, (i, j, k): (usize, usize, usize)) -> usize {
        assert!(
            i < self.dims[0] && j < self.dims[1] && k < self.dims[2],
            "index ({i}, {j}, {k}) out of bounds for {:?}",
            self.dims
        );
        (i * self.dims[1] + j) * self.dims[2] + k
    }
}

impl std::ops::Index<(usize, usize, usize)> for Array3 {
    type Output = f64;

    fn index(&self, idx: (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(idx)]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Array3 {
    fn index_mut(&mut self, idx: (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}
