use std::fs;
use std::path::{Path, PathBuf};

use dfosr::gibbs::PosteriorDraws;
use dfosr::simstudy::quantile_sorted;
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bands::{simultaneous_band, BandSummary};
use crate::config::RunConfig;
use crate::error::CliError;

pub const BAND_STATISTICS: [&str; 5] = ["mean", "lower", "upper", "sim_lower", "sim_upper"];
pub const SUMMARY_HEADER: [&str; 7] = ["quantity", "index", "t", "m", "tau", "statistic", "value"];

/// Content hash in the style of git blob ids, with SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub hash: String,
}

pub fn hash_file(path: &Path) -> Result<InputHash, CliError> {
    let bytes = fs::read(path).map_err(CliError::input(path))?;
    Ok(InputHash {
        path: path.display().to_string(),
        hash: content_hash(&bytes),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<InputHash>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, inputs: Vec<InputHash>) -> Self {
        Self {
            command: command.into(),
            seed: config.mcmc.seed,
            config: config.clone(),
            inputs,
            outputs: Vec::new(),
        }
    }

    /// Record the hashes of `files` (relative to `dir`) and write
    /// `manifest.json` there.
    pub fn write(mut self, dir: &Path, files: &[String]) -> Result<PathBuf, CliError> {
        for f in files {
            let mut h = hash_file(&dir.join(f))?;
            h.path = f.clone();
            self.outputs.push(h);
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(CliError::output(&path))?;
        Ok(path)
    }
}

struct TidyWriter {
    path: PathBuf,
    inner: csv::Writer<fs::File>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TidyWriter {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        let file = fs::File::create(&path).map_err(CliError::output(&path))?;
        let mut w = Self {
            inner: csv::Writer::from_writer(file),
            path,
        };
        w.record(&SUMMARY_HEADER.map(String::from))?;
        Ok(w)
    }

    fn record(&mut self, fields: &[String]) -> Result<(), CliError> {
        let path = self.path.clone();
        self.inner.write_record(fields).map_err(|e| CliError::Output {
            path,
            source: e.into(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        quantity: &str,
        index: Option<usize>,
        t: Option<usize>,
        m: Option<usize>,
        tau: Option<f64>,
        statistic: &str,
        value: f64,
    ) -> Result<(), CliError> {
        self.record(&[
            quantity.to_string(),
            opt(index),
            opt(t),
            opt(m),
            opt(tau),
            statistic.to_string(),
            format!("{value}"),
        ])
    }

    /// Rows for a band over grid points (`over_points`) or over time.
    fn band(
        &mut self,
        quantity: &str,
        index: Option<usize>,
        t: Option<usize>,
        band: &BandSummary,
        points: Option<&[f64]>,
    ) -> Result<(), CliError> {
        for i in 0..band.len() {
            let (tt, m, tau) = match points {
                Some(p) => (t, Some(i), Some(p[i])),
                None => (Some(i), None, None),
            };
            let values = [band.mean[i], band.lower[i], band.upper[i], band.sim_lower[i], band.sim_upper[i]];
            for (stat, v) in BAND_STATISTICS.iter().zip(values) {
                self.row(quantity, index, tt, m, tau, stat, v)?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(CliError::output(&self.path))
    }
}

fn stack_rows(draws: impl Iterator<Item = Vec<f64>>, n: usize, width: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, width);
    for (d, row) in draws.enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[(d, j)] = v;
        }
    }
    out
}

/// Write tidy summaries of a fit to `dir` and return the file names.
///
/// * `surfaces.csv`: regression surfaces `α̃_{j,t}(τ)`, index = predictor
/// * `fitted.csv`: fitted curves, including imputed points
/// * `loadings.csv`: sign-aligned loading curves, index = factor
/// * `volatility.csv`: observation error standard deviation over time
/// * `imputed.csv`: pointwise summaries of every missing cell
pub fn write_summaries(draws: &PosteriorDraws, dir: &Path, level: f64) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(CliError::output(dir))?;
    let n = draws.len();
    let (t_len, m_len, p) = (draws.n_times(), draws.n_points(), draws.n_predictors());
    let points = draws.points.as_slice();
    let mut files = Vec::new();

    let mut w = TidyWriter::create(dir.join("surfaces.csv"))?;
    for j in 0..p {
        let surfaces = draws.regression_surface(j)?;
        for t in 0..t_len {
            let mat = stack_rows(surfaces.iter().map(|s| s.row(t).iter().copied().collect()), n, m_len);
            w.band("surface", Some(j), Some(t), &simultaneous_band(&mat, level)?, Some(points))?;
        }
    }
    w.finish()?;
    files.push("surfaces.csv".to_string());

    let fitted = draws.fitted_curves();
    let mut w = TidyWriter::create(dir.join("fitted.csv"))?;
    for t in 0..t_len {
        let mat = stack_rows(fitted.iter().map(|f| f.row(t).iter().copied().collect()), n, m_len);
        w.band("fitted", None, Some(t), &simultaneous_band(&mat, level)?, Some(points))?;
    }
    w.finish()?;
    files.push("fitted.csv".to_string());

    let loadings = draws.aligned_loadings();
    let k_len = draws.config.k;
    let mut w = TidyWriter::create(dir.join("loadings.csv"))?;
    for k in 0..k_len {
        let mat = stack_rows(loadings.iter().map(|f| f.column(k).iter().copied().collect()), n, m_len);
        w.band("loading", Some(k), None, &simultaneous_band(&mat, level)?, Some(points))?;
    }
    w.finish()?;
    files.push("loadings.csv".to_string());

    let mut w = TidyWriter::create(dir.join("volatility.csv"))?;
    let sd = stack_rows(draws.obs_var.iter().map(|v| v.iter().map(|x| x.sqrt()).collect()), n, t_len);
    w.band("obs_sd", None, None, &simultaneous_band(&sd, level)?, None)?;
    w.finish()?;
    files.push("volatility.csv".to_string());

    if !draws.missing.is_empty() {
        let tail = 0.5 * (1.0 - level);
        let mut w = TidyWriter::create(dir.join("imputed.csv"))?;
        let mut buf = vec![0.0; n];
        for (c, &(t, m)) in draws.missing.iter().enumerate() {
            for (b, d) in buf.iter_mut().zip(&draws.imputed) {
                *b = d[c];
            }
            let mean = buf.iter().sum::<f64>() / n as f64;
            buf.sort_by(f64::total_cmp);
            let stats = [
                ("mean", mean),
                ("lower", quantile_sorted(&buf, tail)),
                ("upper", quantile_sorted(&buf, 1.0 - tail)),
            ];
            for (stat, v) in stats {
                w.row("imputed", None, Some(t), Some(m), Some(points[m]), stat, v)?;
            }
        }
        w.finish()?;
        files.push("imputed.csv".to_string());
    }
    Ok(files)
}
