use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dfosr::gibbs::{McmcConfig, Variant};
use serde::Serialize;

use crate::error::CliError;

pub const DEFAULT_BAND_LEVEL: f64 = 0.95;

/// Everything a command needs: sampler settings plus IO and summary options.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mcmc: McmcConfig,
    pub response: Option<PathBuf>,
    pub predictors: Option<PathBuf>,
    pub draws: Option<PathBuf>,
    pub out: PathBuf,
    pub band_level: f64,
    /// Size of an equally spaced grid merged into the observation points.
    pub grid_points: Option<usize>,
    pub scale_predictors: bool,
    pub design: String,
    pub reps: usize,
    pub methods: Vec<Variant>,
    pub write_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            response: None,
            predictors: None,
            draws: None,
            out: PathBuf::from("dfosr-out"),
            band_level: DEFAULT_BAND_LEVEL,
            grid_points: None,
            scale_predictors: false,
            design: "dynamic-small".into(),
            reps: 10,
            methods: vec![Variant::DfosrHs, Variant::DfosrNig, Variant::FosrAr],
            write_data: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value '{value}' for '{key}'"))),
    }
}

pub fn parse_methods(value: &str) -> Result<Vec<Variant>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<Variant>("methods", s))
        .collect()
}

impl RunConfig {
    /// Set one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "k" => self.mcmc.k = parse(key, value)?,
            "iters" => self.mcmc.n_iter = parse(key, value)?,
            "burnin" => self.mcmc.burn_in = parse(key, value)?,
            "thin" => self.mcmc.thin = parse(key, value)?,
            "variant" => self.mcmc.variant = parse(key, value)?,
            "sv" => self.mcmc.sv = parse_bool(key, value)?,
            "stationary_phi" => self.mcmc.stationary_phi = parse_bool(key, value)?,
            "seed" => self.mcmc.seed = parse(key, value)?,
            "parallel" => self.mcmc.parallel = parse_bool(key, value)?,
            "response" => self.response = Some(value.into()),
            "predictors" => self.predictors = Some(value.into()),
            "draws" => self.draws = Some(value.into()),
            "out" => self.out = value.into(),
            "band_level" => self.band_level = parse(key, value)?,
            "grid_points" => self.grid_points = Some(parse(key, value)?),
            "scale_predictors" => self.scale_predictors = parse_bool(key, value)?,
            "design" => self.design = value.into(),
            "reps" => self.reps = parse(key, value)?,
            "methods" => self.methods = parse_methods(value)?,
            "write_data" => self.write_data = parse_bool(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file. Blank lines and lines starting with `#`
    /// are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(CliError::input(path))?;
        for (key, value) in parse_key_values(&text).map_err(|(line, msg)| CliError::Parse {
            path: path.into(),
            line,
            column: 1,
            message: msg,
        })? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(CliError::Usage(format!("band level must lie in (0, 1), got {}", self.band_level)));
        }
        self.mcmc.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// Parse `key = value` lines, keeping the last value of repeated keys.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| (i + 1, format!("expected 'key = value', found '{line}'")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err((i + 1, "empty key".into()));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}
