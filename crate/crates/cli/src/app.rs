use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dfosr::gibbs::{run_gibbs, McmcConfig, PosteriorDraws, Variant};
use dfosr::simstudy::{run_study, simulate_design, MetricReport, StudyDesign};

use crate::bands::MIN_BAND_DRAWS;
use crate::config::{parse_methods, RunConfig};
use crate::error::CliError;
use crate::io::{augment_grid, load_dataset, save_dataset};
use crate::summary::{hash_file, write_summaries, Manifest};

#[derive(Parser, Debug)]
#[command(name = "dfosr", version, about = "Bayesian dynamic function-on-scalars regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation study and write per-replicate metrics.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset and write draws and summaries.
    Fit(FitArgs),
    /// Summarize stored draws.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Key-value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of hs, nig, fosr-ar.
    #[arg(long)]
    variant: Option<Variant>,
    /// Stochastic volatility for the observation error.
    #[arg(long)]
    sv: bool,
    /// Number of factors.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Level of the credible bands in summaries.
    #[arg(long)]
    band_level: Option<f64>,
    /// Draw the factor states one factor at a time.
    #[arg(long)]
    serial: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// dynamic-small, dynamic-large, static-small or static-large.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods to compare.
    #[arg(long)]
    methods: Option<String>,
    /// Also write each replicate's dataset as CSV.
    #[arg(long)]
    write_data: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Wide response CSV: time label, then one column per observation point.
    #[arg(long)]
    response: Option<PathBuf>,
    /// Predictor CSV: time label, then one column per predictor.
    #[arg(long)]
    predictors: Option<PathBuf>,
    /// Center and scale the predictors.
    #[arg(long)]
    scale: bool,
    /// Merge an equally spaced grid of this many points into the observation
    /// points; the new points are imputed.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    #[command(flatten)]
    common: Common,
    /// Draws written by `fit`.
    #[arg(long)]
    draws: Option<PathBuf>,
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = common.seed {
        cfg.mcmc.seed = v;
    }
    if let Some(v) = common.variant {
        cfg.mcmc.variant = v;
    }
    if common.sv {
        cfg.mcmc.sv = true;
    }
    if let Some(v) = common.k {
        cfg.mcmc.k = v;
    }
    if let Some(v) = common.iters {
        cfg.mcmc.n_iter = v;
    }
    if let Some(v) = common.burnin {
        cfg.mcmc.burn_in = v;
    }
    if let Some(v) = common.thin {
        cfg.mcmc.thin = v;
    }
    if let Some(v) = &common.out {
        cfg.out = v.clone();
    }
    if let Some(v) = common.band_level {
        cfg.band_level = v;
    }
    if common.serial {
        cfg.mcmc.parallel = false;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("DFOSR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("DFOSR_THREADS must be a positive integer, got '{value}'")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialized");
    }
    Ok(())
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Summarize(args) => summarize(args),
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::output(dir))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(d) = args.design {
        cfg.design = d;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(m) = args.methods {
        cfg.methods = parse_methods(&m)?;
    }
    cfg.write_data |= args.write_data;
    cfg.validate()?;
    if cfg.reps == 0 || cfg.methods.is_empty() {
        return Err(CliError::Usage("need at least one replicate and one method".into()));
    }
    let design: StudyDesign = cfg.design.parse().map_err(CliError::Usage)?;
    create_out(&cfg.out)?;

    let methods: Vec<McmcConfig> = cfg
        .methods
        .iter()
        .map(|v| McmcConfig {
            variant: *v,
            ..cfg.mcmc.clone()
        })
        .collect();
    let report = run_study(&design, &methods, cfg.reps, cfg.mcmc.seed);
    let mut files = vec![write_metrics(&report, &cfg.out)?, write_study_summary(&report, &cfg.methods, &cfg.out)?];

    if cfg.write_data {
        for rep in 0..cfg.reps {
            let seed = dfosr::simstudy::replicate_seed(cfg.mcmc.seed, rep);
            let truth = simulate_design(design.kind, design.t, design.m, seed)?;
            let (r, p) = (format!("rep{rep}_response.csv"), format!("rep{rep}_predictors.csv"));
            save_dataset(&truth.dataset(), &cfg.out.join(&r), Some(&cfg.out.join(&p)))?;
            files.push(r);
            files.push(p);
        }
    }
    for row in report.rows.iter().filter(|r| r.error.is_some()) {
        log::warn!("replicate {} ({}) failed: {}", row.replicate, row.method, row.error.as_deref().unwrap_or(""));
    }
    Manifest::new("simulate", &cfg, Vec::new()).write(&cfg.out, &files)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_metrics(report: &MetricReport, dir: &Path) -> Result<String, CliError> {
    let name = "metrics.csv".to_string();
    let path = dir.join(&name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Output {
        path: path.clone(),
        source: e.into(),
    })?;
    let wrap = |e: csv::Error| CliError::Output {
        path: path.clone(),
        source: e.into(),
    };
    w.write_record(["replicate", "method", "seed", "data_checksum", "rmse", "mciw", "coverage", "error"])
        .map_err(wrap)?;
    for r in &report.rows {
        w.write_record([
            r.replicate.to_string(),
            r.method.clone(),
            r.seed.to_string(),
            format!("{:016x}", r.data_checksum),
            fmt_opt(r.rmse),
            fmt_opt(r.mciw),
            fmt_opt(r.coverage),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(CliError::output(&path))?;
    Ok(name)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn write_study_summary(report: &MetricReport, methods: &[Variant], dir: &Path) -> Result<String, CliError> {
    let name = "study_summary.csv".to_string();
    let path = dir.join(&name);
    let mut text = String::from("method,completed,median_rmse,median_mciw,mean_coverage\n");
    for v in methods {
        let label = v.to_string();
        let rmse = report.metric(&label, |r| r.rmse);
        let cov = report.metric(&label, |r| r.coverage);
        let mean_cov = if cov.is_empty() {
            None
        } else {
            Some(cov.iter().sum::<f64>() / cov.len() as f64)
        };
        text += &format!(
            "{label},{},{},{},{}\n",
            rmse.len(),
            fmt_opt(median(rmse)),
            fmt_opt(median(report.metric(&label, |r| r.mciw))),
            fmt_opt(mean_cov)
        );
    }
    fs::write(&path, text).map_err(CliError::output(&path))?;
    Ok(name)
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(p) = args.response {
        cfg.response = Some(p);
    }
    if let Some(p) = args.predictors {
        cfg.predictors = Some(p);
    }
    if let Some(n) = args.grid_points {
        cfg.grid_points = Some(n);
    }
    cfg.scale_predictors |= args.scale;
    cfg.validate()?;
    if cfg.mcmc.n_retained() < MIN_BAND_DRAWS {
        return Err(CliError::Usage(format!(
            "{} retained draws; summaries need at least {MIN_BAND_DRAWS}",
            cfg.mcmc.n_retained()
        )));
    }
    let response = cfg
        .response
        .clone()
        .ok_or_else(|| CliError::Usage("fit needs --response".into()))?;
    let mut inputs = vec![hash_file(&response)?];
    if let Some(p) = &cfg.predictors {
        inputs.push(hash_file(p)?);
    }
    let mut data = load_dataset(&response, cfg.predictors.as_deref(), cfg.scale_predictors)?;
    if let Some(n) = cfg.grid_points {
        data = augment_grid(&data, n)?;
    }
    create_out(&cfg.out)?;
    log::info!(
        "fitting T = {}, M = {}, p = {} with {} missing cells",
        data.n_times(),
        data.n_points(),
        data.n_predictors(),
        data.missing_cells().len()
    );
    let draws = run_gibbs(&cfg.mcmc, &data)?;
    let draws_path = cfg.out.join("draws.json");
    let text = serde_json::to_string(&draws).expect("draws serialize");
    fs::write(&draws_path, text).map_err(CliError::output(&draws_path))?;
    let mut files = vec!["draws.json".to_string()];
    files.extend(write_summaries(&draws, &cfg.out, cfg.band_level)?);
    Manifest::new("fit", &cfg, inputs).write(&cfg.out, &files)?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<PosteriorDraws, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::input(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Draws {
        path: path.into(),
        source,
    })
}

fn summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(p) = args.draws {
        cfg.draws = Some(p);
    }
    if !(cfg.band_level > 0.0 && cfg.band_level < 1.0) {
        return Err(CliError::Usage(format!("band level must lie in (0, 1), got {}", cfg.band_level)));
    }
    let path = cfg
        .draws
        .clone()
        .ok_or_else(|| CliError::Usage("summarize needs --draws".into()))?;
    let inputs = vec![hash_file(&path)?];
    let draws = read_draws(&path)?;
    cfg.mcmc = draws.config.clone();
    let files = write_summaries(&draws, &cfg.out, cfg.band_level)?;
    Manifest::new("summarize", &cfg, inputs).write(&cfg.out, &files)?;
    Ok(())
}
