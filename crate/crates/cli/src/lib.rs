//! Command-line front end: dataset IO, run configuration, posterior
//! summaries and credible bands.

pub mod app;
pub mod bands;
pub mod config;
pub mod error;
pub mod io;
pub mod summary;

pub use app::run;
pub use bands::{simultaneous_band, BandSummary};
pub use config::RunConfig;
pub use error::CliError;
pub use io::{load_dataset, save_dataset};
