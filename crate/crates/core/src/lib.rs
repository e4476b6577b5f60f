//! Bayesian dynamic function-on-scalars regression.
//!
//! A functional time series `Y_t(τ)` is decomposed on `K` smooth, orthonormal
//! loading curves whose factors follow a time-varying parameter regression on
//! scalar predictors with autoregressive errors. Posterior inference uses a
//! projection-based Gibbs sampler: under `F'F = I` the factors only see the
//! `K`-dimensional projected data, so the dynamic states are drawn jointly per
//! factor with a simulation smoother.

pub mod basis;
pub mod data;
pub mod gibbs;
pub mod sampling;
pub mod shrinkage;
pub mod simstudy;
pub mod statespace;

pub use basis::{BasisSystem, ObservationGrid};
pub use data::FunctionalDataset;
pub use gibbs::{run_gibbs, McmcConfig, PosteriorDraws, Variant};
pub use sampling::RandomStream;
