//! Selective state-space feature extraction with group attention for
//! predicting CPU benchmark scores from tabular hardware characteristics.
//!
//! The crate is organised bottom-up: [`autodiff`] provides the differentiable
//! operations, [`ssm`] the state-space kernels, [`mamba`] and [`attention`]
//! the network stages, [`model`] the assembled network, [`data`] ingestion
//! and preprocessing, [`train`] optimisation and metrics, and [`baselines`]
//! the linear reference models.

pub mod attention;
pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod mamba;
pub mod model;
pub mod params;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
