//! Probabilistic river-discharge scenario generation conditioned on gridded
//! climate forcings: a single-layer GRU emits three-parameter log-normal
//! distributions per plant per month, trained with a multi-quantile pinball
//! loss under a non-negativity weight projection; sampled scenarios are
//! re-ordered to restore serial correlation via a regression-based
//! Mahalanobis assignment.

pub mod calendar;
pub mod cli;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod fmtnum;
pub mod linalg;
pub mod checkpoint;
pub mod net;
pub mod report;
pub mod rngutil;
pub mod scenario;
pub mod train;

pub use error::{HydroError, Result};
