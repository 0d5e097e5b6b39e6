//! Causal inference for regression discontinuity designs with an ordinal
//! running variable.
//!
//! The pipeline fits an ordered probit for the running variable, turns it
//! into propensity scores for crossing the threshold, searches for the widest
//! covariate-balanced propensity interval, and estimates overlap (ATO) and
//! treated (ATT) effects with augmented weighting estimators and sandwich
//! standard errors. [`simlab`] holds synthetic data generators, Monte Carlo
//! studies and the bootstrap used to check those estimators.

pub mod balance;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod normal;
pub mod numeric;
pub mod pipeline;
pub mod probit;
pub mod simlab;
pub mod terms;
pub mod variance;

pub use error::{Error, Result, Stage};
