//! Robustness and accuracy ratings for time-series forecasting models.
//!
//! The crate loads price series, slices them into evaluation windows, applies
//! numeric and image perturbations, collects forecasts, and turns residuals
//! into causal and accuracy scores that are finally bucketed into levels.

pub mod config;
pub mod error;
pub mod forecast;
pub mod imaging;
pub mod ingest;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod rating;
pub mod series;
pub mod stats;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use metrics::{Metric, RawScore};
pub use perturb::Perturbation;
pub use rating::{Direction, RatingTable};
pub use series::{ConfounderField, EvalWindow, LabeledSeries, PredictionRecord};
