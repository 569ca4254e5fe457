//! Multimodal market fusion forecasting toolkit.
//!
//! Ingests paired daily OHLC series for a domestic and a foreign market,
//! derives return features, trains dense forecasting networks at four fusion
//! levels (single-modal, early, intermediate, late), tunes them with a
//! tree-structured Parzen estimator, and evaluates one-day-ahead directional
//! predictions against rule baselines. A synthetic coupled-market generator
//! with a known Bayes-optimal hit ratio makes the fusion-vs-single-modal
//! comparison testable without vendor data.
//!
//! The numeric core ([`nn`], [`fusion`], [`train`], the scaler in
//! [`features`]) is generic over the scalar type through [`num::Real`];
//! concrete `f64` aliases live at the crate root.

pub mod data;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod mat;
pub mod nn;
pub mod num;
pub mod synth;
pub mod tpe;
pub mod train;

/// Dense network over `f64`, the precision used by the pipeline.
pub type Network64 = nn::Network<f64>;
/// Fusion forecaster over `f64`.
pub type FusionModel64 = fusion::FusionModel<f64>;
/// Min-max scaler over `f64`.
pub type MinMaxScaler64 = features::MinMaxScaler<f64>;
/// Optimizer state over `f64`.
pub type OptimizerState64 = nn::OptimizerState<f64>;
