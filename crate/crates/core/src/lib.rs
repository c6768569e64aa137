//! Half-hourly electricity load forecasting with GRU models whose output
//! layer initializer can be swapped, plus the feature pipeline and the
//! experiment harness used to compare initializers.

pub mod checkpoint;
pub mod data_ingest;
pub mod exec;
pub mod features;
pub mod models;
pub mod nn;
pub mod synthetic;
pub mod train_eval;
