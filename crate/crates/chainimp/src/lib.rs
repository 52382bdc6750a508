//! Sequential-regression (chained-equation) multiple imputation for
//! rectangular survey data: typed variables, skip-pattern restrictions,
//! bracket bounds, semi-continuous amounts, combining rules with FMI, a
//! hot-deck baseline, and an evaluation battery over completed datasets.

pub mod data_model;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod hotdeck;
pub mod inference;
pub mod regressors;
pub mod selection;
pub mod simulate;
pub mod transforms;
