//! Predictive versus stochastic single imputation, and a Monte Carlo harness
//! that measures what each does to downstream estimates.
//!
//! The pipeline is: [`datagen`] builds a population, [`ampute`] hides part
//! of the outcome, an imputer from [`imputers`] or [`forest`] fills it back
//! in, and [`downstream`] measures the completed data. [`harness`] repeats
//! that over a grid of scenarios with reproducible [`stochastics`] streams.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ampute;
pub mod datagen;
pub mod downstream;
pub mod error;
pub mod forest;
pub mod harness;
pub mod imputers;
pub mod linmodel;
pub mod stochastics;

pub use ampute::{ampute, IncompleteDataset, Mechanism, MissingnessSpec};
pub use datagen::{coefficients, generate_population, ground_truth, Dataset, PopulationSpec};
pub use downstream::{decompose_mse, estimate_params, quantile, DecompositionResult, ParamSet};
pub use error::{Error, Result};
pub use forest::ForestParams;
pub use harness::{
    format_table, run_decomposition, run_grid, run_table1, run_table2, ExperimentConfig,
    SummaryTable, TableStyle,
};
pub use imputers::{impute_dispatch, CompletedDataset, ImputationMethod, SoftImputeParams};
pub use stochastics::{make_stream, RngStream, SeedSpec};
