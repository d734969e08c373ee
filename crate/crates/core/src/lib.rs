//! Dependent Poisson factor models for multivariate count data.
//!
//! A factor structure is a set partition of the observed variables: every
//! group of two or more variables shares one latent Poisson factor, and
//! singletons are independent. The crate fits such models (optionally with
//! truncated Poisson components for ordinal data) by maximum likelihood,
//! searches the space of structures with a forward AIC procedure, and runs
//! Monte Carlo studies of how often the procedure recovers the truth.

pub mod asymptotics;
pub mod cli;
pub mod dists;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod optim;
pub mod partitions;
pub mod selection;
pub mod simulation;

pub use asymptotics::{asp_correct_selection, asp_table, gamma_constant, AspResult};
pub use dists::{PoissonSpec, RateSpec, TruncPoissonSpec};
pub use error::{Error, Result};
pub use estimation::{fit_mixed, fit_model, standard_errors, FitOptions, FittedModel, SeMode};
pub use likelihood::{CountMatrix, GroupParams, MixedModelSpec};
pub use partitions::{bell_number, enumerate_partitions, max_forward_tests, ModelPartition, TypeSignature};
pub use selection::{aic, select_exhaustive, select_forward, ExhaustiveResult, SelectionTrace};
pub use simulation::{generate, run_study, SimDesign, StudyMode, StudyResult};
