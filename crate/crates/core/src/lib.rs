//! Individualized treatment effect estimation with Gaussian process priors.

pub mod benchmark;
pub mod dataset;
pub mod empirical_bayes;
pub mod error;
pub mod estimators;
pub mod gp_engine;
pub mod kernels;
pub mod metrics;
pub mod optimize;
pub mod seed;
pub mod synthgen;

pub use dataset::{FactualData, ObservationalDataset, SplitPlan, Standardizer};
pub use empirical_bayes::{Criterion, EbConfig, FitReport, SmoothnessCandidate};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, EstimatorSpec, FittedEstimator};
pub use gp_engine::{FittedModel, PosteriorSummary, PriorStructure, StructureKind};
pub use kernels::{LmcKernelSpec, ScalarKernelSpec, Smoothness};
pub use synthgen::{GeneratorConfig, IhdpAnalogConfig, SyntheticModel};
