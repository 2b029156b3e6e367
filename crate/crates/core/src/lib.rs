//! Extreme quantile regression under proportional conditional tails.
//!
//! The conditional survival function factors as `F̄_x(y) = σ(x) F̄(y)` above a
//! body threshold. This crate provides a synthetic data generator for that
//! model, the tail-index / skedasis / extreme-quantile estimators, an explicit
//! coupling of the exceedance sample with its idealized limit, and a Monte
//! Carlo engine that checks the asymptotic normality of each estimator.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coupling;
pub mod error;
pub mod estimators;
pub mod model;
pub mod montecarlo;

pub use config::KeyValues;
pub use coupling::{
    calibrate_bound_constant, coupling_construction, maximal_coupling_draw,
    thinning_equivalence_test, total_variation_discrete, verify_coupling_report, CouplingDraw,
    CouplingReport, DiscreteDistribution, MaximalCoupling, ThinningOutcome,
};
pub use error::{Error, Result};
pub use estimators::{
    conditional_extreme_quantile, estimate, hill_estimate, integrated_skedasis_estimate,
    kernel_skedasis_estimate, resolve_threshold, weissman_quantile, EstimateReport,
    EstimateRequest, QuantileEstimate, ThresholdResolution, ThresholdSpec,
};
pub use model::{
    normalize_skedasis, CovariateSpec, Provenance, RawSkedasis, SampleSet, SkedasisFamily,
    SkedasisSpec, TailFamily, TailModel,
};
pub use montecarlo::{
    default_schedule, run_experiment, run_experiment_with, Criteria, ExperimentKind, McConfig,
    McReport, NormalityDiagnostics, Schedule,
};
