//! Shape-invariant hazard regression.
//!
//! Fits `λ(t|Z) = λ0(t·l(β1Z1))·l(β1Z1)·h(β2Z2(t)) + g(β3Z3(t))`, which
//! combines time-scale, multiplicative and additive covariate effects, with
//! moment-based estimating equations on censored survival data.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curve;
pub mod data;
pub mod error;
pub mod estimating;
pub mod gof;
pub mod hazard;
pub mod io;
pub mod model;
pub mod predict;
pub mod report;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod stats;
mod sweep;
pub mod variance;
pub mod weights;

pub use curve::StepCurve;
pub use data::{CovariateNames, CovariateProfile, Dims, Part, Role, Segment, SubjectRecord, SurvivalDataset};
pub use error::{Error, Result};
pub use estimating::{score, score_with_weights, weighted_mean, Score, ScoreEngine};
pub use gof::{gs_test, ks_test, np_cumhaz, GofReport, GsOptions, GsResult, Kernel, KsOptions, KsResult, QWeight};
pub use hazard::{cumulative_hazard, estimate_baseline, model_hazard, BaselineEstimate, HazardValue, ProfileCumHazard};
pub use io::{load_dataset, parse_dataset, write_dataset, Schema};
pub use model::{BetaVector, Integration, Link, Links, ModelSpec};
pub use weights::{WeightPath, WeightPolicy, WeightScaling};
pub use predict::{default_grid, predict, predict_with_uncertainty, BandOptions, PredictionCurve};
pub use report::{Coefficient, FitReport};
pub use sim::{calibrate_censoring, run_harness, sample_event_time, Baseline, CovariateLaw, HarnessVariance, SimConfig, SimReport};
pub use solver::{refit, solve, Diagnostics, FitResult, Norm, SolverConfig, Variance, VarianceMethod};
pub use variance::{variance_bootstrap, variance_numerical, BootstrapResult};
