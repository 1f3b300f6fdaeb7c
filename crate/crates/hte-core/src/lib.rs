//! Model-agnostic engine for quantifying the out-of-sample predictive value
//! of modeling treatment effect heterogeneity.
//!
//! The engine fits an unrestricted outcome model alongside its closest
//! constant-effect counterpart, scores both on held-out data with a
//! difference of squared errors, and aggregates the per-row differences with
//! nested cross-validation into a confidence interval and an h-value for the
//! predictive gap.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod learners;
pub mod losses;
pub mod ncv;
pub mod restricted;
pub mod seeds;
pub mod simulation;

pub use data::{
    compute_modified_outcomes, load_csv, shift_outcomes, split_folds, write_csv,
    CovariateDataset, CovariateKind, Dataset, FoldAssignment, ModifiedDataset, Propensity,
};
pub use diagnostics::{default_grid, h_value_distribution, partial_dependence, write_pdp_csv};
pub use error::{Error, Result};
pub use losses::{
    diff_sq_loss, evaluate_pair, modified_diff_sq_loss, EvalData, LossKind, LossRecord, Mode,
    PairedModels,
};
pub use ncv::{
    bias_correction, confidence_interval, h_value, one_sided_h_value, raw_mse_estimate, run_ncv,
    run_ncv_with_losses, run_evaluation, run_evaluation_with_losses, train_pair, write_losses_csv,
    AlphaInterval, EvaluationReport, NcvConfig, NcvResult, TaggedLoss, TrainedPair,
};
pub use restricted::{
    closed_form_tau_linear_scalar, estimate_tau_star, fit_restricted, fit_restricted_with,
    restricted_sse, restricted_tau_mo, OptimizerOptions, RestrictedModel, TauSearch,
};
pub use learners::{
    default_penalty_fractions, fit_baseline, fit_unrestricted, CovariateModel, Family,
    FittedModel, Hyperparameters, LearnerSpec, ModelKind, OutcomeModel, TrainingMeta, Tuning,
};
pub use simulation::{
    coverage_study, generate, oracle_estimand, write_coverage_csv, CoverageReport, GeneratorKind,
    GeneratorSpec, ReplicationRecord,
};
