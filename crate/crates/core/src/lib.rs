//! Estimators for human-computer synergy: ratio-of-means effect sizes with
//! bound transforms, interval estimates for ratios, a log-scale
//! random-intercept regression, a cost model, review-table auditing and a
//! simulator for validating the estimators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod optim;
pub mod regression;
pub mod review;
pub mod simulator;
pub mod stats;

pub use cost::{subject_cost, Amount, CostParams, CostRecord};
pub use error::{Result, SynergyError};
pub use inference::{
    accuracy_check, normal_critical, pearson_r, proportion_test, proportion_z, ratio_ci, ratio_ci_with, AccuracyCheck,
    CiMethod, Critical, Design, ProportionTestResult, RatioCI, SampleSummary,
};
pub use metrics::{
    compute_rho, compute_rho_hat, odds_to_unit, transform_lower, transform_lower_only, transform_pipeline,
    transform_upper, Baseline, Direction, MetricSpec, PerformanceTriple, RatioResult, RatioValue,
};
pub use regression::{
    filter_successful, fit_lmm, fit_lmm_with, fit_ols, fit_ols_with_level, load_long_csv, read_long_csv,
    scores_from_records, write_long_csv, Coefficient, Effect, FitMethod, LmmOptions, LongRecord, RandomEffect,
    RegressionFit,
};
pub use review::{
    audit_dataset, audit_row, bundled_dataset, load_dataset, read_dataset, subset_by_direction, subset_top_per_study,
    summarize, write_dataset, AuditReport, ReviewSummary, Selection, StudyRecord, Verdict,
};
pub use simulator::{generate, recovery_study, replicate_seed, Estimator, RecoveryReport, SimConfig, StudyDesign};
