//! Gaussian process regression with a compositional kernel algebra and an
//! automatic greedy kernel search scored by approximated log model evidence
//! (AIC, BIC, Laplace).
//!
//! The pieces, bottom up:
//!
//! * [`kernel`] — base kernels, composite expression trees, analytic
//!   log-space gradients, and the kernel grammar (`"(Ma5 + Ma5) * Ma5"`).
//! * [`gp`] — Gram matrices, jittered Cholesky, log marginal likelihood and
//!   its gradient, posterior prediction and intervals.
//! * [`optimize`] — multi-restart quasi-Newton LML maximization and
//!   warm-start initialization for search candidates.
//! * [`selection`] — AIC/BIC/Laplace approximations of the log model
//!   evidence, including the finite-difference Hessian the Laplace form
//!   needs.
//! * [`search`] — the greedy level-wise kernel search with a full audit
//!   trace.
//! * [`metrics`] — RMSE, MAPE, PICP, MPIW, and consolidated evaluation.
//! * [`data`] — CSV ingestion, lag/calendar features, stratified and
//!   temporal splits, standardization, and model persistence.

pub mod data;
pub mod dataset;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod metrics;
pub mod optimize;
pub mod search;
pub mod selection;

pub use data::{
    load_csv, load_model, make_lag_features, parse_timestamp_str, save_model, standardize_apply,
    standardize_fit, stratified_split, temporal_split, write_atomic, CalendarFeatures, CsvSchema,
    ModelFile, RawTable, SplitPlan, MODEL_FORMAT_VERSION,
};
pub use dataset::{Dataset, StandardizationTransform};
pub use error::{DataError, GpError, KernelError};
pub use gp::{
    chol_with_jitter, gram_matrix, gram_matrix_symmetric, log_marginal_likelihood, lml_gradient,
    lml_with_gradient, TrainedGP,
};
pub use kernel::{
    eval_base, eval_expr, format_kernel_expr, grad_expr, parse_kernel_expr, BaseKernelKind,
    HyperParamVector, KernelExpr, LeafSlots, SlotLayout, SlotRange, ALL_BASE_KERNELS,
};
pub use metrics::{
    evaluate, mape, mpiw, nominal_coverage_percent, picp, render_report_table, rmse, EvalReport,
};
pub use optimize::{optimize_hyperparams, warm_start_init, OptResult, OptimizerConfig};
pub use search::{
    create_kernel, greedy_search, run_search_session, CandidateTrace, KernelOp, LevelTrace,
    SearchConfig, SearchResult, ALL_OPS,
};
pub use selection::{
    aic_log_evidence, approx_model_evidence, bic_log_evidence, hessian_fd, laplace_log_evidence,
    log_prior, log_prior_gradient, score_criterion, Criterion, EvidenceScore, ALL_CRITERIA,
};
