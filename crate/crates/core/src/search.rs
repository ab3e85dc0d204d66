//! Greedy level-wise search for a composite kernel.
//!
//! Level 1 scores every base kernel from the all-zeros initialization. Each
//! later level extends the incumbent on the right with `incumbent op base`
//! for every base kernel and operation, warm-starting from the incumbent's
//! optimized hyperparameters. A level's best candidate replaces the
//! incumbent only on strict improvement; otherwise the search terminates
//! early (when enabled) and reports the incumbent. Every candidate lands in
//! an audit trace.
//!
//! Candidates within a level are scored in parallel; selection is by
//! (score, enumeration index), so the outcome does not depend on completion
//! order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::kernel::{format_kernel_expr, BaseKernelKind, KernelExpr, ALL_BASE_KERNELS};
use crate::optimize::{optimize_hyperparams, warm_start_init, OptResult, OptimizerConfig};
use crate::selection::{score_criterion, Criterion, EvidenceScore};

/// Kernel composition operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelOp {
    Sum,
    Product,
}

impl KernelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            KernelOp::Sum => "+",
            KernelOp::Product => "*",
        }
    }
}

pub const ALL_OPS: [KernelOp; 2] = [KernelOp::Sum, KernelOp::Product];

/// Search configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Base kernels, in enumeration order.
    pub base_kernels: Vec<BaseKernelKind>,
    /// Operations, in enumeration order.
    pub operations: Vec<KernelOp>,
    pub criterion: Criterion,
    /// Maximum search level L (level 1 = single base kernels).
    pub max_level: usize,
    pub optimizer: OptimizerConfig,
    /// Stop as soon as a level fails to improve on the incumbent.
    pub early_stop: bool,
}

impl SearchConfig {
    pub fn new(criterion: Criterion) -> Self {
        SearchConfig {
            base_kernels: ALL_BASE_KERNELS.to_vec(),
            operations: ALL_OPS.to_vec(),
            criterion,
            max_level: 3,
            optimizer: OptimizerConfig::default(),
            early_stop: true,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if self.max_level < 1 {
            return Err(GpError::InvalidInput("max_level must be >= 1".to_string()));
        }
        if self.base_kernels.is_empty() {
            return Err(GpError::InvalidInput(
                "base kernel set must not be empty".to_string(),
            ));
        }
        let mut seen = self.base_kernels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.base_kernels.len() {
            return Err(GpError::InvalidInput(
                "base kernel set contains duplicates".to_string(),
            ));
        }
        if self.operations.is_empty() {
            return Err(GpError::InvalidInput(
                "operation set must not be empty".to_string(),
            ));
        }
        self.optimizer.validate()
    }
}

/// One scored (or unscorable) candidate in the audit trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    /// Kernel structure in grammar form.
    pub expr: String,
    /// Approximated log evidence; `None` marks an unscorable candidate
    /// (treated as -inf for selection, never chosen).
    pub score: Option<f64>,
    pub lml_hat: Option<f64>,
    pub m: usize,
    /// Wall-clock seconds spent optimizing and scoring this candidate.
    pub wall_time_s: f64,
    /// Why the candidate was unscorable, when it was.
    pub error: Option<String>,
}

/// All candidates of one level, plus which one the level chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub candidates: Vec<CandidateTrace>,
    /// Index of the level's best candidate (maximal score, ties to the
    /// earliest enumeration position); `None` when nothing was scorable.
    pub chosen_index: Option<usize>,
}

/// Search outcome: the incumbent kernel, its score and optimization result,
/// and the full per-level trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_expr: KernelExpr,
    pub best_score: EvidenceScore,
    pub best_opt: OptResult,
    pub levels: Vec<LevelTrace>,
    pub terminated_early: bool,
    /// The last level evaluated; equal to `max_level` unless the search
    /// stopped early.
    pub terminated_at_level: usize,
}

/// Extend `parent` on the right: `op(parent, Leaf(base))`.
///
/// The parent keeps its slot indices; the new leaf takes fresh trailing
/// slots just before the noise slot.
pub fn create_kernel(parent: &KernelExpr, base: BaseKernelKind, op: KernelOp) -> KernelExpr {
    match op {
        KernelOp::Sum => KernelExpr::sum(parent.clone(), KernelExpr::leaf(base)),
        KernelOp::Product => KernelExpr::product(parent.clone(), KernelExpr::leaf(base)),
    }
}

struct ScoredCandidate {
    expr: KernelExpr,
    score: Option<EvidenceScore>,
    opt: Option<OptResult>,
    trace: CandidateTrace,
}

fn score_candidate(
    data: &Dataset,
    expr: KernelExpr,
    parent: Option<&OptResult>,
    criterion: Criterion,
    optimizer: &OptimizerConfig,
) -> ScoredCandidate {
    let started = Instant::now();
    let outcome = warm_start_init(parent, &expr)
        .and_then(|theta0| optimize_hyperparams(&expr, data, &theta0, optimizer))
        .and_then(|opt| score_criterion(data, &expr, &opt, criterion).map(|s| (s, opt)));
    let wall_time_s = started.elapsed().as_secs_f64();
    let expr_string = format_kernel_expr(&expr);
    let m = expr.num_hyperparams();
    match outcome {
        Ok((score, opt)) => ScoredCandidate {
            trace: CandidateTrace {
                expr: expr_string,
                score: Some(score.value),
                lml_hat: Some(opt.lml_hat),
                m,
                wall_time_s,
                error: None,
            },
            expr,
            score: Some(score),
            opt: Some(opt),
        },
        Err(e) => ScoredCandidate {
            trace: CandidateTrace {
                expr: expr_string,
                score: None,
                lml_hat: None,
                m,
                wall_time_s,
                error: Some(e.to_string()),
            },
            expr,
            score: None,
            opt: None,
        },
    }
}

/// Precomputed level-1 optimization for one base kernel, shareable across
/// criteria (optimization is criterion-independent).
pub(crate) struct Level1Opt {
    expr: KernelExpr,
    opt: Result<OptResult, String>,
    wall_time_s: f64,
}

pub(crate) fn optimize_level1(
    data: &Dataset,
    base_kernels: &[BaseKernelKind],
    optimizer: &OptimizerConfig,
) -> Vec<Level1Opt> {
    base_kernels
        .par_iter()
        .map(|&base| {
            let expr = KernelExpr::leaf(base);
            let started = Instant::now();
            let opt = warm_start_init(None, &expr)
                .and_then(|theta0| optimize_hyperparams(&expr, data, &theta0, optimizer))
                .map_err(|e| e.to_string());
            Level1Opt {
                expr,
                opt,
                wall_time_s: started.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn level1_scored(data: &Dataset, shared: &[Level1Opt], criterion: Criterion) -> Vec<ScoredCandidate> {
    shared
        .iter()
        .map(|entry| {
            let expr_string = format_kernel_expr(&entry.expr);
            let m = entry.expr.num_hyperparams();
            let started = Instant::now();
            let outcome = entry
                .opt
                .as_ref()
                .map_err(|e| GpError::InvalidInput(e.clone()))
                .and_then(|opt| {
                    score_criterion(data, &entry.expr, opt, criterion).map(|s| (s, opt.clone()))
                });
            let wall_time_s = entry.wall_time_s + started.elapsed().as_secs_f64();
            match outcome {
                Ok((score, opt)) => ScoredCandidate {
                    trace: CandidateTrace {
                        expr: expr_string,
                        score: Some(score.value),
                        lml_hat: Some(opt.lml_hat),
                        m,
                        wall_time_s,
                        error: None,
                    },
                    expr: entry.expr.clone(),
                    score: Some(score),
                    opt: Some(opt),
                },
                Err(e) => ScoredCandidate {
                    trace: CandidateTrace {
                        expr: expr_string,
                        score: None,
                        lml_hat: None,
                        m,
                        wall_time_s,
                        error: Some(e.to_string()),
                    },
                    expr: entry.expr.clone(),
                    score: None,
                    opt: None,
                },
            }
        })
        .collect()
}

/// Index of the best-scoring candidate; ties break to the earliest position.
fn pick_best(candidates: &[ScoredCandidate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (index, candidate) in candidates.iter().enumerate() {
        if let Some(score) = &candidate.score {
            let better = match best {
                None => true,
                Some((_, incumbent)) => score.value > incumbent,
            };
            if better {
                best = Some((index, score.value));
            }
        }
    }
    best.map(|(index, _)| index)
}

/// Run the greedy search (Algorithm 1) under one criterion.
pub fn greedy_search(data: &Dataset, config: &SearchConfig) -> Result<SearchResult, GpError> {
    config.validate()?;
    let shared = optimize_level1(data, &config.base_kernels, &config.optimizer);
    greedy_search_with_level1(data, config, &shared)
}

pub(crate) fn greedy_search_with_level1(
    data: &Dataset,
    config: &SearchConfig,
    shared_level1: &[Level1Opt],
) -> Result<SearchResult, GpError> {
    let mut levels = Vec::new();

    // Level 1: exhaustive over base kernels.
    let candidates = level1_scored(data, shared_level1, config.criterion);
    let chosen = pick_best(&candidates);
    levels.push(LevelTrace {
        level: 1,
        candidates: candidates.iter().map(|c| c.trace.clone()).collect(),
        chosen_index: chosen,
    });
    let Some(chosen) = chosen else {
        return Err(GpError::SearchFailed);
    };
    let winner = &candidates[chosen];
    let mut incumbent_expr = winner.expr.clone();
    let mut incumbent_score = winner.score.clone().expect("chosen candidate has a score");
    let mut incumbent_opt = winner.opt.clone().expect("chosen candidate was optimized");

    let mut terminated_early = false;
    let mut terminated_at_level = 1;

    for level in 2..=config.max_level {
        let parent = &incumbent_expr;
        let exprs: Vec<KernelExpr> = config
            .base_kernels
            .iter()
            .flat_map(|&base| {
                config
                    .operations
                    .iter()
                    .map(move |&op| create_kernel(parent, base, op))
            })
            .collect();
        let parent_opt = &incumbent_opt;
        let candidates: Vec<ScoredCandidate> = exprs
            .into_par_iter()
            .map(|expr| {
                score_candidate(
                    data,
                    expr,
                    Some(parent_opt),
                    config.criterion,
                    &config.optimizer,
                )
            })
            .collect();

        let chosen = pick_best(&candidates);
        let improved = chosen.is_some_and(|index| {
            candidates[index]
                .score
                .as_ref()
                .is_some_and(|s| s.value > incumbent_score.value)
        });
        levels.push(LevelTrace {
            level,
            candidates: candidates.iter().map(|c| c.trace.clone()).collect(),
            chosen_index: if improved { chosen } else { None },
        });
        terminated_at_level = level;

        if improved {
            let winner = &candidates[chosen.expect("improved implies chosen")];
            incumbent_expr = winner.expr.clone();
            incumbent_score = winner.score.clone().expect("improved implies scored");
            incumbent_opt = winner.opt.clone().expect("improved implies optimized");
        } else if config.early_stop {
            terminated_early = level < config.max_level;
            break;
        }
    }

    Ok(SearchResult {
        best_expr: incumbent_expr,
        best_score: incumbent_score,
        best_opt: incumbent_opt,
        levels,
        terminated_early,
        terminated_at_level,
    })
}

/// Run one search per configuration, sharing level-1 optimizations when the
/// configurations agree on base kernels and optimizer settings.
///
/// Failures stay per-configuration: each entry of the output is the search
/// result or the error for that configuration alone.
pub fn run_search_session(
    data: &Dataset,
    configs: &[SearchConfig],
) -> Vec<Result<SearchResult, GpError>> {
    let shareable = configs.len() > 1
        && configs.windows(2).all(|pair| {
            pair[0].base_kernels == pair[1].base_kernels
                && pair[0].optimizer == pair[1].optimizer
        });

    if !shareable {
        return configs
            .iter()
            .map(|config| greedy_search(data, config))
            .collect();
    }

    if let Err(e) = configs[0].validate() {
        let message = e.to_string();
        return configs
            .iter()
            .map(|_| Err(GpError::InvalidInput(message.clone())))
            .collect();
    }
    let shared = optimize_level1(data, &configs[0].base_kernels, &configs[0].optimizer);
    configs
        .iter()
        .map(|config| {
            config.validate()?;
            greedy_search_with_level1(data, config, &shared)
        })
        .collect()
}
