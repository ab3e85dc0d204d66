//! Log-marginal-likelihood maximization over log-space hyperparameters.
//!
//! BFGS ascent (inverse-Hessian secant updates) with a backtracking Armijo
//! line search, restarted from deterministically seeded perturbations of the
//! initial point. Factorization failures inside the line search count as
//! objective -inf and shrink the step; a restart whose *start point* fails
//! to factorize is skipped and recorded.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::{log_marginal_likelihood, lml_with_gradient};
use crate::kernel::{HyperParamVector, KernelExpr};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
/// Largest per-slot move attempted in one step. Log-space slots rarely need
/// moves beyond e^1 per iteration, and uncapped gradient-sized first steps
/// just burn line-search evaluations.
const MAX_STEP_INF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Maximum quasi-Newton iterations per restart.
    pub max_iters: usize,
    /// Convergence threshold on the gradient's max-norm.
    pub grad_tol: f64,
    /// Number of start points (the unperturbed start plus restarts - 1
    /// perturbed ones).
    pub restarts: usize,
    /// Half-width of the uniform perturbation applied per slot on restarts.
    pub restart_scale: f64,
    /// Seed for the restart perturbations.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 200,
            grad_tol: 1e-5,
            restarts: 3,
            restart_scale: 1.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if self.max_iters < 1 {
            return Err(GpError::InvalidInput("max_iters must be >= 1".to_string()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(GpError::InvalidInput("grad_tol must be > 0".to_string()));
        }
        if self.restarts < 1 {
            return Err(GpError::InvalidInput("restarts must be >= 1".to_string()));
        }
        if !(self.restart_scale >= 0.0) {
            return Err(GpError::InvalidInput(
                "restart_scale must be >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a hyperparameter optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub theta_hat: HyperParamVector,
    pub lml_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Which start point won (0 = the unperturbed start).
    pub restart_index: usize,
    /// Start points whose initial factorization failed.
    pub skipped_restarts: Vec<usize>,
}

pub(crate) struct SingleRun {
    theta: HyperParamVector,
    lml: f64,
    iterations: usize,
    converged: bool,
    /// LML at the start point and at every accepted iterate.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) lml_trace: Vec<f64>,
}

/// Maximize the LML from `theta0`, then from seeded perturbations of it,
/// keeping the best result (ties break toward the lower restart index).
pub fn optimize_hyperparams(
    expr: &KernelExpr,
    data: &Dataset,
    theta0: &HyperParamVector,
    config: &OptimizerConfig,
) -> Result<OptResult, GpError> {
    config.validate()?;
    theta0.check_matches(expr)?;

    // Draw every restart offset up front so the outcome does not depend on
    // evaluation order.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![theta0.clone()];
    for _ in 1..config.restarts {
        let values = theta0
            .values()
            .iter()
            .map(|v| v + rng.random_range(-config.restart_scale..=config.restart_scale))
            .collect::<Vec<f64>>();
        starts.push(theta0.with_values(values)?);
    }

    let mut best: Option<(usize, SingleRun)> = None;
    let mut skipped = Vec::new();
    for (index, start) in starts.iter().enumerate() {
        match ascend_from(expr, data, start, config) {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some((_, incumbent)) => run.lml > incumbent.lml,
                };
                if better {
                    best = Some((index, run));
                }
            }
            Err(_) => skipped.push(index),
        }
    }

    match best {
        Some((restart_index, run)) => Ok(OptResult {
            theta_hat: run.theta,
            lml_hat: run.lml,
            iterations: run.iterations,
            converged: run.converged,
            restart_index,
            skipped_restarts: skipped,
        }),
        None => Err(GpError::AllRestartsFailed {
            restarts: config.restarts,
        }),
    }
}

/// One BFGS ascent. Errors only if the start point cannot be evaluated.
pub(crate) fn ascend_from(
    expr: &KernelExpr,
    data: &Dataset,
    start: &HyperParamVector,
    config: &OptimizerConfig,
) -> Result<SingleRun, GpError> {
    let m = start.len();
    let mut theta = DVector::from_column_slice(start.values());
    let (f0, grad0) = lml_with_gradient(expr, start, data)?;
    let mut f = f0;
    let mut grad = DVector::from_vec(grad0);
    let mut h_inv: DMatrix<f64> = DMatrix::identity(m, m);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = grad.amax() < config.grad_tol;
    let mut stalled = 0u32;

    while !converged && iterations < config.max_iters {
        // Ascent direction; reset the curvature model if it stops being one.
        let mut direction = &h_inv * &grad;
        let mut slope = grad.dot(&direction);
        if slope <= 0.0 || !slope.is_finite() {
            h_inv = DMatrix::identity(m, m);
            direction = grad.clone();
            slope = grad.dot(&direction);
        }
        if slope <= 0.0 {
            break; // zero gradient, nothing to do
        }
        let inf_norm = direction.amax();
        if inf_norm > MAX_STEP_INF {
            direction *= MAX_STEP_INF / inf_norm;
            slope = grad.dot(&direction);
        }

        // Backtracking line search on the Armijo condition; a factorization
        // failure counts as -inf and keeps halving.
        let mut step = 1.0;
        let mut accepted: Option<(DVector<f64>, f64, HyperParamVector)> = None;
        for _ in 0..MAX_BACKTRACKS {
            if step * slope < 1e-14 * (1.0 + f.abs()) {
                break; // no meaningful ascent left at this scale
            }
            let candidate = &theta + &direction * step;
            let candidate_theta = start.with_values(candidate.iter().copied().collect())?;
            let value = log_marginal_likelihood(expr, &candidate_theta, data)
                .unwrap_or(f64::NEG_INFINITY);
            if value >= f + ARMIJO_C * step * slope && value.is_finite() {
                accepted = Some((candidate, value, candidate_theta));
                break;
            }
            step *= 0.5;
        }
        let Some((new_theta, new_f, new_vec)) = accepted else {
            break; // no acceptable step in 40 halvings
        };

        let (_, new_grad) = lml_with_gradient(expr, &new_vec, data)?;
        let new_grad = DVector::from_vec(new_grad);

        // BFGS inverse-Hessian update in minimization convention
        // (y = -(g_new - g_old)).
        let s = &new_theta - &theta;
        let y = &grad - &new_grad;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H <- H - rho (H y s' + s y' H) + rho^2 (y'Hy) s s' + rho s s'
            h_inv -= rho * (&hy * s.transpose() + &s * hy.transpose());
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        let improvement = new_f - f;
        theta = new_theta;
        f = new_f;
        grad = new_grad;
        trace.push(f);
        iterations += 1;
        converged = grad.amax() < config.grad_tol;

        // Two consecutive vanishing improvements: the surface is flat at
        // this resolution, stop burning factorizations.
        if improvement < 1e-10 * (1.0 + f.abs()) {
            stalled += 1;
            if stalled >= 2 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(SingleRun {
        theta: start.with_values(theta.iter().copied().collect())?,
        lml: f,
        iterations,
        converged,
        lml_trace: trace,
    })
}

/// Initial hyperparameters for a search candidate.
///
/// Slots inherited from the parent's leaf structure copy the parent's
/// optimized log values, the new leaf's slots start at 0 (raw value 1), and
/// the noise slot copies the parent's. Without a parent (level 1) every slot
/// is 0.
pub fn warm_start_init(
    parent: Option<&OptResult>,
    child_expr: &KernelExpr,
) -> Result<HyperParamVector, GpError> {
    let child_layout = child_expr.layout();
    let Some(parent) = parent else {
        return Ok(HyperParamVector::zeros_for(child_expr));
    };

    let parent_theta = &parent.theta_hat;
    let parent_layout = parent_theta.layout();
    if parent_layout.leaves.len() >= child_layout.leaves.len() {
        return Err(GpError::InvalidInput(format!(
            "child kernel has {} leaves, parent has {}: not an extension",
            child_layout.leaves.len(),
            parent_layout.leaves.len()
        )));
    }
    // The parent's layout must embed as a prefix of the child's.
    for (parent_leaf, child_leaf) in parent_layout.leaves.iter().zip(&child_layout.leaves) {
        if parent_leaf != child_leaf {
            return Err(GpError::Kernel(crate::error::KernelError::LayoutMismatch(
                format!(
                    "leaf {} differs between parent ({}) and child ({})",
                    parent_leaf.leaf_index, parent_leaf.kind, child_leaf.kind
                ),
            )));
        }
    }

    let mut values = vec![0.0; child_layout.len()];
    values[..parent_layout.noise_slot]
        .copy_from_slice(&parent_theta.values()[..parent_layout.noise_slot]);
    values[child_layout.noise_slot] = parent_theta.log_noise();
    Ok(HyperParamVector::new(child_layout, values)?)
}
