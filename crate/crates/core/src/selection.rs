//! Approximated log model evidence.
//!
//! Three criteria score an optimized kernel, all oriented so that higher is
//! better:
//!
//! * AIC:     `L - m`
//! * BIC:     `L - (m/2) ln n`
//! * Laplace: `L + log p(theta) + (m/2) log 2pi - 1/2 log|H|`
//!
//! where `L` is the optimized log marginal likelihood, `m` the number of
//! hyperparameters (noise slot included), and `H` the negative Hessian of
//! `log(p(y|X,theta) p(theta))` at the optimum. The hyperparameter prior is
//! a standard normal over the log-space slots; the Hessian comes from
//! central differences of the gradient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::lml_gradient;
use crate::kernel::{HyperParamVector, KernelExpr};
use crate::optimize::{optimize_hyperparams, OptResult, OptimizerConfig};

const LN_2PI: f64 = 1.8378770664093453;

/// Default relative step for the finite-difference Hessian.
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-4;

/// Eigenvalue floor applied when the Hessian is not positive definite.
pub const HESSIAN_EIGENVALUE_FLOOR: f64 = 1e-8;

/// Model selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Laplace,
}

pub const ALL_CRITERIA: [Criterion; 3] = [Criterion::Aic, Criterion::Bic, Criterion::Laplace];

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Laplace => "laplace",
        }
    }

    /// Row label used in reports (CK = composite kernel).
    pub fn row_label(self) -> &'static str {
        match self {
            Criterion::Aic => "CK-AIC",
            Criterion::Bic => "CK-BIC",
            Criterion::Laplace => "CK-Lap",
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Criterion {
    type Err = GpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "laplace" => Ok(Criterion::Laplace),
            other => Err(GpError::InvalidInput(format!(
                "unknown criterion `{other}` (expected aic, bic, or laplace)"
            ))),
        }
    }
}

/// An approximated log model evidence value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScore {
    pub value: f64,
    pub criterion: Criterion,
    /// Number of hyperparameters of the scored kernel (noise included).
    pub m: usize,
    /// Laplace only: set when non-positive Hessian eigenvalues were clamped.
    pub hessian_repaired: bool,
}

/// AIC-approximated log evidence: `lml_hat - m`.
pub fn aic_log_evidence(lml_hat: f64, m: usize) -> f64 {
    lml_hat - m as f64
}

/// BIC-approximated log evidence: `lml_hat - (m/2) ln n`.
pub fn bic_log_evidence(lml_hat: f64, m: usize, n: usize) -> f64 {
    lml_hat - 0.5 * m as f64 * (n as f64).ln()
}

/// Standard normal log density over the log-space hyperparameters.
pub fn log_prior(theta: &HyperParamVector) -> f64 {
    let m = theta.len() as f64;
    let norm_sq: f64 = theta.values().iter().map(|v| v * v).sum();
    -0.5 * m * LN_2PI - 0.5 * norm_sq
}

/// Gradient of [`log_prior`]: simply `-theta`.
pub fn log_prior_gradient(theta: &HyperParamVector) -> Vec<f64> {
    theta.values().iter().map(|v| -v).collect()
}

/// Negative Hessian `H = -grad(gradient_fn)` by central differences.
///
/// `gradient_fn` must return the gradient of `log(p(y|X,theta) p(theta))`.
/// Column `j` uses step `h = step * max(1, |theta_j|)`; the result is
/// symmetrized as `(H + H')/2`.
pub fn hessian_fd<F>(
    mut gradient_fn: F,
    theta_hat: &[f64],
    step: f64,
) -> Result<DMatrix<f64>, GpError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, GpError>,
{
    let m = theta_hat.len();
    let mut hessian = DMatrix::zeros(m, m);
    let mut probe = theta_hat.to_vec();
    for j in 0..m {
        let h = step * theta_hat[j].abs().max(1.0);

        probe[j] = theta_hat[j] + h;
        let grad_plus = gradient_fn(&probe)
            .map_err(|e| GpError::Hessian(format!("probe +{h:.1e} on slot {j}: {e}")))?;
        probe[j] = theta_hat[j] - h;
        let grad_minus = gradient_fn(&probe)
            .map_err(|e| GpError::Hessian(format!("probe -{h:.1e} on slot {j}: {e}")))?;
        probe[j] = theta_hat[j];

        if grad_plus.len() != m || grad_minus.len() != m {
            return Err(GpError::Hessian(format!(
                "gradient length {} does not match {m} parameters",
                grad_plus.len()
            )));
        }
        for i in 0..m {
            // Negated: H approximates -d(grad)/dtheta.
            hessian[(i, j)] = -(grad_plus[i] - grad_minus[i]) / (2.0 * h);
        }
    }
    let transposed = hessian.transpose();
    Ok((hessian + transposed) * 0.5)
}

/// Assemble the Laplace log evidence from its pieces.
fn laplace_combine(lml_hat: f64, log_prior_at_opt: f64, m: usize, log_det_h: f64) -> f64 {
    lml_hat + log_prior_at_opt + 0.5 * m as f64 * LN_2PI - 0.5 * log_det_h
}

/// Laplace-approximated log evidence at the optimized hyperparameters.
///
/// `|H|` comes from the eigenvalues of the finite-difference Hessian; any
/// eigenvalue below [`HESSIAN_EIGENVALUE_FLOOR`] is clamped to the floor and
/// the score is flagged as repaired.
pub fn laplace_log_evidence(
    expr: &KernelExpr,
    opt: &OptResult,
    data: &Dataset,
) -> Result<EvidenceScore, GpError> {
    opt.theta_hat.check_matches(expr)?;
    let theta_hat = &opt.theta_hat;
    let m = theta_hat.len();

    let gradient_fn = |values: &[f64]| -> Result<Vec<f64>, GpError> {
        let theta = theta_hat.with_values(values.to_vec())?;
        let mut grad = lml_gradient(expr, &theta, data)?;
        for (g, p) in grad.iter_mut().zip(log_prior_gradient(&theta)) {
            *g += p;
        }
        Ok(grad)
    };
    let hessian = hessian_fd(gradient_fn, theta_hat.values(), DEFAULT_HESSIAN_STEP)?;

    let eigenvalues = hessian.symmetric_eigenvalues();
    let mut repaired = false;
    let mut log_det = 0.0;
    for lambda in eigenvalues.iter() {
        let clamped = if *lambda < HESSIAN_EIGENVALUE_FLOOR {
            repaired = true;
            HESSIAN_EIGENVALUE_FLOOR
        } else {
            *lambda
        };
        log_det += clamped.ln();
    }

    Ok(EvidenceScore {
        value: laplace_combine(opt.lml_hat, log_prior(theta_hat), m, log_det),
        criterion: Criterion::Laplace,
        m,
        hessian_repaired: repaired,
    })
}

/// Score an already-optimized kernel under a criterion.
pub fn score_criterion(
    data: &Dataset,
    expr: &KernelExpr,
    opt: &OptResult,
    criterion: Criterion,
) -> Result<EvidenceScore, GpError> {
    let m = expr.num_hyperparams();
    match criterion {
        Criterion::Aic => Ok(EvidenceScore {
            value: aic_log_evidence(opt.lml_hat, m),
            criterion,
            m,
            hessian_repaired: false,
        }),
        Criterion::Bic => Ok(EvidenceScore {
            value: bic_log_evidence(opt.lml_hat, m, data.n()),
            criterion,
            m,
            hessian_repaired: false,
        }),
        Criterion::Laplace => laplace_log_evidence(expr, opt, data),
    }
}

/// Optimize hyperparameters from `theta0` and score the result. Returns the
/// optimization result alongside the score so children can warm-start.
pub fn approx_model_evidence(
    data: &Dataset,
    expr: &KernelExpr,
    criterion: Criterion,
    theta0: &HyperParamVector,
    opt_config: &OptimizerConfig,
) -> Result<(EvidenceScore, OptResult), GpError> {
    let opt = optimize_hyperparams(expr, data, theta0, opt_config)?;
    let score = score_criterion(data, expr, &opt, criterion)?;
    Ok((score, opt))
}
