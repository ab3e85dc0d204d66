//! Exact GP regression.
//!
//! Everything is routed through a Cholesky factor of the noisy covariance
//! `K_y = K(X, X) + sigma_eps^2 I`; the inverse is never formed for solves.
//! The log marginal likelihood is
//!
//! ```text
//! L = -1/2 y' K_y^{-1} y - 1/2 log|K_y| - n/2 log 2pi
//! ```
//!
//! with `log|K_y| = 2 sum_i log L_ii`, and its gradient per log-space slot is
//! `1/2 tr((alpha alpha' - K_y^{-1}) dK_y/dtheta_j)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::kernel::{self, HyperParamVector, KernelExpr, PairStats};

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance matrix between the rows of `a` and the rows of `b`.
pub fn gram_matrix(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GpError> {
    theta.check_matches(expr)?;
    if a.ncols() != b.ncols() {
        return Err(GpError::Dimensions(format!(
            "inputs have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let raw = kernel::exp_values(theta.values());
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let stats = pair_stats_rows(a, i, b, j);
            k[(i, j)] = kernel::eval_pair_raw(expr, stats, &raw);
        }
    }
    Ok(k)
}

/// Symmetric covariance matrix of the rows of `a` with themselves.
pub fn gram_matrix_symmetric(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    a: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GpError> {
    theta.check_matches(expr)?;
    let n = a.nrows();
    let raw = kernel::exp_values(theta.values());
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let stats = pair_stats_rows(a, i, a, j);
            let v = kernel::eval_pair_raw(expr, stats, &raw);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

fn pair_stats_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> PairStats {
    let mut r2 = 0.0;
    let mut dot = 0.0;
    for c in 0..a.ncols() {
        let (u, v) = (a[(i, c)], b[(j, c)]);
        let d = u - v;
        r2 += d * d;
        dot += u * v;
    }
    PairStats { r2, dot }
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Tries jitter 0 first, then `1e-8 * mean(diag K)` escalating tenfold per
/// failure up to `1e-2 * mean(diag K)`. Returns the lower factor and the
/// jitter that succeeded.
pub fn chol_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), GpError> {
    let (chol, jitter) = chol_with_jitter_inner(k, true)?;
    Ok((chol.l(), jitter))
}

pub(crate) fn chol_with_jitter_inner(
    k: &DMatrix<f64>,
    check_symmetry: bool,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(GpError::Dimensions(format!("{n}x{} is not square", k.ncols())));
    }
    if check_symmetry {
        let mut max_asym = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max_asym = max_asym.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        if max_asym > 1e-10 {
            return Err(GpError::NotSymmetric {
                max_asymmetry: max_asym,
            });
        }
    }

    let mean_diag = k.diagonal().iter().sum::<f64>() / n as f64;
    let mut jitter = 0.0;
    loop {
        let attempt = if jitter == 0.0 {
            k.clone()
        } else {
            let mut shifted = k.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            shifted
        };
        if let Some(chol) = Cholesky::new(attempt) {
            return Ok((chol, jitter));
        }
        jitter = if jitter == 0.0 {
            1e-8 * mean_diag
        } else {
            jitter * 10.0
        };
        if !(jitter > 0.0) || jitter > 1e-2 * mean_diag {
            return Err(GpError::NotPositiveDefinite {
                last_jitter: jitter.max(0.0),
            });
        }
    }
}

/// `K_y = K(X, X) + sigma_eps^2 I` for the dataset under `theta`.
fn noisy_gram(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    data: &Dataset,
) -> Result<DMatrix<f64>, GpError> {
    let mut k = gram_matrix_symmetric(expr, theta, data.x())?;
    let noise = theta.noise_variance();
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    Ok(k)
}

/// Log marginal likelihood of the data under the kernel and hyperparameters.
pub fn log_marginal_likelihood(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    data: &Dataset,
) -> Result<f64, GpError> {
    let k_y = noisy_gram(expr, theta, data)?;
    let (chol, _) = chol_with_jitter_inner(&k_y, false)?;
    Ok(lml_from_chol(&chol, data.y()))
}

fn lml_from_chol(chol: &Cholesky<f64, Dyn>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * LN_2PI
}

/// Gradient of the log marginal likelihood with respect to every log-space
/// hyperparameter slot, the noise slot included
/// (`dK_y/d(log sigma_eps) = 2 sigma_eps^2 I`).
pub fn lml_gradient(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    data: &Dataset,
) -> Result<Vec<f64>, GpError> {
    lml_with_gradient(expr, theta, data).map(|(_, grad)| grad)
}

/// Log marginal likelihood and its gradient from one factorization.
pub fn lml_with_gradient(
    expr: &KernelExpr,
    theta: &HyperParamVector,
    data: &Dataset,
) -> Result<(f64, Vec<f64>), GpError> {
    let k_y = noisy_gram(expr, theta, data)?;
    let (chol, _) = chol_with_jitter_inner(&k_y, false)?;
    let alpha = chol.solve(data.y());
    let k_inv = chol.inverse();

    let n = data.n();
    let m = theta.len();
    let x = data.x();
    let raw = kernel::exp_values(theta.values());
    let mut grad = vec![0.0; m];
    let mut pair_grad = vec![0.0; m];

    // M = alpha alpha' - K_y^{-1}; both M and dK are symmetric, so the
    // off-diagonal terms count twice.
    for i in 0..n {
        for j in i..n {
            let m_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
            let weight = if i == j { 0.5 * m_ij } else { m_ij };
            let stats = pair_stats_rows(x, i, x, j);
            pair_grad[..].fill(0.0);
            kernel::eval_grad_pair_raw(expr, stats, &raw, &mut pair_grad);
            for (g, pg) in grad.iter_mut().zip(pair_grad.iter()) {
                *g += weight * pg;
            }
        }
    }

    // Noise slot: 1/2 tr(M * 2 sigma^2 I) = sigma^2 tr(M).
    let noise = theta.noise_variance();
    let trace_m: f64 = (0..n).map(|i| alpha[i] * alpha[i] - k_inv[(i, i)]).sum();
    grad[theta.noise_slot()] = noise * trace_m;

    let n_f = n as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * data.y().dot(&alpha) - log_det_half - 0.5 * n_f * LN_2PI;
    Ok((lml, grad))
}

/// A fitted GP: kernel structure, optimized hyperparameters, the Cholesky
/// factor of the noisy training covariance, and the training data itself.
#[derive(Debug, Clone)]
pub struct TrainedGP {
    expr: KernelExpr,
    theta_hat: HyperParamVector,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    dataset: Dataset,
    jitter_used: f64,
    lml_value: f64,
}

impl TrainedGP {
    /// Factorize the training covariance and precompute the weight vector.
    pub fn fit(
        expr: KernelExpr,
        theta_hat: HyperParamVector,
        dataset: Dataset,
    ) -> Result<Self, GpError> {
        theta_hat.check_matches(&expr)?;
        let k_y = noisy_gram(&expr, &theta_hat, &dataset)?;
        let (chol, jitter_used) = chol_with_jitter_inner(&k_y, false)?;
        let alpha = chol.solve(dataset.y());
        let lml_value = lml_from_chol(&chol, dataset.y());
        Ok(TrainedGP {
            expr,
            theta_hat,
            chol,
            alpha,
            dataset,
            jitter_used,
            lml_value,
        })
    }

    /// Rebuild from persisted parts using the jitter recorded at fit time
    /// (no escalation ladder, so the factor is reproduced exactly).
    pub fn refit_with_jitter(
        expr: KernelExpr,
        theta_hat: HyperParamVector,
        dataset: Dataset,
        jitter: f64,
    ) -> Result<Self, GpError> {
        theta_hat.check_matches(&expr)?;
        let mut k_y = noisy_gram(&expr, &theta_hat, &dataset)?;
        for i in 0..k_y.nrows() {
            k_y[(i, i)] += jitter;
        }
        let chol = Cholesky::new(k_y).ok_or(GpError::NotPositiveDefinite {
            last_jitter: jitter,
        })?;
        let alpha = chol.solve(dataset.y());
        let lml_value = lml_from_chol(&chol, dataset.y());
        Ok(TrainedGP {
            expr,
            theta_hat,
            chol,
            alpha,
            dataset,
            jitter_used: jitter,
            lml_value,
        })
    }

    pub fn expr(&self) -> &KernelExpr {
        &self.expr
    }

    pub fn theta_hat(&self) -> &HyperParamVector {
        &self.theta_hat
    }

    /// Lower-triangular Cholesky factor of `K_y + jitter I`.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn lml_value(&self) -> f64 {
        self.lml_value
    }

    /// Posterior mean and variance at the given standardized inputs.
    ///
    /// The mean is `K(X*, X) alpha`; the variance per point is
    /// `kappa(x*, x*) - ||v||^2` with `L v = K(X, x*)`, plus the noise
    /// variance when `include_noise` is set. Tiny negative round-off
    /// variances clamp to zero.
    pub fn posterior_predict(
        &self,
        x_star: &DMatrix<f64>,
        include_noise: bool,
    ) -> Result<(DVector<f64>, DVector<f64>), GpError> {
        if x_star.ncols() != self.dataset.p() {
            return Err(GpError::Dimensions(format!(
                "prediction inputs have {} columns, training data has {}",
                x_star.ncols(),
                self.dataset.p()
            )));
        }
        let k_star = gram_matrix(&self.expr, &self.theta_hat, self.dataset.x(), x_star)?;
        let mean = k_star.transpose() * &self.alpha;

        let v = self.chol.l_dirty().solve_lower_triangular(&k_star).ok_or(
            GpError::InvalidInput("triangular solve failed on Cholesky factor".to_string()),
        )?;
        let noise = if include_noise {
            self.theta_hat.noise_variance()
        } else {
            0.0
        };
        let raw = kernel::exp_values(self.theta_hat.values());
        let mut variance = DVector::zeros(x_star.nrows());
        for j in 0..x_star.nrows() {
            let stats = pair_stats_rows(x_star, j, x_star, j);
            let prior = kernel::eval_pair_raw(&self.expr, stats, &raw);
            let explained = v.column(j).norm_squared();
            variance[j] = (prior - explained).max(0.0) + noise;
        }
        Ok((mean, variance))
    }

    /// Prediction interval bounds `mean -/+ k_sigma * sqrt(var + noise)` in
    /// the original target units.
    pub fn predict_intervals(
        &self,
        x_star: &DMatrix<f64>,
        k_sigma: f64,
    ) -> Result<(DVector<f64>, DVector<f64>), GpError> {
        let (_, lower, upper) = self.predict_original(x_star, k_sigma)?;
        Ok((lower, upper))
    }

    /// Mean and interval bounds in original target units.
    pub fn predict_original(
        &self,
        x_star: &DMatrix<f64>,
        k_sigma: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), GpError> {
        if !(k_sigma >= 0.0) {
            return Err(GpError::InvalidInput(format!(
                "k_sigma must be non-negative, got {k_sigma}"
            )));
        }
        let (mean_std, var_std) = self.posterior_predict(x_star, true)?;
        let y_t = self.dataset.y_transform();
        let m = mean_std.len();
        let mut mean = DVector::zeros(m);
        let mut lower = DVector::zeros(m);
        let mut upper = DVector::zeros(m);
        for i in 0..m {
            let mu = y_t.invert_value(0, mean_std[i]);
            let half_width = y_t.invert_width(0, k_sigma * var_std[i].sqrt());
            mean[i] = mu;
            lower[i] = mu - half_width;
            upper[i] = mu + half_width;
        }
        Ok((mean, lower, upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::StandardizationTransform;
    use crate::kernel::{parse_kernel_expr, BaseKernelKind, KernelExpr};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn se() -> KernelExpr {
        KernelExpr::leaf(BaseKernelKind::Se)
    }

    #[test]
    fn gram_single_point_is_unit() {
        let a = DMatrix::from_row_slice(1, 1, &[0.3]);
        let theta = HyperParamVector::zeros_for(&se());
        let k = gram_matrix(&se(), &theta, &a, &a).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_matches_entrywise_eval() {
        let expr = parse_kernel_expr("(Ma5 + Lin) * Pe").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.5..1.5));
        let values: Vec<f64> = (0..expr.num_hyperparams())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let theta = HyperParamVector::for_expr(&expr, values).unwrap();
        let k = gram_matrix_symmetric(&expr, &theta, &a).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let xi: Vec<f64> = a.row(i).iter().copied().collect();
                let xj: Vec<f64> = a.row(j).iter().copied().collect();
                let expected = kernel::eval_expr(&expr, &xi, &xj, &theta).unwrap();
                assert_relative_eq!(k[(i, j)], expected, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn duplicated_rows_need_jitter() {
        let a = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
        let theta = HyperParamVector::zeros_for(&se());
        let k = gram_matrix_symmetric(&se(), &theta, &a).unwrap();
        let (l, jitter) = chol_with_jitter(&k).unwrap();
        assert!(jitter > 0.0);
        let rebuilt = &l * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                let expected = k[(i, j)] + if i == j { jitter } else { 0.0 };
                assert_relative_eq!(rebuilt[(i, j)], expected, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn identity_needs_no_jitter() {
        let k = DMatrix::identity(3, 3);
        let (l, jitter) = chol_with_jitter(&k).unwrap();
        assert_eq!(jitter, 0.0);
        assert_relative_eq!(l, DMatrix::identity(3, 3), max_relative = 1e-14);
    }

    #[test]
    fn rank_one_all_ones_succeeds_with_jitter() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let (l, jitter) = chol_with_jitter(&k).unwrap();
        assert!(jitter > 0.0);
        let rebuilt = &l * l.transpose();
        for i in 0..3 {
            for j in 0..3 {
                let expected = 1.0 + if i == j { jitter } else { 0.0 };
                assert_relative_eq!(rebuilt[(i, j)], expected, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn negative_definite_fails() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, -1.0]));
        assert!(matches!(
            chol_with_jitter(&k),
            Err(GpError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            chol_with_jitter(&k),
            Err(GpError::NotSymmetric { .. })
        ));
    }

    /// Lin at x = 0 contributes nothing, so K_y = sigma_eps^2: with log
    /// sigma_eps = 0 this pins K_y = [1] for scalar-oracle checks.
    fn unit_noise_only_dataset(y0: f64) -> (KernelExpr, HyperParamVector, Dataset) {
        let expr = KernelExpr::leaf(BaseKernelKind::Lin);
        let theta = HyperParamVector::zeros_for(&expr);
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![y0]);
        let data = Dataset::from_standardized(x, y).unwrap();
        (expr, theta, data)
    }

    #[test]
    fn lml_scalar_oracle_zero_target() {
        let (expr, theta, data) = unit_noise_only_dataset(0.0);
        let lml = log_marginal_likelihood(&expr, &theta, &data).unwrap();
        assert_relative_eq!(lml, -0.5 * LN_2PI, max_relative = 1e-14);
    }

    #[test]
    fn lml_scalar_oracle_nonzero_target() {
        let (expr, theta, data) = unit_noise_only_dataset(2.0);
        let lml = log_marginal_likelihood(&expr, &theta, &data).unwrap();
        assert_relative_eq!(lml, -2.0 - 0.5 * LN_2PI, max_relative = 1e-14);
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
    ) -> (KernelExpr, HyperParamVector, Dataset) {
        let exprs = [
            "SE",
            "Ma5",
            "RQ",
            "SE + Lin",
            "Ma5 * Pe",
            "(SE + Pe) * Ma5",
        ];
        let expr = parse_kernel_expr(exprs[rng.random_range(0..exprs.len())]).unwrap();
        let mut values: Vec<f64> = (0..expr.num_hyperparams())
            .map(|_| rng.random_range(-0.8..0.8))
            .collect();
        // Noise floor keeps K_y comfortably positive definite.
        let noise_slot = values.len() - 1;
        values[noise_slot] = rng.random_range(-1.0..0.3);
        let theta = HyperParamVector::for_expr(&expr, values).unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let data = Dataset::from_standardized(x, y).unwrap();
        (expr, theta, data)
    }

    #[test]
    fn lml_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let n = rng.random_range(2..=6);
            let (expr, theta, data) = random_instance(&mut rng, n, 2);
            let lml = log_marginal_likelihood(&expr, &theta, &data).unwrap();

            // Dense oracle: explicit inverse and determinant.
            let mut k_y = gram_matrix_symmetric(&expr, &theta, data.x()).unwrap();
            for i in 0..n {
                k_y[(i, i)] += theta.noise_variance();
            }
            let det = k_y.determinant();
            let k_inv = k_y.try_inverse().unwrap();
            let quad = (data.y().transpose() * &k_inv * data.y())[(0, 0)];
            let expected = -0.5 * quad - 0.5 * det.ln() - 0.5 * n as f64 * LN_2PI;
            assert_abs_diff_eq!(lml, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let (expr, theta, data) = random_instance(&mut rng, 12, 2);
            let grad = lml_gradient(&expr, &theta, &data).unwrap();
            let h = 1e-6;
            for slot in 0..theta.len() {
                let mut plus = theta.values().to_vec();
                plus[slot] += h;
                let mut minus = theta.values().to_vec();
                minus[slot] -= h;
                let lp = log_marginal_likelihood(&expr, &theta.with_values(plus).unwrap(), &data)
                    .unwrap();
                let lm = log_marginal_likelihood(&expr, &theta.with_values(minus).unwrap(), &data)
                    .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (grad[slot] - fd).abs() / denom < 1e-5,
                    "slot {slot}: analytic {} vs fd {fd}",
                    grad[slot]
                );
            }
        }
    }

    #[test]
    fn noise_gradient_positive_for_underestimated_noise() {
        // Three points with non-zero residuals and sigma_eps -> 0: raising
        // the noise must increase the likelihood.
        let expr = se();
        let mut values = vec![0.0, 0.0, -6.0];
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let data = Dataset::from_standardized(x, y).unwrap();
        let theta = HyperParamVector::for_expr(&expr, values.clone()).unwrap();
        let grad = lml_gradient(&expr, &theta, &data).unwrap();
        assert!(
            grad[theta.noise_slot()] > 0.0,
            "noise gradient {}",
            grad[theta.noise_slot()]
        );
        // And far larger noise turns the sign around.
        values[2] = 3.0;
        let theta = HyperParamVector::for_expr(&expr, values).unwrap();
        let grad = lml_gradient(&expr, &theta, &data).unwrap();
        assert!(grad[theta.noise_slot()] < 0.0);
    }

    #[test]
    fn noise_free_gp_interpolates_training_points() {
        let expr = se();
        let theta = HyperParamVector::for_expr(&expr, vec![0.0, 0.0, -11.5]).unwrap();
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, 0.0, 1.0, 2.5]);
        let y = DVector::from_vec(vec![0.3, -0.6, 1.1, 0.4]);
        let data = Dataset::from_standardized(x.clone(), y.clone()).unwrap();
        let gp = TrainedGP::fit(expr, theta, data).unwrap();
        assert_eq!(gp.jitter_used(), 0.0);
        let (mean, var) = gp.posterior_predict(&x, false).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(mean[i], y[i], epsilon = 1e-6);
            assert!(var[i] < 1e-6, "variance {} at training point", var[i]);
        }
    }

    #[test]
    fn far_points_revert_to_prior_variance() {
        let expr = se();
        let theta = HyperParamVector::for_expr(&expr, vec![0.0, 0.0, -2.0]).unwrap();
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let data = Dataset::from_standardized(x, y).unwrap();
        let gp = TrainedGP::fit(expr, theta.clone(), data).unwrap();
        let x_star = DMatrix::from_row_slice(1, 1, &[500.0]);
        let (_, var) = gp.posterior_predict(&x_star, false).unwrap();
        // Prior variance for SE with sigma_f = 1 is 1.
        assert_abs_diff_eq!(var[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn posterior_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            let (expr, theta, data) = random_instance(&mut rng, n, 2);
            let gp = TrainedGP::fit(expr.clone(), theta.clone(), data.clone()).unwrap();
            assert_eq!(gp.jitter_used(), 0.0);
            let x_star = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
            let (mean, var) = gp.posterior_predict(&x_star, true).unwrap();

            let mut k_y = gram_matrix_symmetric(&expr, &theta, data.x()).unwrap();
            for i in 0..n {
                k_y[(i, i)] += theta.noise_variance();
            }
            let k_inv = k_y.try_inverse().unwrap();
            let k_star = gram_matrix(&expr, &theta, data.x(), &x_star).unwrap();
            let mean_dense = k_star.transpose() * &k_inv * data.y();
            let cov_dense = gram_matrix_symmetric(&expr, &theta, &x_star).unwrap()
                - k_star.transpose() * &k_inv * &k_star;
            for i in 0..3 {
                assert_abs_diff_eq!(mean[i], mean_dense[i], epsilon = 1e-9);
                let expected = cov_dense[(i, i)] + theta.noise_variance();
                assert_abs_diff_eq!(var[i], expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let (expr, theta, data) = random_instance(&mut rng, 6, 2);
            let gp = TrainedGP::fit(expr.clone(), theta.clone(), data).unwrap();
            let x_star = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-3.0..3.0));
            let (_, var) = gp.posterior_predict(&x_star, true).unwrap();
            for j in 0..4 {
                let xj: Vec<f64> = x_star.row(j).iter().copied().collect();
                let prior = kernel::eval_expr(&expr, &xj, &xj, &theta).unwrap()
                    + theta.noise_variance();
                assert!(var[j] <= prior + 1e-8);
            }
        }
    }

    #[test]
    fn lml_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (expr, theta, data) = random_instance(&mut rng, 8, 2);
        let lml = log_marginal_likelihood(&expr, &theta, &data).unwrap();

        let perm: Vec<usize> = vec![3, 0, 7, 1, 5, 2, 6, 4];
        let x = DMatrix::from_fn(8, 2, |i, j| data.x()[(perm[i], j)]);
        let y = DVector::from_fn(8, |i, _| data.y()[perm[i]]);
        let permuted = Dataset::from_standardized(x, y).unwrap();
        let lml_perm = log_marginal_likelihood(&expr, &theta, &permuted).unwrap();
        assert_abs_diff_eq!(lml, lml_perm, epsilon = 1e-10);
    }

    #[test]
    fn intervals_degenerate_at_zero_k() {
        let expr = se();
        let theta = HyperParamVector::zeros_for(&expr);
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.5, -0.5, 0.2]);
        let data = Dataset::from_standardized(x.clone(), y).unwrap();
        let gp = TrainedGP::fit(expr, theta, data).unwrap();
        let (mean, lower, upper) = gp.predict_original(&x, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(mean[i], lower[i]);
            assert_eq!(mean[i], upper[i]);
        }
        assert!(gp.predict_original(&x, -1.0).is_err());
    }

    #[test]
    fn interval_width_is_four_sigma_for_unit_variance() {
        // At a faraway point an SE kernel with sigma_f = 1 and tiny noise
        // gives posterior variance 1, so k = 2 intervals have width 4.
        let expr = se();
        let theta = HyperParamVector::for_expr(&expr, vec![0.0, 0.0, -11.5]).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DVector::from_vec(vec![0.1, -0.1]);
        let data = Dataset::from_standardized(x, y).unwrap();
        let gp = TrainedGP::fit(expr, theta, data).unwrap();
        let x_star = DMatrix::from_row_slice(1, 1, &[400.0]);
        let (lower, upper) = gp.predict_intervals(&x_star, 2.0).unwrap();
        assert_abs_diff_eq!(upper[0] - lower[0], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn destandardized_predictions_equivariant_to_target_rescaling() {
        // Affinely rescaling the raw targets before standardization leaves
        // the standardized data unchanged and only moves the y transform, so
        // de-standardized predictions follow the same affine map.
        let expr = se();
        let theta = HyperParamVector::for_expr(&expr, vec![0.2, -0.1, -1.0]).unwrap();
        let x = DMatrix::from_row_slice(5, 1, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let y_std = DVector::from_vec(vec![-0.9, 0.4, -0.2, 1.2, 0.5]);

        let build = |shift: f64, scale: f64| {
            let data = Dataset::new(
                x.clone(),
                y_std.clone(),
                vec!["f0".to_string()],
                StandardizationTransform::identity(1),
                StandardizationTransform::new(vec![shift], vec![scale], 5, vec![]).unwrap(),
            )
            .unwrap();
            TrainedGP::fit(expr.clone(), theta.clone(), data).unwrap()
        };

        let (mu, sigma) = (4.8, 1.3);
        let (a, b) = (2.5, -1.0);
        let gp_orig = build(mu, sigma);
        let gp_scaled = build(a * mu + b, a * sigma);
        let x_star = DMatrix::from_row_slice(3, 1, &[-1.5, 0.3, 2.4]);
        let (mean_o, lower_o, upper_o) = gp_orig.predict_original(&x_star, 2.0).unwrap();
        let (mean_s, lower_s, upper_s) = gp_scaled.predict_original(&x_star, 2.0).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(mean_s[i], a * mean_o[i] + b, epsilon = 1e-6);
            assert_abs_diff_eq!(lower_s[i], a * lower_o[i] + b, epsilon = 1e-6);
            assert_abs_diff_eq!(upper_s[i], a * upper_o[i] + b, epsilon = 1e-6);
        }
    }
}
