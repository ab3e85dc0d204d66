//! Point and range prediction quality: RMSE, MAPE, PICP, MPIW.
//!
//! All metrics are computed in original target units; MPIW in particular is
//! only meaningful after de-standardization.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::TrainedGP;

/// Consolidated evaluation of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Root-mean-square error, target units.
    pub rmse: f64,
    /// Mean absolute percentage error, percent.
    pub mape: f64,
    /// Prediction interval coverage probability, percent.
    pub picp: f64,
    /// Mean prediction interval width, target units.
    pub mpiw: f64,
    pub n_test: usize,
    /// Targets excluded from MAPE for being (numerically) zero.
    pub n_excluded_mape: usize,
    /// Nominal two-sided Gaussian coverage for the interval width used,
    /// percent (95.4 for +/- 2 sigma).
    pub nominal_coverage: f64,
}

fn check_equal_lengths(a: usize, b: usize) -> Result<(), GpError> {
    if a != b {
        return Err(GpError::Dimensions(format!(
            "vectors of length {a} and {b}"
        )));
    }
    Ok(())
}

/// Root-mean-square error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64, GpError> {
    check_equal_lengths(y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(GpError::UndefinedMetric("RMSE of empty vectors".to_string()));
    }
    let sum_sq: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok((sum_sq / y_true.len() as f64).sqrt())
}

/// Mean absolute percentage error, excluding targets with
/// `|y_true| <= zero_tol`. Returns the value (percent) and the exclusion
/// count.
pub fn mape(y_true: &[f64], y_pred: &[f64], zero_tol: f64) -> Result<(f64, usize), GpError> {
    check_equal_lengths(y_true.len(), y_pred.len())?;
    let mut sum = 0.0;
    let mut included = 0usize;
    let mut excluded = 0usize;
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.abs() <= zero_tol {
            excluded += 1;
        } else {
            sum += (t - p).abs() / t.abs();
            included += 1;
        }
    }
    if included == 0 {
        return Err(GpError::UndefinedMetric(
            "MAPE undefined: every target is zero within tolerance".to_string(),
        ));
    }
    Ok((100.0 * sum / included as f64, excluded))
}

/// Prediction interval coverage probability in percent; bounds inclusive.
pub fn picp(y_true: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64, GpError> {
    check_equal_lengths(y_true.len(), lower.len())?;
    check_equal_lengths(y_true.len(), upper.len())?;
    if y_true.is_empty() {
        return Err(GpError::UndefinedMetric("PICP of empty vectors".to_string()));
    }
    check_bounds_ordered(lower, upper)?;
    let covered = y_true
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|&(t, (lo, hi))| lo <= t && t <= hi)
        .count();
    Ok(100.0 * covered as f64 / y_true.len() as f64)
}

/// Mean prediction interval width in target units.
pub fn mpiw(lower: &[f64], upper: &[f64]) -> Result<f64, GpError> {
    check_equal_lengths(lower.len(), upper.len())?;
    if lower.is_empty() {
        return Err(GpError::UndefinedMetric("MPIW of empty vectors".to_string()));
    }
    check_bounds_ordered(lower, upper)?;
    let total: f64 = lower.iter().zip(upper).map(|(lo, hi)| hi - lo).sum();
    Ok(total / lower.len() as f64)
}

fn check_bounds_ordered(lower: &[f64], upper: &[f64]) -> Result<(), GpError> {
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if lo > hi {
            return Err(GpError::InvalidInput(format!(
                "crossed interval bounds at index {i}: {lo} > {hi}"
            )));
        }
    }
    Ok(())
}

/// Nominal two-sided Gaussian coverage of a `+/- k sigma` interval, as a
/// percentage rounded to 0.1 (so k = 2 reports 95.4).
pub fn nominal_coverage_percent(k_sigma: f64) -> f64 {
    let raw = 100.0 * libm::erf(k_sigma / std::f64::consts::SQRT_2);
    (raw * 10.0).round() / 10.0
}

/// Predict on the test set and compute all four metrics in original units.
///
/// The test dataset must be standardized with the model's training
/// transforms and share its feature schema.
pub fn evaluate(model: &TrainedGP, test: &Dataset, k_sigma: f64) -> Result<EvalReport, GpError> {
    if test.feature_names() != model.dataset().feature_names() {
        return Err(GpError::Dimensions(format!(
            "test feature schema {:?} does not match the model's {:?}",
            test.feature_names(),
            model.dataset().feature_names()
        )));
    }
    let (mean, lower, upper) = model.predict_original(test.x(), k_sigma)?;
    let y_true = test.y_original();
    let mean: Vec<f64> = mean.iter().copied().collect();
    let lower: Vec<f64> = lower.iter().copied().collect();
    let upper: Vec<f64> = upper.iter().copied().collect();

    let (mape_value, n_excluded) = mape(&y_true, &mean, 1e-12)?;
    Ok(EvalReport {
        rmse: rmse(&y_true, &mean)?,
        mape: mape_value,
        picp: picp(&y_true, &lower, &upper)?,
        mpiw: mpiw(&lower, &upper)?,
        n_test: test.n(),
        n_excluded_mape: n_excluded,
        nominal_coverage: nominal_coverage_percent(k_sigma),
    })
}

/// Render labelled reports as an aligned table with the column order
/// RMSE, MAPE, PICP, MPIW.
pub fn render_report_table(rows: &[(String, EvalReport)]) -> String {
    let mut label_width = "Kernel".len();
    for (label, _) in rows {
        label_width = label_width.max(label.len());
    }
    let mut out = format!(
        "{:<label_width$}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "Kernel", "RMSE", "MAPE (%)", "PICP (%)", "MPIW"
    );
    for (label, report) in rows {
        out.push_str(&format!(
            "{:<label_width$}  {:>10.4}  {:>10.2}  {:>10.2}  {:>10.4}\n",
            label, report.rmse, report.mape, report.picp, report.mpiw
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::kernel::{BaseKernelKind, HyperParamVector, KernelExpr};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 3.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(-4.0..4.0)).collect();
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mean_sq = t
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 50.0;
        assert_abs_diff_eq!(rmse(&t, &p).unwrap(), mean_sq.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn mape_basics() {
        assert_eq!(mape(&[2.0], &[2.0], 1e-12).unwrap(), (0.0, 0));
        assert_eq!(mape(&[2.0], &[1.0], 1e-12).unwrap(), (50.0, 0));
        // A zero target is excluded and counted.
        let (value, excluded) = mape(&[2.0, 0.0], &[1.0, 5.0], 1e-12).unwrap();
        assert_eq!(excluded, 1);
        assert_abs_diff_eq!(value, 50.0, epsilon = 1e-12);
        // All-zero targets leave the metric undefined.
        assert!(matches!(
            mape(&[0.0, 0.0], &[1.0, 1.0], 1e-12),
            Err(GpError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn picp_counts_inclusively() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            picp(&y, &[0.0; 4], &[5.0; 4]).unwrap(),
            100.0
        );
        assert_eq!(
            picp(&y, &[10.0; 4], &[11.0; 4]).unwrap(),
            0.0
        );
        // Exactly half inside; bounds touching the target count as covered.
        let lower = [1.0, 5.0, 2.0, 9.0];
        let upper = [1.0, 6.0, 3.0, 10.0];
        assert_eq!(picp(&y, &lower, &upper).unwrap(), 50.0);
        assert!(picp(&y, &[2.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn mpiw_basics() {
        assert_eq!(mpiw(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mpiw(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lower: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
        let expected = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| u - l)
            .sum::<f64>()
            / 30.0;
        assert_abs_diff_eq!(mpiw(&lower, &upper).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn translation_leaves_metrics_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let lower: Vec<f64> = p.iter().map(|v| v - 1.0).collect();
        let upper: Vec<f64> = p.iter().map(|v| v + 1.0).collect();

        let c = 17.3;
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<f64>>();
        assert_abs_diff_eq!(
            rmse(&y, &p).unwrap(),
            rmse(&shift(&y), &shift(&p)).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            picp(&y, &lower, &upper).unwrap(),
            picp(&shift(&y), &shift(&lower), &shift(&upper)).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            mpiw(&lower, &upper).unwrap(),
            mpiw(&shift(&lower), &shift(&upper)).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn picp_invariant_under_monotone_transform() {
        let y = [0.5, 1.5, 2.5, 3.5, 9.0];
        let lower = [0.0, 2.0, 2.0, 3.0, 5.0];
        let upper = [1.0, 3.0, 3.0, 4.0, 6.0];
        let before = picp(&y, &lower, &upper).unwrap();
        let f = |v: f64| (0.3 * v).exp() + v;
        let map = |v: &[f64]| v.iter().map(|&x| f(x)).collect::<Vec<f64>>();
        let after = picp(&map(&y), &map(&lower), &map(&upper)).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn nominal_coverage_pins_954_at_two_sigma() {
        assert_eq!(nominal_coverage_percent(2.0), 95.4);
        assert_eq!(nominal_coverage_percent(0.0), 0.0);
        assert!(nominal_coverage_percent(3.0) > 99.0);
    }

    #[test]
    fn evaluate_interpolating_model_is_perfect() {
        let expr = KernelExpr::leaf(BaseKernelKind::Se);
        let theta = HyperParamVector::for_expr(&expr, vec![0.0, 0.0, -11.5]).unwrap();
        let x = DMatrix::from_row_slice(4, 1, &[-1.0, 0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.4, -0.2, 0.9, 0.6]);
        let data = Dataset::from_standardized(x, y).unwrap();
        let gp = TrainedGP::fit(expr, theta, data.clone()).unwrap();
        let report = evaluate(&gp, &data, 2.0).unwrap();
        assert!(report.rmse < 1e-6, "rmse {}", report.rmse);
        assert_eq!(report.picp, 100.0);
        assert_eq!(report.nominal_coverage, 95.4);
        assert_eq!(report.n_test, 4);
    }

    #[test]
    fn evaluate_rejects_schema_mismatch() {
        let expr = KernelExpr::leaf(BaseKernelKind::Se);
        let theta = HyperParamVector::zeros_for(&expr);
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let data = Dataset::from_standardized(x.clone(), y.clone()).unwrap();
        let gp = TrainedGP::fit(expr, theta, data).unwrap();

        let other = Dataset::new(
            x,
            y,
            vec!["different".to_string()],
            crate::dataset::StandardizationTransform::identity(1),
            crate::dataset::StandardizationTransform::identity(1),
        )
        .unwrap();
        assert!(evaluate(&gp, &other, 2.0).is_err());
    }

    #[test]
    fn table_columns_follow_report_order() {
        let report = EvalReport {
            rmse: 0.12,
            mape: 2.17,
            picp: 95.43,
            mpiw: 0.41,
            n_test: 100,
            n_excluded_mape: 0,
            nominal_coverage: 95.4,
        };
        let table = render_report_table(&[("Ma5".to_string(), report)]);
        let header = table.lines().next().unwrap();
        let rmse_at = header.find("RMSE").unwrap();
        let mape_at = header.find("MAPE").unwrap();
        let picp_at = header.find("PICP").unwrap();
        let mpiw_at = header.find("MPIW").unwrap();
        assert!(rmse_at < mape_at && mape_at < picp_at && picp_at < mpiw_at);
        assert!(table.contains("Ma5"));
    }
}
