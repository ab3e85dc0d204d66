//! Training data in standardized units, plus the transforms that map back
//! to the original units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::GpError;

/// Per-column affine standardization: `z = (x - mean) / scale`.
///
/// `n_fit` records how many training rows the transform was fitted on; a
/// transform attached to a test set must be the one fitted on the training
/// split, so the tag travels with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationTransform {
    means: Vec<f64>,
    scales: Vec<f64>,
    n_fit: usize,
    /// Columns whose standard deviation was zero; their scale degrades to 1
    /// (pure centering).
    #[serde(default)]
    constant_cols: Vec<usize>,
}

impl StandardizationTransform {
    pub fn new(
        means: Vec<f64>,
        scales: Vec<f64>,
        n_fit: usize,
        constant_cols: Vec<usize>,
    ) -> Result<Self, GpError> {
        if means.len() != scales.len() {
            return Err(GpError::Dimensions(format!(
                "{} means vs {} scales",
                means.len(),
                scales.len()
            )));
        }
        if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(GpError::InvalidInput(
                "standardization scales must be strictly positive".to_string(),
            ));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(GpError::InvalidInput(
                "standardization means must be finite".to_string(),
            ));
        }
        Ok(StandardizationTransform {
            means,
            scales,
            n_fit,
            constant_cols,
        })
    }

    /// Re-check the constructor invariants (used after deserialization).
    pub fn validate(&self) -> Result<(), GpError> {
        Self::new(
            self.means.clone(),
            self.scales.clone(),
            self.n_fit,
            self.constant_cols.clone(),
        )
        .map(|_| ())
    }

    /// Identity transform for `dim` columns (mean 0, scale 1).
    pub fn identity(dim: usize) -> Self {
        StandardizationTransform {
            means: vec![0.0; dim],
            scales: vec![1.0; dim],
            n_fit: 0,
            constant_cols: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    pub fn constant_cols(&self) -> &[usize] {
        &self.constant_cols
    }

    pub fn apply_value(&self, col: usize, x: f64) -> f64 {
        (x - self.means[col]) / self.scales[col]
    }

    pub fn invert_value(&self, col: usize, z: f64) -> f64 {
        z * self.scales[col] + self.means[col]
    }

    /// Scale a width/offset quantity (no mean shift) back to original units.
    pub fn invert_width(&self, col: usize, w: f64) -> f64 {
        w * self.scales[col]
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, GpError> {
        if row.len() != self.dim() {
            return Err(GpError::Dimensions(format!(
                "row has {} columns, transform expects {}",
                row.len(),
                self.dim()
            )));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(c, &x)| self.apply_value(c, x))
            .collect())
    }
}

/// A standardized dataset: inputs, targets, feature names, and the
/// transforms that standardized them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    x_transform: StandardizationTransform,
    y_transform: StandardizationTransform,
}

impl Dataset {
    /// Build a dataset, validating shapes and finiteness.
    ///
    /// At least one row is required here; pipeline entry points (CSV load,
    /// splitting, standardization) guarantee two or more.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Vec<String>,
        x_transform: StandardizationTransform,
        y_transform: StandardizationTransform,
    ) -> Result<Self, GpError> {
        if x.nrows() == 0 {
            return Err(GpError::InvalidInput("dataset has no rows".to_string()));
        }
        if x.nrows() != y.len() {
            return Err(GpError::Dimensions(format!(
                "{} input rows vs {} targets",
                x.nrows(),
                y.len()
            )));
        }
        if feature_names.len() != x.ncols() {
            return Err(GpError::Dimensions(format!(
                "{} feature names vs {} columns",
                feature_names.len(),
                x.ncols()
            )));
        }
        if x_transform.dim() != x.ncols() || y_transform.dim() != 1 {
            return Err(GpError::Dimensions(
                "transform dimensions do not match the data".to_string(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(GpError::InvalidInput(
                "dataset contains NaN or infinite entries".to_string(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            x_transform,
            y_transform,
        })
    }

    /// Wrap already-standardized values with identity transforms. Intended
    /// for synthetic data and tests.
    pub fn from_standardized(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self, GpError> {
        let p = x.ncols();
        let names = (0..p).map(|i| format!("f{i}")).collect();
        Dataset::new(
            x,
            y,
            names,
            StandardizationTransform::identity(p),
            StandardizationTransform::identity(1),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn x_transform(&self) -> &StandardizationTransform {
        &self.x_transform
    }

    pub fn y_transform(&self) -> &StandardizationTransform {
        &self.y_transform
    }

    /// Target values mapped back to original units.
    pub fn y_original(&self) -> Vec<f64> {
        self.y
            .iter()
            .map(|&z| self.y_transform.invert_value(0, z))
            .collect()
    }

    /// Row `i` as a slice-backed vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}
