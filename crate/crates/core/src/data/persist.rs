//! Model persistence.
//!
//! A trained model serializes to a versioned JSON document holding the
//! kernel grammar string, log-space hyperparameters and their layout, both
//! standardization transforms, and the embedded training data. The Cholesky
//! factor is not stored; loading rebuilds it with the recorded jitter and
//! re-validates the model invariants, so a round trip is prediction-exact.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::{Dataset, StandardizationTransform};
use crate::error::DataError;
use crate::gp::TrainedGP;
use crate::kernel::{format_kernel_expr, parse_kernel_expr, HyperParamVector, LeafSlots, SlotLayout};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    /// Kernel structure in grammar form.
    pub kernel: String,
    /// Log-space hyperparameter values, noise slot last.
    pub theta_log: Vec<f64>,
    /// Slot ranges per leaf, left-to-right.
    pub layout: Vec<LeafSlots>,
    pub noise_slot: usize,
    pub feature_names: Vec<String>,
    pub x_transform: StandardizationTransform,
    pub y_transform: StandardizationTransform,
    /// Training inputs, row-major (`y.len()` rows).
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub jitter_used: f64,
    pub lml_value: f64,
    /// Run provenance attached by the CLI; ignored by the library.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ModelFile {
    pub fn from_model(model: &TrainedGP) -> Self {
        let data = model.dataset();
        let layout = model.theta_hat().layout();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kernel: format_kernel_expr(model.expr()),
            theta_log: model.theta_hat().values().to_vec(),
            layout: layout.leaves.clone(),
            noise_slot: layout.noise_slot,
            feature_names: data.feature_names().to_vec(),
            x_transform: data.x_transform().clone(),
            y_transform: data.y_transform().clone(),
            x: data.x().row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect(),
            y: data.y().iter().copied().collect(),
            jitter_used: model.jitter_used(),
            lml_value: model.lml_value(),
            provenance: None,
        }
    }

    /// Rebuild the model, re-validating every invariant.
    pub fn into_model(self) -> Result<TrainedGP, DataError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(DataError::VersionMismatch {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let expr = parse_kernel_expr(&self.kernel)?;
        let layout = SlotLayout {
            leaves: self.layout,
            noise_slot: self.noise_slot,
        };
        if layout != expr.layout() {
            return Err(DataError::ModelInvalid(format!(
                "stored layout does not match kernel `{}`",
                self.kernel
            )));
        }
        let theta = HyperParamVector::new(layout, self.theta_log)?;

        let n = self.y.len();
        let p = self.feature_names.len();
        if self.x.len() != n * p {
            return Err(DataError::ModelInvalid(format!(
                "X holds {} values, expected {n} x {p}",
                self.x.len()
            )));
        }
        self.x_transform.validate()?;
        self.y_transform.validate()?;
        let x = DMatrix::from_row_slice(n, p, &self.x);
        let y = DVector::from_vec(self.y);
        let dataset = Dataset::new(x, y, self.feature_names, self.x_transform, self.y_transform)?;

        if !self.jitter_used.is_finite() || self.jitter_used < 0.0 {
            return Err(DataError::ModelInvalid(format!(
                "jitter {} is not a valid diagonal shift",
                self.jitter_used
            )));
        }
        let model = TrainedGP::refit_with_jitter(expr, theta, dataset, self.jitter_used)?;
        if (model.lml_value() - self.lml_value).abs() > 1e-10 {
            return Err(DataError::ModelInvalid(format!(
                "stored LML {} disagrees with recomputed {}",
                self.lml_value,
                model.lml_value()
            )));
        }
        Ok(model)
    }
}

/// Serialize a model to pretty JSON at `path` (written atomically).
pub fn save_model(model: &TrainedGP, path: &Path) -> Result<(), DataError> {
    save_model_file(&ModelFile::from_model(model), path)
}

/// Write an already-assembled model document (e.g. with provenance).
pub fn save_model_file(file: &ModelFile, path: &Path) -> Result<(), DataError> {
    let mut bytes = serde_json::to_vec_pretty(file)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Load and validate a model document.
pub fn load_model(path: &Path) -> Result<TrainedGP, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: ModelFile = serde_json::from_slice(&bytes)?;
    file.into_model()
}

/// Write via a temporary file in the same directory plus an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let io_err = |e: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| io_err(std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}
