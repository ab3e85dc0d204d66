//! Dataset ingestion and preparation: CSV loading, lag/calendar feature
//! construction, train-test splitting, and standardization.
//!
//! The pipeline order is load -> features -> split -> standardize: feature
//! tables stay in raw units until a split exists, and test rows are always
//! standardized with transforms fitted on the training rows alone.

mod persist;

pub use persist::{load_model, save_model, write_atomic, ModelFile, MODEL_FORMAT_VERSION};

use chrono::{Datelike, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{Dataset, StandardizationTransform};
use crate::error::DataError;

/// Column roles in an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns; empty means "every column not otherwise claimed",
    /// in header order.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    pub target_column: String,
    /// Stratification label for stratified splits.
    #[serde(default)]
    pub group_column: Option<String>,
    /// Unit identity (e.g. cell id): all rows of a unit stay on one side of
    /// a stratified split. Without it every row is its own unit.
    #[serde(default)]
    pub unit_column: Option<String>,
    /// ISO-8601 timestamps; required for lag features and temporal splits.
    #[serde(default)]
    pub timestamp_column: Option<String>,
}

impl CsvSchema {
    pub fn new(target_column: impl Into<String>) -> Self {
        CsvSchema {
            feature_columns: Vec::new(),
            target_column: target_column.into(),
            group_column: None,
            unit_column: None,
            timestamp_column: None,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut names: Vec<&String> = self.feature_columns.iter().collect();
        names.push(&self.target_column);
        names.extend(self.group_column.iter());
        names.extend(self.unit_column.iter());
        names.extend(self.timestamp_column.iter());
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "column `{name}` appears in more than one role"
                )));
            }
        }
        if self.target_column.is_empty() {
            return Err(DataError::InvalidSchema(
                "target column name is empty".to_string(),
            ));
        }
        Ok(())
    }
}

/// A split plan, as configured on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitPlan {
    Stratified {
        ratio: f64,
        repeats: usize,
        seed: u64,
    },
    Temporal {
        /// Half-open [start, end).
        train_range: (NaiveDateTime, NaiveDateTime),
        test_range: (NaiveDateTime, NaiveDateTime),
    },
}

impl SplitPlan {
    pub fn validate(&self) -> Result<(), DataError> {
        match self {
            SplitPlan::Stratified { ratio, repeats, .. } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(DataError::Split(format!(
                        "stratified ratio must lie in (0, 1), got {ratio}"
                    )));
                }
                if *repeats < 1 {
                    return Err(DataError::Split("repeats must be >= 1".to_string()));
                }
                Ok(())
            }
            SplitPlan::Temporal {
                train_range,
                test_range,
            } => {
                for (name, range) in [("train", train_range), ("test", test_range)] {
                    if range.0 >= range.1 {
                        return Err(DataError::Split(format!(
                            "{name} range is empty: {} .. {}",
                            range.0, range.1
                        )));
                    }
                }
                let overlap = train_range.0 < test_range.1 && test_range.0 < train_range.1;
                if overlap {
                    return Err(DataError::Split(
                        "train and test ranges overlap".to_string(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Parsed rows in raw (unstandardized) units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    /// Row-major feature values.
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub groups: Option<Vec<String>>,
    pub units: Option<Vec<String>>,
    pub timestamps: Option<Vec<NaiveDateTime>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Select rows by index, preserving order.
    pub fn select(&self, ids: &[usize]) -> RawTable {
        RawTable {
            feature_names: self.feature_names.clone(),
            rows: ids.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: ids.iter().map(|&i| self.targets[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| ids.iter().map(|&i| g[i].clone()).collect()),
            units: self
                .units
                .as_ref()
                .map(|u| ids.iter().map(|&i| u[i].clone()).collect()),
            timestamps: self
                .timestamps
                .as_ref()
                .map(|t| ids.iter().map(|&i| t[i]).collect()),
        }
    }
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    for format in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, format) {
            return Some(t);
        }
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    None
}

/// Parse a timestamp or date string (midnight for bare dates).
pub fn parse_timestamp_str(text: &str) -> Result<NaiveDateTime, DataError> {
    parse_timestamp(text).ok_or_else(|| {
        DataError::Split(format!(
            "`{text}` is not an ISO-8601 timestamp (YYYY-MM-DD[THH:MM:SS])"
        ))
    })
}

/// Load a CSV against a schema.
///
/// Features and the target must parse as finite reals; any offending row is
/// rejected, and the error lists the row numbers (1-based, header excluded).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawTable, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };

    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        let special: Vec<&String> = [
            Some(&schema.target_column),
            schema.group_column.as_ref(),
            schema.unit_column.as_ref(),
            schema.timestamp_column.as_ref(),
        ]
        .into_iter()
        .flatten()
        .collect();
        headers
            .iter()
            .filter(|h| !special.contains(h))
            .cloned()
            .collect()
    } else {
        schema.feature_columns.clone()
    };

    let feature_idx: Vec<usize> = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<_, _>>()?;
    let target_idx = find(&schema.target_column)?;
    let group_idx = schema.group_column.as_deref().map(find).transpose()?;
    let unit_idx = schema.unit_column.as_deref().map(find).transpose()?;
    let ts_idx = schema.timestamp_column.as_deref().map(find).transpose()?;

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut groups = group_idx.map(|_| Vec::new());
    let mut units = unit_idx.map(|_| Vec::new());
    let mut timestamps = ts_idx.map(|_| Vec::new());
    let mut rejected: Vec<(usize, String, String)> = Vec::new();

    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        let row_number = row_number + 1;
        let get = |idx: usize| record.get(idx).unwrap_or("");

        let mut row = Vec::with_capacity(feature_idx.len());
        let mut row_ok = true;
        for (&idx, name) in feature_idx.iter().zip(&feature_names) {
            match parse_real(get(idx)) {
                Some(v) => row.push(v),
                None => {
                    rejected.push((row_number, name.clone(), bad_value(get(idx))));
                    row_ok = false;
                }
            }
        }
        let target = match parse_real(get(target_idx)) {
            Some(v) => v,
            None => {
                rejected.push((
                    row_number,
                    schema.target_column.clone(),
                    bad_value(get(target_idx)),
                ));
                row_ok = false;
                0.0
            }
        };
        let ts = match ts_idx {
            Some(idx) => match parse_timestamp(get(idx)) {
                Some(t) => Some(t),
                None => {
                    rejected.push((
                        row_number,
                        schema.timestamp_column.clone().unwrap(),
                        bad_value(get(idx)),
                    ));
                    row_ok = false;
                    None
                }
            },
            None => None,
        };
        if !row_ok {
            continue;
        }

        rows.push(row);
        targets.push(target);
        if let (Some(groups), Some(idx)) = (groups.as_mut(), group_idx) {
            groups.push(get(idx).to_string());
        }
        if let (Some(units), Some(idx)) = (units.as_mut(), unit_idx) {
            units.push(get(idx).to_string());
        }
        if let (Some(timestamps), Some(t)) = (timestamps.as_mut(), ts) {
            timestamps.push(t);
        }
    }

    if !rejected.is_empty() {
        return Err(DataError::RowsRejected(rejected));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyTable(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    Ok(RawTable {
        feature_names,
        rows,
        targets,
        groups,
        units,
        timestamps,
    })
}

fn parse_real(text: &str) -> Option<f64> {
    let v: f64 = text.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn bad_value(text: &str) -> String {
    if text.trim().is_empty() {
        "missing value".to_string()
    } else {
        format!("unparseable value `{}`", text.trim())
    }
}

/// Which calendar features to attach to lag rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    pub week_of_year: bool,
    pub day_of_week: bool,
    pub hour_of_day: bool,
}

impl Default for CalendarFeatures {
    fn default() -> Self {
        CalendarFeatures {
            week_of_year: true,
            day_of_week: true,
            hour_of_day: true,
        }
    }
}

impl CalendarFeatures {
    pub fn none() -> Self {
        CalendarFeatures {
            week_of_year: false,
            day_of_week: false,
            hour_of_day: false,
        }
    }
}

/// Build one-step-ahead lag rows from an hourly series.
///
/// Row `t` carries features `[P(t-n_lags+1) .. P(t)]` plus the enabled
/// calendar features at time `t` (integer-coded; standardized later like any
/// other column), with target `P(t+1)`. The attached timestamp is the
/// target's. A series of length `len` yields `len - n_lags` rows; gaps or
/// non-hourly spacing are rejected.
pub fn make_lag_features(
    series: &[(NaiveDateTime, f64)],
    n_lags: usize,
    calendar: CalendarFeatures,
) -> Result<RawTable, DataError> {
    if n_lags < 1 {
        return Err(DataError::Series("n_lags must be >= 1".to_string()));
    }
    if series.len() < n_lags + 1 {
        return Err(DataError::Series(format!(
            "series has {} points; lag construction needs at least {}",
            series.len(),
            n_lags + 1
        )));
    }
    for (i, pair) in series.windows(2).enumerate() {
        let delta = pair[1].0 - pair[0].0;
        if delta != chrono::Duration::hours(1) {
            return Err(DataError::Series(format!(
                "series must be strictly hourly; step {} -> {} at index {i}",
                pair[0].0, pair[1].0
            )));
        }
    }

    let mut feature_names: Vec<String> = (0..n_lags)
        .map(|k| format!("lag_{}", n_lags - 1 - k))
        .collect();
    if calendar.week_of_year {
        feature_names.push("week_of_year".to_string());
    }
    if calendar.day_of_week {
        feature_names.push("day_of_week".to_string());
    }
    if calendar.hour_of_day {
        feature_names.push("hour_of_day".to_string());
    }

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut timestamps = Vec::new();
    for t in (n_lags - 1)..(series.len() - 1) {
        let mut row: Vec<f64> = series[t + 1 - n_lags..=t].iter().map(|(_, v)| *v).collect();
        let now = series[t].0;
        if calendar.week_of_year {
            row.push(now.iso_week().week() as f64);
        }
        if calendar.day_of_week {
            row.push(now.weekday().number_from_monday() as f64);
        }
        if calendar.hour_of_day {
            row.push(now.hour() as f64);
        }
        rows.push(row);
        targets.push(series[t + 1].1);
        timestamps.push(series[t + 1].0);
    }

    Ok(RawTable {
        feature_names,
        rows,
        targets,
        groups: None,
        units: None,
        timestamps: Some(timestamps),
    })
}

/// Stratified split by unit.
///
/// `strata[i]` and `units[i]` label row `i`. Within each stratum the units
/// are shuffled with a seeded generator and split at `round(ratio * count)`
/// with at least one unit per side; all rows of a unit travel together.
/// Returns sorted (train ids, test ids).
pub fn stratified_split(
    strata: &[String],
    units: &[String],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if strata.len() != units.len() {
        return Err(DataError::Split(format!(
            "{} stratum labels vs {} unit labels",
            strata.len(),
            units.len()
        )));
    }
    if strata.is_empty() {
        return Err(DataError::EmptyTable("nothing to split".to_string()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Split(format!(
            "ratio must lie in (0, 1), got {ratio}"
        )));
    }

    // stratum -> unit -> rows, with deterministic (sorted) ordering.
    let mut by_stratum: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, (stratum, unit)) in strata.iter().zip(units).enumerate() {
        by_stratum
            .entry(stratum)
            .or_default()
            .entry(unit)
            .or_default()
            .push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (stratum, unit_map) in &by_stratum {
        let mut unit_names: Vec<&str> = unit_map.keys().copied().collect();
        if unit_names.len() < 2 {
            return Err(DataError::Stratification(format!(
                "stratum `{stratum}` has a single unit; cannot place one on each side"
            )));
        }
        unit_names.shuffle(&mut rng);
        let count = unit_names.len();
        let n_train = ((ratio * count as f64).round() as usize).clamp(1, count - 1);
        for (pos, unit) in unit_names.iter().enumerate() {
            let target = if pos < n_train {
                &mut train_ids
            } else {
                &mut test_ids
            };
            target.extend(unit_map[unit].iter().copied());
        }
    }
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok((train_ids, test_ids))
}

/// Temporal split into half-open timestamp ranges. Rows outside both ranges
/// are dropped.
pub fn temporal_split(
    timestamps: &[NaiveDateTime],
    train_range: (NaiveDateTime, NaiveDateTime),
    test_range: (NaiveDateTime, NaiveDateTime),
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    SplitPlan::Temporal {
        train_range,
        test_range,
    }
    .validate()?;
    let in_range = |t: &NaiveDateTime, range: &(NaiveDateTime, NaiveDateTime)| {
        range.0 <= *t && *t < range.1
    };
    let train: Vec<usize> = timestamps
        .iter()
        .enumerate()
        .filter(|(_, t)| in_range(t, &train_range))
        .map(|(i, _)| i)
        .collect();
    let test: Vec<usize> = timestamps
        .iter()
        .enumerate()
        .filter(|(_, t)| in_range(t, &test_range))
        .map(|(i, _)| i)
        .collect();
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Split(format!(
            "temporal split leaves {} train and {} test rows",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

fn column_stats(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64, bool) {
    let mean = values.clone().sum::<f64>() / n as f64;
    // Population (divide-by-n) standard deviation, fixed for reproducibility.
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd > 0.0 {
        (mean, sd, false)
    } else {
        (mean, 1.0, true)
    }
}

/// Fit standardization on training rows and return the standardized dataset
/// with its transforms embedded. Constant columns degrade to centering
/// (scale 1) and are flagged on the transform.
pub fn standardize_fit(table: &RawTable) -> Result<Dataset, DataError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(DataError::EmptyTable(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let p = table.feature_names.len();

    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut constant_cols = Vec::new();
    for c in 0..p {
        let (mean, scale, constant) = column_stats(table.rows.iter().map(|row| row[c]), n);
        means.push(mean);
        scales.push(scale);
        if constant {
            constant_cols.push(c);
        }
    }
    let x_transform = StandardizationTransform::new(means, scales, n, constant_cols)?;

    let (y_mean, y_scale, y_constant) = column_stats(table.targets.iter().copied(), n);
    let y_transform = StandardizationTransform::new(
        vec![y_mean],
        vec![y_scale],
        n,
        if y_constant { vec![0] } else { vec![] },
    )?;

    build_dataset(&x_transform, &y_transform, table)
}

/// Standardize rows with transforms fitted elsewhere (on the training
/// split); feature names are carried through unchanged.
pub fn standardize_apply(
    x_transform: &StandardizationTransform,
    y_transform: &StandardizationTransform,
    table: &RawTable,
) -> Result<Dataset, DataError> {
    if table.n_rows() == 0 {
        return Err(DataError::EmptyTable("no rows to standardize".to_string()));
    }
    build_dataset(x_transform, y_transform, table)
}

fn build_dataset(
    x_transform: &StandardizationTransform,
    y_transform: &StandardizationTransform,
    table: &RawTable,
) -> Result<Dataset, DataError> {
    let n = table.n_rows();
    let p = table.feature_names.len();
    if x_transform.dim() != p {
        return Err(DataError::InvalidSchema(format!(
            "transform covers {} columns, table has {p}",
            x_transform.dim()
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| x_transform.apply_value(j, table.rows[i][j]));
    let y = DVector::from_fn(n, |i, _| y_transform.apply_value(0, table.targets[i]));
    Ok(Dataset::new(
        x,
        y,
        table.feature_names.clone(),
        x_transform.clone(),
        y_transform.clone(),
    )?)
}
