//! Compositional kernel algebra.
//!
//! Five base kernels (SE, Ma5, Pe, Lin, RQ) are combined into binary
//! expression trees with sum and product nodes. Hyperparameters live in a
//! flat log-space vector whose slots map onto the tree's leaves
//! (left-to-right) plus one trailing noise slot; exponentiation keeps every
//! raw parameter strictly positive without constrained optimization.

mod grammar;

pub use grammar::{format_kernel_expr, parse_kernel_expr};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::KernelError;

/// The five base kernels.
///
/// The declaration order is the canonical order (SE < Ma5 < Pe < Lin < RQ)
/// used for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaseKernelKind {
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "Ma5")]
    Ma5,
    #[serde(rename = "Pe")]
    Pe,
    #[serde(rename = "Lin")]
    Lin,
    #[serde(rename = "RQ")]
    Rq,
}

/// All base kernels in canonical order.
pub const ALL_BASE_KERNELS: [BaseKernelKind; 5] = [
    BaseKernelKind::Se,
    BaseKernelKind::Ma5,
    BaseKernelKind::Pe,
    BaseKernelKind::Lin,
    BaseKernelKind::Rq,
];

impl BaseKernelKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKernelKind::Se => "SE",
            BaseKernelKind::Ma5 => "Ma5",
            BaseKernelKind::Pe => "Pe",
            BaseKernelKind::Lin => "Lin",
            BaseKernelKind::Rq => "RQ",
        }
    }

    /// Number of log-space hyperparameter slots the kernel owns.
    ///
    /// SE and Ma5 take (log l, log sigma_f); Pe takes (log l, log p,
    /// log sigma_f); Lin takes (log sigma_f); RQ takes (log l, log alpha,
    /// log sigma_f).
    pub fn slot_count(self) -> usize {
        match self {
            BaseKernelKind::Se | BaseKernelKind::Ma5 => 2,
            BaseKernelKind::Pe | BaseKernelKind::Rq => 3,
            BaseKernelKind::Lin => 1,
        }
    }

    /// Raw parameter names, in slot order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            BaseKernelKind::Se | BaseKernelKind::Ma5 => &["length_scale", "signal_scale"],
            BaseKernelKind::Pe => &["length_scale", "period", "signal_scale"],
            BaseKernelKind::Lin => &["signal_scale"],
            BaseKernelKind::Rq => &["length_scale", "shape", "signal_scale"],
        }
    }

    /// Stationary kernels depend only on x - x'; Lin is the one exception.
    pub fn is_stationary(self) -> bool {
        !matches!(self, BaseKernelKind::Lin)
    }
}

impl std::fmt::Display for BaseKernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaseKernelKind {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_BASE_KERNELS
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KernelError::UnknownKernel {
                name: s.to_string(),
                offset: 0,
            })
    }
}

/// A composite-kernel expression tree.
///
/// Leaves are base kernels; internal nodes add or multiply their children.
/// Hyperparameter slots are assigned to leaves left-to-right (depth-first),
/// so extending a tree on the right leaves every existing slot index
/// unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KernelExpr {
    Leaf(BaseKernelKind),
    Sum(Box<KernelExpr>, Box<KernelExpr>),
    Product(Box<KernelExpr>, Box<KernelExpr>),
}

impl KernelExpr {
    pub fn leaf(kind: BaseKernelKind) -> Self {
        KernelExpr::Leaf(kind)
    }

    pub fn sum(left: KernelExpr, right: KernelExpr) -> Self {
        KernelExpr::Sum(Box::new(left), Box::new(right))
    }

    pub fn product(left: KernelExpr, right: KernelExpr) -> Self {
        KernelExpr::Product(Box::new(left), Box::new(right))
    }

    /// Leaf kinds in left-to-right order.
    pub fn leaves(&self) -> Vec<BaseKernelKind> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<BaseKernelKind>) {
        match self {
            KernelExpr::Leaf(kind) => out.push(*kind),
            KernelExpr::Sum(l, r) | KernelExpr::Product(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            KernelExpr::Leaf(_) => 1,
            KernelExpr::Sum(l, r) | KernelExpr::Product(l, r) => l.leaf_count() + r.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            KernelExpr::Leaf(_) => 1,
            KernelExpr::Sum(l, r) | KernelExpr::Product(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Slot layout for this expression: one contiguous range per leaf in
    /// left-to-right order, then the noise slot.
    pub fn layout(&self) -> SlotLayout {
        let mut leaves = Vec::with_capacity(self.leaf_count());
        let mut offset = 0;
        for (leaf_index, kind) in self.leaves().into_iter().enumerate() {
            let count = kind.slot_count();
            leaves.push(LeafSlots {
                leaf_index,
                kind,
                slots: SlotRange {
                    start: offset,
                    count,
                },
            });
            offset += count;
        }
        SlotLayout {
            leaves,
            noise_slot: offset,
        }
    }

    /// Total number of hyperparameters, including the noise slot.
    pub fn num_hyperparams(&self) -> usize {
        self.leaves().iter().map(|k| k.slot_count()).sum::<usize>() + 1
    }

    /// True iff the kernel is invariant to translations in input space.
    ///
    /// Sums and products of stationary kernels are stationary, so this holds
    /// exactly when no leaf is Lin.
    pub fn is_stationary(&self) -> bool {
        self.leaves().iter().all(|k| k.is_stationary())
    }
}

impl std::fmt::Display for KernelExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_kernel_expr(self))
    }
}

impl std::str::FromStr for KernelExpr {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_kernel_expr(s)
    }
}

// Kernel expressions persist as their grammar string.
impl Serialize for KernelExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_kernel_expr(self))
    }
}

impl<'de> Deserialize<'de> for KernelExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_kernel_expr(&text).map_err(D::Error::custom)
    }
}

/// A contiguous range of hyperparameter slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange {
    pub start: usize,
    pub count: usize,
}

impl SlotRange {
    pub fn end(&self) -> usize {
        self.start + self.count
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Slot assignment for one leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafSlots {
    pub leaf_index: usize,
    pub kind: BaseKernelKind,
    pub slots: SlotRange,
}

/// Mapping from expression leaves to slot ranges, plus the noise slot.
///
/// Leaf ranges are disjoint and contiguous from slot 0; the noise slot is
/// always last, so the total vector length is `noise_slot + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotLayout {
    pub leaves: Vec<LeafSlots>,
    pub noise_slot: usize,
}

impl SlotLayout {
    /// Total slot count including the noise slot.
    pub fn len(&self) -> usize {
        self.noise_slot + 1
    }

    pub fn is_empty(&self) -> bool {
        false // there is always at least the noise slot
    }

    /// Check internal consistency: ranges contiguous from 0, noise slot last.
    pub fn validate(&self) -> Result<(), KernelError> {
        let mut offset = 0;
        for (i, leaf) in self.leaves.iter().enumerate() {
            if leaf.leaf_index != i {
                return Err(KernelError::LayoutMismatch(format!(
                    "leaf {i} has leaf_index {}",
                    leaf.leaf_index
                )));
            }
            if leaf.slots.start != offset || leaf.slots.count != leaf.kind.slot_count() {
                return Err(KernelError::LayoutMismatch(format!(
                    "leaf {i} ({}) expected slots [{offset}, {}), found [{}, {})",
                    leaf.kind,
                    offset + leaf.kind.slot_count(),
                    leaf.slots.start,
                    leaf.slots.end()
                )));
            }
            offset += leaf.slots.count;
        }
        if self.noise_slot != offset {
            return Err(KernelError::LayoutMismatch(format!(
                "noise slot {} should be {offset}",
                self.noise_slot
            )));
        }
        Ok(())
    }
}

/// Flat log-space hyperparameter vector with its slot layout.
///
/// All stored values are natural logs of the raw parameters; the last slot
/// is log sigma_eps (observation noise standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParamVector {
    values: Vec<f64>,
    layout: SlotLayout,
}

impl HyperParamVector {
    pub fn new(layout: SlotLayout, values: Vec<f64>) -> Result<Self, KernelError> {
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(KernelError::LayoutMismatch(format!(
                "{} values for a layout of {} slots",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::LayoutMismatch(
                "non-finite hyperparameter value".to_string(),
            ));
        }
        Ok(HyperParamVector { values, layout })
    }

    /// All-zero log values (raw parameters = 1) for an expression.
    pub fn zeros_for(expr: &KernelExpr) -> Self {
        let layout = expr.layout();
        let values = vec![0.0; layout.len()];
        HyperParamVector { values, layout }
    }

    pub fn for_expr(expr: &KernelExpr, values: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(expr.layout(), values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &SlotLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn noise_slot(&self) -> usize {
        self.layout.noise_slot
    }

    pub fn log_noise(&self) -> f64 {
        self.values[self.layout.noise_slot]
    }

    /// Raw noise variance sigma_eps^2.
    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise()).exp()
    }

    pub fn set_value(&mut self, slot: usize, value: f64) {
        self.values[slot] = value;
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(self.layout.clone(), values)
    }

    /// Check that this vector's layout is exactly the layout of `expr`.
    pub fn check_matches(&self, expr: &KernelExpr) -> Result<(), KernelError> {
        if self.layout != expr.layout() {
            return Err(KernelError::LayoutMismatch(format!(
                "hyperparameters laid out for a different expression than `{}`",
                format_kernel_expr(expr)
            )));
        }
        Ok(())
    }
}

/// Squared Euclidean distance and dot product of an input pair.
///
/// Every base kernel is a function of one of these two statistics, so Gram
/// construction computes them once per pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairStats {
    pub r2: f64,
    pub dot: f64,
}

impl PairStats {
    pub fn from_slices(x: &[f64], x_prime: &[f64]) -> Result<Self, KernelError> {
        if x.len() != x_prime.len() {
            return Err(KernelError::DimensionMismatch {
                left: x.len(),
                right: x_prime.len(),
            });
        }
        let mut r2 = 0.0;
        let mut dot = 0.0;
        for (a, b) in x.iter().zip(x_prime.iter()) {
            let d = a - b;
            r2 += d * d;
            dot += a * b;
        }
        Ok(PairStats { r2, dot })
    }
}

/// Evaluate a single base kernel at a pair of points.
///
/// `raw_params` are the raw (already exponentiated) parameters in slot
/// order, ending with the signal scale sigma_f; the result is
/// sigma_f^2 * kappa(r) for the stationary kernels and
/// sigma_f^2 * (x . x') for Lin.
pub fn eval_base(
    kind: BaseKernelKind,
    x: &[f64],
    x_prime: &[f64],
    raw_params: &[f64],
) -> Result<f64, KernelError> {
    if raw_params.len() != kind.slot_count() {
        return Err(KernelError::ParamCount {
            kind: kind.name(),
            expected: kind.slot_count(),
            got: raw_params.len(),
        });
    }
    for (value, name) in raw_params.iter().zip(kind.param_names()) {
        if !(*value > 0.0) || !value.is_finite() {
            return Err(KernelError::NonPositiveParam {
                name,
                value: *value,
            });
        }
    }
    let stats = PairStats::from_slices(x, x_prime)?;
    Ok(base_value(kind, stats, raw_params))
}

/// Base kernel value from pair statistics and raw parameters.
fn base_value(kind: BaseKernelKind, stats: PairStats, raw: &[f64]) -> f64 {
    match kind {
        BaseKernelKind::Se => {
            let (l, sf) = (raw[0], raw[1]);
            sf * sf * (-stats.r2 / (2.0 * l * l)).exp()
        }
        BaseKernelKind::Ma5 => {
            let (l, sf) = (raw[0], raw[1]);
            let r = stats.r2.sqrt();
            let a = 5.0_f64.sqrt() * r / l;
            sf * sf * (1.0 + a + a * a / 3.0) * (-a).exp()
        }
        BaseKernelKind::Pe => {
            let (l, p, sf) = (raw[0], raw[1], raw[2]);
            let r = stats.r2.sqrt();
            let s = (std::f64::consts::PI * r / p).sin();
            sf * sf * (-2.0 * s * s / (l * l)).exp()
        }
        BaseKernelKind::Lin => {
            let sf = raw[0];
            sf * sf * stats.dot
        }
        BaseKernelKind::Rq => {
            let (l, alpha, sf) = (raw[0], raw[1], raw[2]);
            let b = 1.0 + stats.r2 / (2.0 * alpha * l * l);
            sf * sf * b.powf(-alpha)
        }
    }
}

/// Base kernel value plus partial derivatives with respect to each
/// *log-space* slot, written into `grad` (length = slot count).
fn base_value_grad(kind: BaseKernelKind, stats: PairStats, raw: &[f64], grad: &mut [f64]) -> f64 {
    match kind {
        BaseKernelKind::Se => {
            let (l, sf) = (raw[0], raw[1]);
            let value = sf * sf * (-stats.r2 / (2.0 * l * l)).exp();
            grad[0] = value * stats.r2 / (l * l);
            grad[1] = 2.0 * value;
            value
        }
        BaseKernelKind::Ma5 => {
            let (l, sf) = (raw[0], raw[1]);
            let r = stats.r2.sqrt();
            let a = 5.0_f64.sqrt() * r / l;
            let e = (-a).exp();
            let value = sf * sf * (1.0 + a + a * a / 3.0) * e;
            // d/d(log l) = sf^2 * (a^2/3)(1+a) e^{-a}
            grad[0] = sf * sf * (a * a / 3.0) * (1.0 + a) * e;
            grad[1] = 2.0 * value;
            value
        }
        BaseKernelKind::Pe => {
            let (l, p, sf) = (raw[0], raw[1], raw[2]);
            let r = stats.r2.sqrt();
            let u = std::f64::consts::PI * r / p;
            let s = u.sin();
            let value = sf * sf * (-2.0 * s * s / (l * l)).exp();
            grad[0] = value * 4.0 * s * s / (l * l);
            grad[1] = value * 2.0 * u * (2.0 * u).sin() / (l * l);
            grad[2] = 2.0 * value;
            value
        }
        BaseKernelKind::Lin => {
            let sf = raw[0];
            let value = sf * sf * stats.dot;
            grad[0] = 2.0 * value;
            value
        }
        BaseKernelKind::Rq => {
            let (l, alpha, sf) = (raw[0], raw[1], raw[2]);
            let b = 1.0 + stats.r2 / (2.0 * alpha * l * l);
            let value = sf * sf * b.powf(-alpha);
            grad[0] = sf * sf * b.powf(-alpha - 1.0) * stats.r2 / (l * l);
            grad[1] = value * (-alpha * b.ln() + stats.r2 / (2.0 * l * l * b));
            grad[2] = 2.0 * value;
            value
        }
    }
}

/// Evaluate a composite kernel at a pair of points.
pub fn eval_expr(
    expr: &KernelExpr,
    x: &[f64],
    x_prime: &[f64],
    theta: &HyperParamVector,
) -> Result<f64, KernelError> {
    theta.check_matches(expr)?;
    let stats = PairStats::from_slices(x, x_prime)?;
    Ok(eval_pair(expr, stats, theta.values()))
}

/// Exponentiate a full log-space slot vector once, ahead of a pair loop.
pub(crate) fn exp_values(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.exp()).collect()
}

/// Evaluate from precomputed pair statistics; the caller has verified the
/// layout. Used by Gram construction.
pub(crate) fn eval_pair(expr: &KernelExpr, stats: PairStats, values: &[f64]) -> f64 {
    eval_pair_raw(expr, stats, &exp_values(values))
}

/// As [`eval_pair`], but over already-exponentiated slot values.
pub(crate) fn eval_pair_raw(expr: &KernelExpr, stats: PairStats, raw_values: &[f64]) -> f64 {
    let mut offset = 0;
    eval_rec(expr, stats, raw_values, &mut offset)
}

fn eval_rec(expr: &KernelExpr, stats: PairStats, raw_values: &[f64], offset: &mut usize) -> f64 {
    match expr {
        KernelExpr::Leaf(kind) => {
            let count = kind.slot_count();
            let start = *offset;
            *offset += count;
            base_value(*kind, stats, &raw_values[start..start + count])
        }
        KernelExpr::Sum(l, r) => {
            eval_rec(l, stats, raw_values, offset) + eval_rec(r, stats, raw_values, offset)
        }
        KernelExpr::Product(l, r) => {
            eval_rec(l, stats, raw_values, offset) * eval_rec(r, stats, raw_values, offset)
        }
    }
}

/// Partial derivatives of the kernel value with respect to every
/// hyperparameter slot (log-space), including a zero for the noise slot.
pub fn grad_expr(
    expr: &KernelExpr,
    x: &[f64],
    x_prime: &[f64],
    theta: &HyperParamVector,
) -> Result<Vec<f64>, KernelError> {
    theta.check_matches(expr)?;
    let stats = PairStats::from_slices(x, x_prime)?;
    let mut grad = vec![0.0; theta.len()];
    eval_grad_pair(expr, stats, theta.values(), &mut grad);
    Ok(grad)
}

/// Value and slot gradients from precomputed pair statistics. `grad` must be
/// zeroed by the caller and have the full vector length; the noise component
/// is left at zero.
pub(crate) fn eval_grad_pair(
    expr: &KernelExpr,
    stats: PairStats,
    values: &[f64],
    grad: &mut [f64],
) -> f64 {
    eval_grad_pair_raw(expr, stats, &exp_values(values), grad)
}

/// As [`eval_grad_pair`], over already-exponentiated slot values. Gradients
/// are still with respect to the log-space slots.
pub(crate) fn eval_grad_pair_raw(
    expr: &KernelExpr,
    stats: PairStats,
    raw_values: &[f64],
    grad: &mut [f64],
) -> f64 {
    let mut offset = 0;
    eval_grad_rec(expr, stats, raw_values, grad, &mut offset)
}

fn eval_grad_rec(
    expr: &KernelExpr,
    stats: PairStats,
    raw_values: &[f64],
    grad: &mut [f64],
    offset: &mut usize,
) -> f64 {
    match expr {
        KernelExpr::Leaf(kind) => {
            let count = kind.slot_count();
            let start = *offset;
            *offset += count;
            base_value_grad(
                *kind,
                stats,
                &raw_values[start..start + count],
                &mut grad[start..start + count],
            )
        }
        KernelExpr::Sum(l, r) => {
            // Disjoint slots: child gradients land in place.
            eval_grad_rec(l, stats, raw_values, grad, offset)
                + eval_grad_rec(r, stats, raw_values, grad, offset)
        }
        KernelExpr::Product(l, r) => {
            let left_start = *offset;
            let vl = eval_grad_rec(l, stats, raw_values, grad, offset);
            let mid = *offset;
            let vr = eval_grad_rec(r, stats, raw_values, grad, offset);
            let end = *offset;
            // Product rule over disjoint slot ranges.
            for g in &mut grad[left_start..mid] {
                *g *= vr;
            }
            for g in &mut grad[mid..end] {
                *g *= vl;
            }
            vl * vr
        }
    }
}
