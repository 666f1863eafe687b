//! Models, feature domains and closeness specifications, plus the checks
//! used to validate candidate bias instances.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integrality tolerance shared by point validation and branch-and-bound.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Outputs with `|f| < LABEL_MARGIN` sit on the decision boundary and carry
/// no label.
pub const LABEL_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature {index}: {reason}")]
    InvalidDomain { index: usize, reason: String },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid threshold for block {block}: {reason}")]
    InvalidThreshold { block: usize, reason: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Discrete,
}

/// Interval domain `[lower, upper]` of one feature, over the reals or the
/// integers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDomain {
    pub lower: f64,
    pub upper: f64,
    pub kind: FeatureKind,
}

impl FeatureDomain {
    pub fn continuous(lower: f64, upper: f64) -> Result<Self, ModelError> {
        Self::new(lower, upper, FeatureKind::Continuous)
    }

    pub fn discrete(lower: i64, upper: i64) -> Result<Self, ModelError> {
        Self::new(lower as f64, upper as f64, FeatureKind::Discrete)
    }

    pub fn new(lower: f64, upper: f64, kind: FeatureKind) -> Result<Self, ModelError> {
        let fail = |reason: &str| ModelError::InvalidDomain {
            index: 0,
            reason: reason.to_string(),
        };
        if !lower.is_finite() || !upper.is_finite() {
            return Err(fail("bounds must be finite"));
        }
        if lower > upper {
            return Err(fail("lower bound exceeds upper bound"));
        }
        if kind == FeatureKind::Discrete && (lower.fract() != 0.0 || upper.fract() != 0.0) {
            return Err(fail("discrete bounds must be integers"));
        }
        Ok(Self { lower, upper, kind })
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == FeatureKind::Discrete
    }

    /// Number of integer values for a discrete feature, `None` when continuous.
    pub fn cardinality(&self) -> Option<u64> {
        self.is_discrete()
            .then(|| (self.upper - self.lower) as u64 + 1)
    }

    /// Integer values of a discrete feature in increasing order.
    pub fn values(&self) -> Vec<f64> {
        match self.cardinality() {
            Some(k) => (0..k).map(|j| self.lower + j as f64).collect(),
            None => Vec::new(),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        if !(value >= self.lower && value <= self.upper) {
            return false;
        }
        match self.kind {
            FeatureKind::Continuous => true,
            FeatureKind::Discrete => (value - value.round()).abs() <= tol,
        }
    }
}

/// Per-block closeness bound. `Infinity` drops the constraint entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Infinity,
}

impl Threshold {
    pub fn admits(&self, diff: f64) -> bool {
        match *self {
            Threshold::Infinity => true,
            Threshold::Finite(eps) => diff.abs() <= eps,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Threshold::Finite(e) if *e == 0.0)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Threshold::Finite(e) => Some(e),
            Threshold::Infinity => None,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(e) => write!(f, "{e}"),
            Threshold::Infinity => write!(f, "inf"),
        }
    }
}

/// Partition of the features into blocks with one closeness threshold per
/// block, plus the output threshold `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    blocks: Vec<Vec<usize>>,
    thresholds: Vec<Threshold>,
    delta: f64,
    // feature index -> block index
    block_of: Vec<usize>,
}

impl PerturbationSpec {
    pub fn new(
        n: usize,
        blocks: Vec<Vec<usize>>,
        thresholds: Vec<Threshold>,
        delta: f64,
    ) -> Result<Self, ModelError> {
        if blocks.len() != thresholds.len() {
            return Err(ModelError::InvalidPartition(format!(
                "{} blocks but {} thresholds",
                blocks.len(),
                thresholds.len()
            )));
        }
        let mut block_of = vec![usize::MAX; n];
        for (j, block) in blocks.iter().enumerate() {
            for &i in block {
                if i >= n {
                    return Err(ModelError::InvalidPartition(format!(
                        "block {j} references feature {i} but there are only {n} features"
                    )));
                }
                if block_of[i] != usize::MAX {
                    return Err(ModelError::InvalidPartition(format!(
                        "feature {i} appears in blocks {} and {j}",
                        block_of[i]
                    )));
                }
                block_of[i] = j;
            }
        }
        if let Some(missing) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(ModelError::InvalidPartition(format!(
                "feature {missing} is not covered by any block"
            )));
        }
        for (j, t) in thresholds.iter().enumerate() {
            if let Threshold::Finite(e) = t {
                if !(e.is_finite() && *e >= 0.0) {
                    return Err(ModelError::InvalidThreshold {
                        block: j,
                        reason: format!("{e} is not a non-negative real"),
                    });
                }
            }
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(ModelError::InvalidThreshold {
                block: usize::MAX,
                reason: format!("delta {delta} must be a non-negative real"),
            });
        }
        Ok(Self {
            blocks,
            thresholds,
            delta,
            block_of,
        })
    }

    /// Single block covering all `n` features.
    pub fn uniform(n: usize, threshold: Threshold, delta: f64) -> Result<Self, ModelError> {
        Self::new(n, vec![(0..n).collect()], vec![threshold], delta)
    }

    /// Protected features are free to change, every other feature is pinned.
    pub fn counterfactual(n: usize, protected: &[usize], delta: f64) -> Result<Self, ModelError> {
        let rest: Vec<usize> = (0..n).filter(|i| !protected.contains(i)).collect();
        let mut blocks = vec![protected.to_vec()];
        let mut thresholds = vec![Threshold::Infinity];
        if !rest.is_empty() {
            blocks.push(rest);
            thresholds.push(Threshold::Finite(0.0));
        }
        Self::new(n, blocks, thresholds, delta)
    }

    pub fn n_features(&self) -> usize {
        self.block_of.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn threshold_of(&self, feature: usize) -> Threshold {
        self.thresholds[self.block_of[feature]]
    }

    pub fn all_pinned(&self) -> bool {
        self.thresholds.iter().all(Threshold::is_zero)
    }
}

/// One `(weight, label, support vector)` term of a kernel expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEntry {
    pub weight: f64,
    pub label: i8,
    pub vector: Vec<f64>,
}

impl KernelEntry {
    pub fn signed_weight(&self) -> f64 {
        self.weight * f64::from(self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    PolyKernel {
        scale: f64,
        offset: f64,
        degree: u32,
        entries: Vec<KernelEntry>,
    },
    RbfKernel {
        gamma: f64,
        entries: Vec<KernelEntry>,
    },
}

impl ModelSpec {
    pub fn n_features(&self) -> Option<usize> {
        match self {
            ModelSpec::Linear { weights, .. } => Some(weights.len()),
            ModelSpec::PolyKernel { entries, .. } | ModelSpec::RbfKernel { entries, .. } => {
                entries.first().map(|e| e.vector.len())
            }
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Linear { .. } => "linear",
            ModelSpec::PolyKernel { .. } => "poly",
            ModelSpec::RbfKernel { .. } => "rbf",
        }
    }

    /// Checks the structural invariants against an input dimension `n`.
    pub fn validate(&self, n: usize) -> Result<(), ModelError> {
        let check_entries = |entries: &[KernelEntry]| -> Result<(), ModelError> {
            for (k, e) in entries.iter().enumerate() {
                if e.vector.len() != n {
                    return Err(ModelError::InvalidModel(format!(
                        "support vector {k} has length {}, expected {n}",
                        e.vector.len()
                    )));
                }
                if e.label != 1 && e.label != -1 {
                    return Err(ModelError::InvalidModel(format!(
                        "support vector {k} has label {}, expected +1 or -1",
                        e.label
                    )));
                }
                if !e.weight.is_finite() || e.vector.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::InvalidModel(format!(
                        "support vector {k} has non-finite data"
                    )));
                }
            }
            Ok(())
        };
        match self {
            ModelSpec::Linear { weights, bias } => {
                if weights.len() != n {
                    return Err(ModelError::DimensionMismatch {
                        expected: n,
                        got: weights.len(),
                    });
                }
                if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(ModelError::InvalidModel("non-finite weights".into()));
                }
                Ok(())
            }
            ModelSpec::PolyKernel {
                scale,
                offset,
                degree,
                entries,
            } => {
                if *degree < 1 {
                    return Err(ModelError::InvalidModel(
                        "kernel degree must be >= 1".into(),
                    ));
                }
                if !scale.is_finite() || !offset.is_finite() {
                    return Err(ModelError::InvalidModel(
                        "non-finite kernel constants".into(),
                    ));
                }
                check_entries(entries)
            }
            ModelSpec::RbfKernel { gamma, entries } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(ModelError::InvalidModel(
                        "rbf gamma must be positive".into(),
                    ));
                }
                check_entries(entries)
            }
        }
    }
}

/// The decision value `f(x)`.
pub fn evaluate(model: &ModelSpec, x: &[f64]) -> Result<f64, ModelError> {
    if let Some(n) = model.n_features() {
        if n != x.len() {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
    }
    Ok(evaluate_unchecked(model, x))
}

pub(crate) fn evaluate_unchecked(model: &ModelSpec, x: &[f64]) -> f64 {
    match model {
        ModelSpec::Linear { weights, bias } => dot(weights, x) + bias,
        ModelSpec::PolyKernel {
            scale,
            offset,
            degree,
            entries,
        } => entries
            .iter()
            .map(|e| e.signed_weight() * (scale * dot(&e.vector, x) + offset).powi(*degree as i32))
            .sum(),
        ModelSpec::RbfKernel { gamma, entries } => entries
            .iter()
            .map(|e| {
                let d2: f64 = e.vector.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                e.signed_weight() * (-gamma * d2).exp()
            })
            .sum(),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `true` iff every coordinate lies in its domain and discrete coordinates
/// are within `tol` of an integer.
pub fn validate_point(domains: &[FeatureDomain], x: &[f64], tol: f64) -> bool {
    domains.len() == x.len() && domains.iter().zip(x).all(|(d, &v)| d.contains(v, tol))
}

/// Closeness of `x` and `x_prime` under the block thresholds.
pub fn is_close(spec: &PerturbationSpec, x: &[f64], x_prime: &[f64]) -> bool {
    if x.len() != spec.n_features() || x_prime.len() != spec.n_features() {
        return false;
    }
    (0..x.len()).all(|i| spec.threshold_of(i).admits(x[i] - x_prime[i]))
}

/// Output semantics used when deciding whether two outputs differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// `|f(x) - f(x')| > delta`.
    Regression,
    /// Predicted labels `sign(f)` differ, with a boundary margin.
    Classification,
}

/// Label of a decision value, `None` on the boundary band `|f| < margin`.
pub fn label_of(value: f64, margin: f64) -> Option<i8> {
    if value >= margin {
        Some(1)
    } else if value <= -margin {
        Some(-1)
    } else {
        None
    }
}

/// Whether two outputs constitute a bias under the given semantics.
pub fn outputs_differ(mode: OutputMode, delta: f64, fx: f64, fx_prime: f64) -> bool {
    match mode {
        OutputMode::Regression => (fx - fx_prime).abs() > delta,
        OutputMode::Classification => matches!(
            (label_of(fx, LABEL_MARGIN), label_of(fx_prime, LABEL_MARGIN)),
            (Some(a), Some(b)) if a != b
        ),
    }
}

/// Full validation of a candidate bias instance: both points valid, the pair
/// close, and the outputs differing.
pub fn check_bias_instance(
    model: &ModelSpec,
    domains: &[FeatureDomain],
    spec: &PerturbationSpec,
    mode: OutputMode,
    x: &[f64],
    x_prime: &[f64],
) -> bool {
    let n = domains.len();
    if x.len() != n || x_prime.len() != n || model.n_features().is_some_and(|m| m != n) {
        return false;
    }
    if !validate_point(domains, x, INTEGRALITY_TOL)
        || !validate_point(domains, x_prime, INTEGRALITY_TOL)
    {
        return false;
    }
    if !is_close(spec, x, x_prime) {
        return false;
    }
    let fx = evaluate_unchecked(model, x);
    let fxp = evaluate_unchecked(model, x_prime);
    outputs_differ(mode, spec.delta(), fx, fxp)
}

/// A validated close pair whose outputs differ. `gap = f(x) - f(x')` and is
/// always oriented negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasInstance {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub gap: f64,
}

impl BiasInstance {
    /// Builds an instance, swapping the points so that `gap < 0`.
    pub fn oriented(model: &ModelSpec, x: Vec<f64>, x_prime: Vec<f64>) -> Self {
        let fx = evaluate_unchecked(model, &x);
        let fxp = evaluate_unchecked(model, &x_prime);
        if fx <= fxp {
            Self {
                x,
                x_prime,
                gap: fx - fxp,
            }
        } else {
            Self {
                x: x_prime,
                x_prime: x,
                gap: fxp - fx,
            }
        }
    }
}

/// What numeric threshold a `NoBias` bound is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundConvention {
    /// Bound on `min f(x) - f(x')`; no bias when `>= -delta`.
    OutputGap { delta: f64 },
    /// Bound on `min g(x)` subject to `g(x') >= tau` (and the mirror split);
    /// no bias when `>= -tau`.
    SignSplit { tau: f64 },
    /// Margin-saturated gap of the RBF search; no bias when `>= -2 epsilon`.
    RbfMargin { epsilon: f64 },
}

impl BoundConvention {
    pub fn threshold(&self) -> f64 {
        match *self {
            BoundConvention::OutputGap { delta } => -delta,
            BoundConvention::SignSplit { tau } => -tau,
            BoundConvention::RbfMargin { epsilon } => -2.0 * epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    NoBias {
        certified_bound: f64,
        convention: BoundConvention,
    },
    Biased {
        instance: BiasInstance,
    },
    Inconclusive {
        best_bound: f64,
        note: String,
    },
}

impl Verdict {
    pub fn kind(&self) -> VerdictKind {
        match self {
            Verdict::NoBias { .. } => VerdictKind::NoBias,
            Verdict::Biased { .. } => VerdictKind::Biased,
            Verdict::Inconclusive { .. } => VerdictKind::Inconclusive,
        }
    }

    pub fn is_biased(&self) -> bool {
        matches!(self, Verdict::Biased { .. })
    }

    pub fn is_no_bias(&self) -> bool {
        matches!(self, Verdict::NoBias { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    NoBias,
    Biased,
    Inconclusive,
}

impl VerdictKind {
    pub fn exit_code(self) -> i32 {
        match self {
            VerdictKind::NoBias => 0,
            VerdictKind::Biased => 1,
            VerdictKind::Inconclusive => 2,
        }
    }
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::NoBias => "no bias",
            VerdictKind::Biased => "biased",
            VerdictKind::Inconclusive => "inconclusive",
        })
    }
}
