//! Scenario files: JSON descriptions of a verification task.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    FeatureDomain, FeatureKind, KernelEntry, ModelError, ModelSpec, OutputMode, PerturbationSpec,
    Threshold,
};
use crate::verify::{RbfConfig, VerificationTask, VerifyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("partition coverage: {0}")]
    PartitionCoverage(String),
    #[error("threshold sign: block {block}: {reason}")]
    ThresholdSign { block: String, reason: String },
    #[error("domains[{index}]: {reason}")]
    Domain { index: usize, reason: String },
    #[error("model: {0}")]
    Model(String),
    #[error("task: {0}")]
    Task(String),
}

/// A number, or the string `"inf"` for an unconstrained block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdValue(pub Threshold);

impl Serialize for ThresholdValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Threshold::Infinity => s.serialize_str("inf"),
            Threshold::Finite(e) => s.serialize_f64(e),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(e) => Ok(ThresholdValue(Threshold::Finite(e))),
            Raw::Str(s) if s == "inf" || s == "infinity" => Ok(ThresholdValue(Threshold::Infinity)),
            Raw::Str(s) => Err(de::Error::custom(format!(
                "threshold must be a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportVector {
    pub weight: f64,
    pub label: i8,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFile {
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    Poly {
        scale: f64,
        offset: f64,
        degree: u32,
        support_vectors: Vec<SupportVector>,
    },
    Rbf {
        gamma: f64,
        support_vectors: Vec<SupportVector>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub kind: FeatureKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationFile {
    pub blocks: Vec<Vec<usize>>,
    pub thresholds: Vec<ThresholdValue>,
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbfOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_upper: Option<f64>,
}

/// On-disk scenario. Feature indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelFile,
    pub domains: Vec<DomainFile>,
    pub perturbation: PerturbationFile,
    /// Discrete features to enumerate; the default selection when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relax: Vec<usize>,
    pub mode: OutputMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf: Option<RbfOverrides>,
}

fn entries(svs: &[SupportVector]) -> Vec<KernelEntry> {
    svs.iter()
        .map(|s| KernelEntry {
            weight: s.weight,
            label: s.label,
            vector: s.vector.clone(),
        })
        .collect()
}

fn support_vectors(entries: &[KernelEntry]) -> Vec<SupportVector> {
    entries
        .iter()
        .map(|e| SupportVector {
            weight: e.weight,
            label: e.label,
            vector: e.vector.clone(),
        })
        .collect()
}

impl ModelFile {
    pub fn to_spec(&self) -> ModelSpec {
        match self {
            ModelFile::Linear { weights, bias } => ModelSpec::Linear {
                weights: weights.clone(),
                bias: *bias,
            },
            ModelFile::Poly {
                scale,
                offset,
                degree,
                support_vectors,
            } => ModelSpec::PolyKernel {
                scale: *scale,
                offset: *offset,
                degree: *degree,
                entries: entries(support_vectors),
            },
            ModelFile::Rbf {
                gamma,
                support_vectors,
            } => ModelSpec::RbfKernel {
                gamma: *gamma,
                entries: entries(support_vectors),
            },
        }
    }

    pub fn from_spec(model: &ModelSpec) -> Self {
        match model {
            ModelSpec::Linear { weights, bias } => ModelFile::Linear {
                weights: weights.clone(),
                bias: *bias,
            },
            ModelSpec::PolyKernel {
                scale,
                offset,
                degree,
                entries,
            } => ModelFile::Poly {
                scale: *scale,
                offset: *offset,
                degree: *degree,
                support_vectors: support_vectors(entries),
            },
            ModelSpec::RbfKernel { gamma, entries } => ModelFile::Rbf {
                gamma: *gamma,
                support_vectors: support_vectors(entries),
            },
        }
    }
}

fn model_error(e: ModelError) -> ScenarioError {
    match e {
        ModelError::InvalidPartition(m) => ScenarioError::PartitionCoverage(m),
        ModelError::InvalidThreshold { block, reason } => ScenarioError::ThresholdSign {
            block: if block == usize::MAX {
                "delta".into()
            } else {
                block.to_string()
            },
            reason,
        },
        ModelError::InvalidDomain { index, reason } => ScenarioError::Domain { index, reason },
        other => ScenarioError::Model(other.to_string()),
    }
}

impl ScenarioFile {
    pub fn rbf_config(&self) -> RbfConfig {
        let mut cfg = RbfConfig::default();
        if let Some(o) = &self.rbf {
            if let Some(e) = o.epsilon {
                cfg.epsilon = e;
            }
            cfg.weight_lower = o.weight_lower;
            cfg.weight_upper = o.weight_upper;
        }
        cfg
    }

    /// Validates the file into a task.
    pub fn to_task(&self) -> Result<VerificationTask, ScenarioError> {
        let domains = self
            .domains
            .iter()
            .enumerate()
            .map(|(index, d)| {
                FeatureDomain::new(d.lower, d.upper, d.kind)
                    .map_err(|e| match e {
                        ModelError::InvalidDomain { reason, .. } => {
                            ModelError::InvalidDomain { index, reason }
                        }
                        other => other,
                    })
                    .map_err(model_error)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = domains.len();
        let spec = PerturbationSpec::new(
            n,
            self.perturbation.blocks.clone(),
            self.perturbation.thresholds.iter().map(|t| t.0).collect(),
            self.perturbation.delta,
        )
        .map_err(model_error)?;
        let rbf = self.rbf_config();
        if !(rbf.epsilon.is_finite() && rbf.epsilon > 0.0) {
            return Err(ScenarioError::Task(format!(
                "rbf epsilon must be positive, got {}",
                rbf.epsilon
            )));
        }
        VerificationTask::new(
            self.model.to_spec(),
            domains,
            spec,
            self.fixed.clone(),
            self.relax.clone(),
            self.mode,
        )
        .map_err(|e| match e {
            VerifyError::Model(m) => model_error(m),
            other => ScenarioError::Task(other.to_string()),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<(ScenarioFile, VerificationTask), ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        match e.classify() {
            serde_json::error::Category::Data => ScenarioError::Schema {
                line,
                column,
                message,
            },
            _ => ScenarioError::Syntax {
                line,
                column,
                message,
            },
        }
    })?;
    let task = file.to_task()?;
    Ok((file, task))
}
