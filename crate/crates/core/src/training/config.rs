use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::objectives::{FairnessMetric, FairnessSpec, WeightMetric};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "single-task")]
    SingleTask,
    #[serde(rename = "single-task-focal")]
    SingleTaskFocal,
    #[serde(rename = "multi-task")]
    MultiTask,
    #[serde(rename = "multi-task-gradstep")]
    MultiTaskGradstep,
    #[serde(rename = "auroc-weighted")]
    AurocWeighted,
    #[serde(rename = "auroc-weighted+DP")]
    AurocWeightedDp,
    #[serde(rename = "auroc-weighted+EO")]
    AurocWeightedEo,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::SingleTask,
        Method::SingleTaskFocal,
        Method::MultiTask,
        Method::MultiTaskGradstep,
        Method::AurocWeighted,
        Method::AurocWeightedDp,
        Method::AurocWeightedEo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SingleTask => "single-task",
            Method::SingleTaskFocal => "single-task-focal",
            Method::MultiTask => "multi-task",
            Method::MultiTaskGradstep => "multi-task-gradstep",
            Method::AurocWeighted => "auroc-weighted",
            Method::AurocWeightedDp => "auroc-weighted+DP",
            Method::AurocWeightedEo => "auroc-weighted+EO",
        }
    }

    /// One network per task instead of a shared encoder.
    pub fn is_single_task(self) -> bool {
        matches!(self, Method::SingleTask | Method::SingleTaskFocal)
    }

    pub fn is_balanced(self) -> bool {
        matches!(
            self,
            Method::AurocWeighted | Method::AurocWeightedDp | Method::AurocWeightedEo
        )
    }

    pub fn fairness_metric(self) -> Option<FairnessMetric> {
        match self {
            Method::AurocWeightedDp => Some(FairnessMetric::DemographicParity),
            Method::AurocWeightedEo => Some(FairnessMetric::EqualizedOdds),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::config(
                    "method",
                    format!("unknown method {s:?}; expected one of {}", names.join(", ")),
                )
            })
    }
}

/// Where the per-epoch task metric for the balancing weights comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Predictions collected while training the previous epoch.
    #[default]
    Train,
    /// A pass over the validation rows after the previous epoch.
    Validation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Exponent of the balancing multiplier `(1 - w_m)^α`.
    pub alpha: f64,
    pub weight_metric: WeightMetric,
    pub weight_source: WeightSource,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub fairness_attribute: Option<String>,
    /// Multiplier on the disparity term; 1 gives the plain sum.
    pub fairness_lambda: f64,
    /// Lookahead step size of the grad-step baseline.
    pub gradstep_beta: f64,
    /// Update step size of the grad-step baseline.
    pub gradstep_eta: f64,
    pub threshold: f64,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::AurocWeighted,
            epochs: 30,
            batch_size: 256,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            patience: 5,
            alpha: 1.0,
            weight_metric: WeightMetric::Auroc,
            weight_source: WeightSource::Train,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            fairness_attribute: None,
            fairness_lambda: 1.0,
            gradstep_beta: 0.01,
            gradstep_eta: 0.01,
            threshold: 0.5,
            standardize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks every field against `schema`; returns the fairness target for
    /// fairness methods.
    pub fn validate(&self, schema: &Schema) -> Result<Option<FairnessSpec>> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size", "must be >= 2"));
        }
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("must be finite and > 0, got {v}"),
                ))
            }
        };
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("must be finite and >= 0, got {v}"),
                ))
            }
        };
        positive("train.learning_rate", self.learning_rate)?;
        positive("train.adam.eps", self.adam.eps)?;
        for (field, b) in [
            ("train.adam.beta1", self.adam.beta1),
            ("train.adam.beta2", self.adam.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("must be in [0, 1), got {b}")));
            }
        }
        nonneg("train.alpha", self.alpha)?;
        nonneg("train.focal_gamma", self.focal_gamma)?;
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::config("train.focal_alpha", "must be in [0, 1]"));
        }
        nonneg("train.fairness_lambda", self.fairness_lambda)?;
        nonneg("train.gradstep_beta", self.gradstep_beta)?;
        nonneg("train.gradstep_eta", self.gradstep_eta)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("train.threshold", "must be in (0, 1)"));
        }
        let Some(metric) = self.method.fairness_metric() else {
            return Ok(None);
        };
        let name = self.fairness_attribute.as_deref().ok_or_else(|| {
            Error::config(
                "train.fairness_attribute",
                format!("method {} needs a sensitive attribute", self.method),
            )
        })?;
        let attr = schema.attribute_index(name).ok_or_else(|| {
            let known: Vec<&str> = schema.sensitive.iter().map(|a| a.name.as_str()).collect();
            Error::config(
                "train.fairness_attribute",
                format!(
                    "`{name}` is not a sensitive attribute of the schema (known: {})",
                    known.join(", ")
                ),
            )
        })?;
        let spec = FairnessSpec {
            attribute: name.to_string(),
            subgroups: schema.sensitive[attr].subgroups.clone(),
            metric,
            enabled: true,
        };
        spec.validate()?;
        Ok(Some(spec))
    }
}
