use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::{FeaturePipeline, TabularDataset};
use crate::error::{Error, Result};
use crate::model::TabTransformer;

pub const CHECKPOINT_FORMAT: &str = "fairtab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One trained network and the dataset task indices its heads predict, in head order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub tasks: Vec<usize>,
    pub model: TabTransformer,
}

/// Versioned JSON container for trained networks and their preprocessing.
/// A multi-task run has one member; single-task baselines have one per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task_names: Vec<String>,
    pub members: Vec<Member>,
    #[serde(default)]
    pub pipeline: Option<FeaturePipeline>,
}

impl Checkpoint {
    /// Wraps one model whose heads map to tasks `0..M` in order.
    pub fn new(model: TabTransformer, pipeline: Option<FeaturePipeline>) -> Self {
        let m = model.tasks();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            task_names: (0..m).map(|i| format!("task_{i}")).collect(),
            members: vec![Member {
                tasks: (0..m).collect(),
                model,
            }],
            pipeline,
        }
    }

    pub fn from_members(
        task_names: Vec<String>,
        members: Vec<Member>,
        pipeline: FeaturePipeline,
    ) -> Result<Self> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            task_names,
            members,
            pipeline: Some(pipeline),
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Contract(format!(
                "not a checkpoint: format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut seen = vec![false; self.task_names.len()];
        for member in &self.members {
            member.model.validate()?;
            if member.tasks.len() != member.model.tasks() {
                return Err(Error::Contract(
                    "member task list does not match its head count".into(),
                ));
            }
            for &t in &member.tasks {
                match seen.get_mut(t) {
                    Some(s) if !*s => *s = true,
                    _ => {
                        return Err(Error::Contract(format!(
                            "task index {t} is missing or predicted twice"
                        )))
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract(
                "checkpoint does not cover every task".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }

    /// Predicted probabilities indexed `[task][i]` for `rows` of `ds`.
    pub fn predict_proba(&self, ds: &TabularDataset, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let pipeline = self
            .pipeline
            .as_ref()
            .ok_or_else(|| Error::Contract("checkpoint has no preprocessing pipeline".into()))?;
        let batch = pipeline.batch(ds, rows);
        let mut out = vec![Vec::new(); self.task_names.len()];
        for member in &self.members {
            let logits = member.model.predict_logits(&batch)?;
            let heads = member.tasks.len();
            for (h, &t) in member.tasks.iter().enumerate() {
                out[t] = (0..rows.len())
                    .map(|r| sigmoid(logits[r * heads + h]))
                    .collect();
            }
        }
        Ok(out)
    }
}
