use serde::{Deserialize, Serialize};

use crate::data::dataset::TabularDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRates {
    pub subgroup: String,
    pub count: usize,
    /// `P(y_m = 1 | subgroup)` per task; absent for an empty subgroup.
    pub rates: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub attribute: String,
    pub tasks: Vec<String>,
    pub subgroups: Vec<SubgroupRates>,
    /// Largest minus smallest subgroup rate per task, over populated subgroups.
    pub max_gap: Vec<f64>,
}

pub fn summarize(ds: &TabularDataset, attribute: &str) -> Result<PrevalenceTable> {
    let schema = ds.schema();
    let attr = schema
        .attribute_index(attribute)
        .ok_or_else(|| Error::Schema(format!("unknown sensitive attribute `{attribute}`")))?;
    let m = schema.task_count();
    let names = &schema.sensitive[attr].subgroups;
    let mut counts = vec![0usize; names.len()];
    let mut positives = vec![vec![0usize; m]; names.len()];
    for r in 0..ds.len() {
        if let Some(g) = ds.subgroup(attr, r) {
            counts[g as usize] += 1;
            for (t, &y) in ds.labels_row(r).iter().enumerate() {
                positives[g as usize][t] += y as usize;
            }
        }
    }
    let subgroups: Vec<SubgroupRates> = names
        .iter()
        .enumerate()
        .map(|(g, name)| SubgroupRates {
            subgroup: name.clone(),
            count: counts[g],
            rates: (0..m)
                .map(|t| (counts[g] > 0).then(|| positives[g][t] as f64 / counts[g] as f64))
                .collect(),
        })
        .collect();
    let max_gap = (0..m)
        .map(|t| {
            let rates: Vec<f64> = subgroups.iter().filter_map(|s| s.rates[t]).collect();
            let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
            if rates.is_empty() {
                0.0
            } else {
                hi - lo
            }
        })
        .collect();
    Ok(PrevalenceTable {
        attribute: attribute.to_string(),
        tasks: schema.tasks.clone(),
        subgroups,
        max_gap,
    })
}
