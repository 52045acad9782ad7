use serde::{Deserialize, Serialize};

use crate::data::dataset::{impute_continuous, Standardizer, TabularDataset};
use crate::data::schema::Schema;
use crate::error::{Error, Result};
use crate::model::{Batch, InputShape};

/// Train-fold preprocessing: mean imputation of continuous cells followed by
/// optional z-scoring, plus selection of the model's categorical columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub categorical_columns: Vec<usize>,
    pub impute_means: Vec<f64>,
    pub standardizer: Standardizer,
}

impl FeaturePipeline {
    pub fn fit(ds: &TabularDataset, train: &[usize], standardize: bool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("preprocessing needs training rows".into()));
        }
        let schema = ds.schema();
        let q = schema.continuous.len();
        let imputed = impute_continuous(ds, train)?;
        let mut impute_means = Vec::with_capacity(q);
        for col in 0..q {
            let observed: Vec<f64> = train
                .iter()
                .map(|&r| ds.continuous_value(r, col))
                .filter(|v| !v.is_nan())
                .collect();
            impute_means.push(if observed.is_empty() {
                0.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            });
        }
        let standardizer = if standardize {
            Standardizer::fit(&imputed, train)
        } else {
            Standardizer::identity(q)
        };
        Ok(FeaturePipeline {
            categorical_columns: schema.model_categorical(),
            impute_means,
            standardizer,
        })
    }

    pub fn input_shape(&self, schema: &Schema) -> InputShape {
        InputShape {
            cardinalities: self
                .categorical_columns
                .iter()
                .map(|&c| schema.categorical[c].categories.len())
                .collect(),
            continuous: schema.continuous.len(),
            tasks: schema.task_count(),
        }
    }

    pub fn batch(&self, ds: &TabularDataset, rows: &[usize]) -> Batch {
        let q = self.impute_means.len();
        let mut codes = Vec::with_capacity(rows.len() * self.categorical_columns.len());
        let mut continuous = Vec::with_capacity(rows.len() * q);
        for &r in rows {
            codes.extend(
                self.categorical_columns
                    .iter()
                    .map(|&c| ds.categorical_value(r, c)),
            );
            for (col, &x) in ds.continuous_row(r).iter().enumerate() {
                let x = if x.is_nan() {
                    self.impute_means[col]
                } else {
                    x
                };
                continuous.push((x - self.standardizer.means[col]) / self.standardizer.scales[col]);
            }
        }
        Batch {
            rows: rows.len(),
            codes,
            continuous,
        }
    }
}
