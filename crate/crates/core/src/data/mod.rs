//! Dataset schema, CSV ingestion, imputation, splitting and synthetic data.

mod dataset;
mod pipeline;
mod schema;
mod split;
mod summary;
mod synth;

pub use dataset::{
    impute_continuous, load_csv, read_csv, save_csv, write_csv, Standardizer, TabularDataset,
};
pub use pipeline::FeaturePipeline;
pub use schema::{AttributeSource, CategoricalColumn, Schema, SensitiveAttribute};
pub use split::{make_splits, Fold, SplitPlan, DEFAULT_FRACTIONS};
pub use summary::{summarize, PrevalenceTable, SubgroupRates};
pub use synth::{synthesize, SynthAttribute, SynthConfig, SynthTask};
