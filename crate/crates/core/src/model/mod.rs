//! Multi-task tabular transformer: per-column embeddings contextualised by a
//! stack of self-attention layers, continuous features layer-normalised and
//! concatenated, one MLP head per task on top of the shared representation.

mod checkpoint;
mod forward;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, Member, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{
    bind_constants, bind_params, check_codes, embed, encoder_layer, forward, layer_norm, predict,
    predict_logits, Batch, ForwardPass,
};
pub use params::{EncoderLayer, Head, InputShape, Linear, ModelConfig, ModelParams, Params, Role};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabTransformer {
    pub config: ModelConfig,
    pub shape: InputShape,
    pub params: ModelParams,
}

impl TabTransformer {
    pub fn init(config: ModelConfig, shape: InputShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &shape, &mut rng)?;
        Ok(TabTransformer {
            config,
            shape,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let p = &self.params;
        let d = self.config.embed_dim;
        let ok = p.embeddings.len() == self.shape.cardinalities.len()
            && p.embeddings
                .iter()
                .zip(&self.shape.cardinalities)
                .all(|(t, &dj)| t.shape() == [dj + 1, d])
            && p.cont_scale.len() == self.shape.continuous
            && p.layers.len() == self.config.layers
            && p.heads.len() == self.shape.tasks;
        if !ok {
            return Err(Error::Contract(
                "parameters do not match the model configuration".into(),
            ));
        }
        Ok(())
    }

    pub fn predict_logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        check_codes(&self.shape, batch)?;
        predict_logits(&self.params, &self.config, batch)
    }

    pub fn tasks(&self) -> usize {
        self.shape.tasks
    }
}

#[cfg(test)]
mod tests;
