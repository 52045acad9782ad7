use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters of the encoder and heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub ff_hidden: usize,
    /// Hidden widths of every task head, input to output.
    pub head_hidden: Vec<usize>,
    pub norm_eps: f64,
    pub embed_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            layers: 3,
            heads: 4,
            key_dim: 4,
            value_dim: 4,
            ff_hidden: 64,
            head_hidden: vec![64],
            norm_eps: 1e-5,
            embed_init_std: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("embed_dim", self.embed_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("ff_hidden", self.ff_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(format!("model.{field}"), "must be >= 1"));
            }
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::config("model.head_hidden", "widths must be >= 1"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("model.norm_eps", "must be positive"));
        }
        Ok(())
    }
}

/// Input geometry derived from a schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    /// Category count `d_j` per model categorical column (tables get `d_j + 1` rows).
    pub cardinalities: Vec<usize>,
    pub continuous: usize,
    pub tasks: usize,
}

impl InputShape {
    pub fn head_input(&self, embed_dim: usize) -> usize {
        embed_dim * self.cardinalities.len() + self.continuous
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer<T> {
    pub query: T,
    pub key: T,
    pub value: T,
    pub output: Linear<T>,
    pub norm1_scale: T,
    pub norm1_shift: T,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub norm2_scale: T,
    pub norm2_shift: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head<T> {
    pub layers: Vec<Linear<T>>,
}

/// Which side of the hard parameter sharing a tensor sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Shared,
    Head(usize),
}

/// All trainable tensors. Generic so the same layout can hold values
/// (`Params<Tensor>`) or graph handles (`Params<Var>`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub embeddings: Vec<T>,
    pub cont_scale: T,
    pub cont_shift: T,
    pub layers: Vec<EncoderLayer<T>>,
    pub heads: Vec<Head<T>>,
}

pub type ModelParams = Params<Tensor>;

impl<T> Linear<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> EncoderLayer<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            query: f(&self.query),
            key: f(&self.key),
            value: f(&self.value),
            output: self.output.map(f),
            norm1_scale: f(&self.norm1_scale),
            norm1_shift: f(&self.norm1_shift),
            ff1: self.ff1.map(f),
            ff2: self.ff2.map(f),
            norm2_scale: f(&self.norm2_scale),
            norm2_shift: f(&self.norm2_shift),
        }
    }

    fn refs(&self) -> Vec<&T> {
        vec![
            &self.query,
            &self.key,
            &self.value,
            &self.output.weight,
            &self.output.bias,
            &self.norm1_scale,
            &self.norm1_shift,
            &self.ff1.weight,
            &self.ff1.bias,
            &self.ff2.weight,
            &self.ff2.bias,
            &self.norm2_scale,
            &self.norm2_shift,
        ]
    }

    fn refs_mut(&mut self) -> Vec<&mut T> {
        vec![
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output.weight,
            &mut self.output.bias,
            &mut self.norm1_scale,
            &mut self.norm1_shift,
            &mut self.ff1.weight,
            &mut self.ff1.bias,
            &mut self.ff2.weight,
            &mut self.ff2.bias,
            &mut self.norm2_scale,
            &mut self.norm2_shift,
        ]
    }
}

impl<T> Params<T> {
    /// Same-layout copy with every leaf transformed, visited in [`Params::iter`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            embeddings: self.embeddings.iter().map(&mut f).collect(),
            cont_scale: f(&self.cont_scale),
            cont_shift: f(&self.cont_shift),
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    layers: h.layers.iter().map(|l| l.map(&mut f)).collect(),
                })
                .collect(),
        }
    }

    /// Every leaf with its sharing role, in a fixed order.
    pub fn iter(&self) -> Vec<(Role, &T)> {
        let mut out: Vec<(Role, &T)> = self.embeddings.iter().map(|t| (Role::Shared, t)).collect();
        out.push((Role::Shared, &self.cont_scale));
        out.push((Role::Shared, &self.cont_shift));
        for layer in &self.layers {
            out.extend(layer.refs().into_iter().map(|t| (Role::Shared, t)));
        }
        for (m, head) in self.heads.iter().enumerate() {
            for l in &head.layers {
                out.push((Role::Head(m), &l.weight));
                out.push((Role::Head(m), &l.bias));
            }
        }
        out
    }

    pub fn iter_mut(&mut self) -> Vec<(Role, &mut T)> {
        let mut out: Vec<(Role, &mut T)> = self
            .embeddings
            .iter_mut()
            .map(|t| (Role::Shared, t))
            .collect();
        out.push((Role::Shared, &mut self.cont_scale));
        out.push((Role::Shared, &mut self.cont_shift));
        for layer in &mut self.layers {
            out.extend(layer.refs_mut().into_iter().map(|t| (Role::Shared, t)));
        }
        for (m, head) in self.heads.iter_mut().enumerate() {
            for l in &mut head.layers {
                out.push((Role::Head(m), &mut l.weight));
                out.push((Role::Head(m), &mut l.bias));
            }
        }
        out
    }
}

impl ModelParams {
    pub fn init<R: Rng>(config: &ModelConfig, shape: &InputShape, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if shape.cardinalities.is_empty() {
            return Err(Error::config(
                "schema",
                "at least one categorical model input is required",
            ));
        }
        if shape.tasks == 0 {
            return Err(Error::config("schema", "at least one task is required"));
        }
        let d = config.embed_dim;
        let (h, k, v) = (config.heads, config.key_dim, config.value_dim);
        let normal = Normal::new(0.0, config.embed_init_std)
            .map_err(|e| Error::config("model.embed_init_std", e.to_string()))?;

        let embeddings = shape
            .cardinalities
            .iter()
            .map(|&dj| {
                let data = (0..(dj + 1) * d).map(|_| normal.sample(rng)).collect();
                Tensor::new(vec![dj + 1, d], data)
            })
            .collect::<Result<Vec<_>>>()?;
        let linear = |fan_in: usize, fan_out: usize, rng: &mut R| Linear {
            weight: xavier(fan_in, fan_out, rng),
            bias: Tensor::zeros(&[fan_out]),
        };
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                query: xavier(d, h * k, rng),
                key: xavier(d, h * k, rng),
                value: xavier(d, h * v, rng),
                output: linear(h * v, d, rng),
                norm1_scale: Tensor::full(&[d], 1.0),
                norm1_shift: Tensor::zeros(&[d]),
                ff1: linear(d, config.ff_hidden, rng),
                ff2: linear(config.ff_hidden, d, rng),
                norm2_scale: Tensor::full(&[d], 1.0),
                norm2_shift: Tensor::zeros(&[d]),
            })
            .collect();
        let head_in = shape.head_input(d);
        let heads = (0..shape.tasks)
            .map(|_| {
                let mut widths = vec![head_in];
                widths.extend(&config.head_hidden);
                widths.push(1);
                Head {
                    layers: widths.windows(2).map(|w| linear(w[0], w[1], rng)).collect(),
                }
            })
            .collect();
        Ok(Params {
            embeddings,
            cont_scale: Tensor::full(&[shape.continuous], 1.0),
            cont_shift: Tensor::zeros(&[shape.continuous]),
            layers,
            heads,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.iter().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().iter().all(|(_, t)| t.is_finite())
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..a))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}
