use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::params::{EncoderLayer, Head, InputShape, ModelConfig, ModelParams, Params};
use crate::tensor::Tensor;

/// A block of rows ready for the model: categorical codes for the model's
/// categorical columns and preprocessed continuous values.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: usize,
    /// `rows × p`, row-major.
    pub codes: Vec<u32>,
    /// `rows × q`, row-major.
    pub continuous: Vec<f64>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    /// `[rows × M]` raw logits.
    pub logits: Var,
    /// `[rows × (d·p + q)]` shared representation read by every head.
    pub head_input: Var,
    /// Encoder output `[rows·p × d]`.
    pub contextual: Var,
    /// Attention matrices `[rows × p × p]`, indexed `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

pub fn bind_params(g: &mut Graph, params: &ModelParams) -> Params<Var> {
    params.map(|t| g.param(t.clone()))
}

pub fn bind_constants(g: &mut Graph, params: &ModelParams) -> Params<Var> {
    params.map(|t| g.constant(t.clone()))
}

/// Row lookup into each column's embedding table; returns `[rows·p × d]`.
pub fn embed(g: &mut Graph, tables: &[Var], batch: &Batch) -> Result<Var> {
    let p = tables.len();
    if p == 0 || batch.codes.len() != batch.rows * p {
        return Err(Error::Dimension {
            op: "embed",
            left: vec![batch.rows, p],
            right: vec![batch.codes.len()],
        });
    }
    let mut columns = Vec::with_capacity(p);
    for (j, &table) in tables.iter().enumerate() {
        let codes: Vec<usize> = (0..batch.rows)
            .map(|r| batch.codes[r * p + j] as usize)
            .collect();
        columns.push(g.gather_rows(table, &codes)?);
    }
    let d = g.shape(tables[0])[1];
    let wide = g.concat_last(&columns)?;
    g.reshape(wide, &[batch.rows * p, d])
}

/// Learnable-affine layer normalisation over the last axis.
pub fn layer_norm(g: &mut Graph, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
    let n = g.normalize_last(x, eps);
    let s = g.mul_row(n, scale)?;
    g.add_row(s, shift)
}

fn linear(g: &mut Graph, x: Var, l: &crate::model::params::Linear<Var>) -> Result<Var> {
    let y = g.matmul(x, l.weight)?;
    g.add_row(y, l.bias)
}

/// One post-norm transformer layer over `x: [rows·p × d]`.
pub fn encoder_layer(
    g: &mut Graph,
    x: Var,
    layer: &EncoderLayer<Var>,
    config: &ModelConfig,
    rows: usize,
    tokens: usize,
) -> Result<(Var, Vec<Var>)> {
    let (h, k, v) = (config.heads, config.key_dim, config.value_dim);
    let d = g.shape(x)[1];
    if g.shape(layer.query) != [d, h * k] || g.shape(layer.value) != [d, h * v] {
        return Err(Error::Dimension {
            op: "encoder_layer",
            left: g.shape(layer.query).to_vec(),
            right: vec![d, h * k],
        });
    }
    let q_all = g.matmul(x, layer.query)?;
    let k_all = g.matmul(x, layer.key)?;
    let v_all = g.matmul(x, layer.value)?;
    let scale = 1.0 / (k as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(h);
    let mut attention = Vec::with_capacity(h);
    for head in 0..h {
        let qh = g.slice_last(q_all, head * k, k)?;
        let qh = g.reshape(qh, &[rows, tokens, k])?;
        let kh = g.slice_last(k_all, head * k, k)?;
        let kh = g.reshape(kh, &[rows, tokens, k])?;
        let vh = g.slice_last(v_all, head * v, v)?;
        let vh = g.reshape(vh, &[rows, tokens, v])?;
        let scores = g.bmm(qh, kh, true)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax_last(scores);
        attention.push(a);
        let out = g.bmm(a, vh, false)?;
        head_outputs.push(g.reshape(out, &[rows * tokens, v])?);
    }
    let joined = g.concat_last(&head_outputs)?;
    let projected = linear(g, joined, &layer.output)?;
    let res1 = g.add(x, projected)?;
    let x1 = layer_norm(
        g,
        res1,
        layer.norm1_scale,
        layer.norm1_shift,
        config.norm_eps,
    )?;
    let hidden = linear(g, x1, &layer.ff1)?;
    let hidden = g.relu(hidden);
    let ff = linear(g, hidden, &layer.ff2)?;
    let res2 = g.add(x1, ff)?;
    let x2 = layer_norm(
        g,
        res2,
        layer.norm2_scale,
        layer.norm2_shift,
        config.norm_eps,
    )?;
    Ok((x2, attention))
}

fn head_forward(g: &mut Graph, input: Var, head: &Head<Var>) -> Result<Var> {
    let mut x = input;
    for (i, l) in head.layers.iter().enumerate() {
        x = linear(g, x, l)?;
        if i + 1 < head.layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

pub fn forward(
    g: &mut Graph,
    params: &Params<Var>,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<ForwardPass> {
    let p = params.embeddings.len();
    let q = g.shape(params.cont_scale)[0];
    if batch.continuous.len() != batch.rows * q {
        return Err(Error::Dimension {
            op: "forward",
            left: vec![batch.rows, q],
            right: vec![batch.continuous.len()],
        });
    }
    let mut x = embed(g, &params.embeddings, batch)?;
    let mut attention = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, att) = encoder_layer(g, x, layer, config, batch.rows, p)?;
        x = out;
        attention.push(att);
    }
    let d = g.shape(x)[1];
    let flat = g.reshape(x, &[batch.rows, p * d])?;
    let head_input = if q > 0 {
        let cont = g.constant(Tensor::new(vec![batch.rows, q], batch.continuous.clone())?);
        let normed = layer_norm(
            g,
            cont,
            params.cont_scale,
            params.cont_shift,
            config.norm_eps,
        )?;
        g.concat_last(&[flat, normed])?
    } else {
        flat
    };
    let outputs = params
        .heads
        .iter()
        .map(|h| head_forward(g, head_input, h))
        .collect::<Result<Vec<_>>>()?;
    let logits = g.concat_last(&outputs)?;
    Ok(ForwardPass {
        logits,
        head_input,
        contextual: x,
        attention,
    })
}

/// Inference-only logits, `rows × M` row-major, evaluated in fixed-size chunks.
pub fn predict_logits(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
) -> Result<Vec<f64>> {
    const CHUNK: usize = 512;
    let p = params.embeddings.len();
    let q = params.cont_scale.len();
    let m = params.heads.len();
    let mut out = Vec::with_capacity(batch.rows * m);
    let mut start = 0;
    while start < batch.rows {
        let end = (start + CHUNK).min(batch.rows);
        let chunk = Batch {
            rows: end - start,
            codes: batch.codes[start * p..end * p].to_vec(),
            continuous: batch.continuous[start * q..end * q].to_vec(),
        };
        let mut g = Graph::new();
        let vars = bind_constants(&mut g, params);
        let pass = forward(&mut g, &vars, config, &chunk)?;
        out.extend_from_slice(g.value(pass.logits).data());
        start = end;
    }
    Ok(out)
}

/// Logits for a single row.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    codes: &[u32],
    continuous: &[f64],
) -> Result<Vec<f64>> {
    let batch = Batch {
        rows: 1,
        codes: codes.to_vec(),
        continuous: continuous.to_vec(),
    };
    predict_logits(params, config, &batch)
}

/// Checks that every code fits its table (the missing slot included).
pub fn check_codes(shape: &InputShape, batch: &Batch) -> Result<()> {
    let p = shape.cardinalities.len();
    for (i, &c) in batch.codes.iter().enumerate() {
        let dj = shape.cardinalities[i % p];
        if c as usize > dj {
            return Err(Error::Bounds {
                what: format!("embedding table {}", i % p),
                index: c as usize,
                len: dj + 1,
            });
        }
    }
    Ok(())
}
