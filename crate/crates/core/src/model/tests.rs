use approx::assert_relative_eq;

use super::*;
use crate::autodiff::{numerical_gradient, relative_error, Graph};
use crate::tensor::Tensor;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        layers: 1,
        heads: 2,
        key_dim: 2,
        value_dim: 2,
        ff_hidden: 5,
        head_hidden: vec![3],
        ..ModelConfig::default()
    }
}

fn tiny_shape() -> InputShape {
    InputShape {
        cardinalities: vec![2, 3, 4],
        continuous: 2,
        tasks: 2,
    }
}

fn tiny_batch() -> Batch {
    Batch {
        rows: 3,
        codes: vec![0, 1, 2, 2, 3, 4, 1, 0, 0],
        continuous: vec![0.5, -1.2, 2.0, 0.1, -0.3, -0.4],
    }
}

fn logits_of(model: &TabTransformer, batch: &Batch) -> Vec<f64> {
    model.predict_logits(batch).unwrap()
}

#[test]
fn missing_code_selects_last_table_row() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 1).unwrap();
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let batch = Batch {
        rows: 1,
        codes: vec![2, 3, 4],
        continuous: vec![0.0, 0.0],
    };
    let e = embed(&mut g, &vars.embeddings, &batch).unwrap();
    let out = g.value(e).data();
    for j in 0..3 {
        let table = &model.params.embeddings[j];
        let last = table.shape()[0] - 1;
        assert_eq!(
            &out[j * 4..(j + 1) * 4],
            &table.data()[last * 4..(last + 1) * 4]
        );
    }
}

#[test]
fn zero_tables_embed_to_zero() {
    let mut model = TabTransformer::init(tiny_config(), tiny_shape(), 1).unwrap();
    for t in &mut model.params.embeddings {
        *t = Tensor::zeros(t.shape());
    }
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let e = embed(&mut g, &vars.embeddings, &tiny_batch()).unwrap();
    assert!(g.value(e).data().iter().all(|&v| v == 0.0));
}

#[test]
fn out_of_range_code_is_bounds_error() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 1).unwrap();
    let batch = Batch {
        rows: 1,
        codes: vec![3, 0, 0],
        continuous: vec![0.0, 0.0],
    };
    assert!(matches!(
        model.predict_logits(&batch),
        Err(crate::Error::Bounds { .. })
    ));
}

#[test]
fn embedding_gradient_touches_selected_rows_only() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 2).unwrap();
    let batch = Batch {
        rows: 2,
        codes: vec![0, 1, 2, 0, 1, 3],
        continuous: vec![0.0; 4],
    };
    let weights = Tensor::vector((0..24).map(|i| (i as f64 * 0.7).cos()).collect());
    let loss_of = |tables: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<_> = tables.iter().map(|t| g.param(t.clone())).collect();
        let e = embed(&mut g, &vars, &batch).unwrap();
        let flat = g.reshape(e, &[24]).unwrap();
        let w = g.constant(weights.clone());
        let sq = g.mul(flat, flat).unwrap();
        let prod = g.mul(sq, w).unwrap();
        let loss = g.sum(prod);
        (g.value(loss).item().unwrap(), g, vars, loss)
    };
    let (_, g, vars, loss) = loss_of(&model.params.embeddings);
    let grads = g.backward(loss).unwrap();
    // Column 2 only saw codes 2 and 3: rows 0, 1, 4 of that table stay zero.
    let g2 = grads.get(vars[2]);
    for row in [0usize, 1, 4] {
        assert!(g2.data()[row * 4..(row + 1) * 4].iter().all(|&v| v == 0.0));
    }
    for j in 0..3 {
        let numeric = numerical_gradient(&model.params.embeddings[j], 1e-5, |probe| {
            let mut tables = model.params.embeddings.clone();
            tables[j] = probe.clone();
            loss_of(&tables).0
        });
        assert!(relative_error(&grads.get(vars[j]), &numeric, 1e-6) < 1e-4);
    }
}

fn layernorm_cont(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap());
    let gv = g.constant(Tensor::vector(gamma.to_vec()));
    let bv = g.constant(Tensor::vector(beta.to_vec()));
    let out = layer_norm(&mut g, xv, gv, bv, 1e-5).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn continuous_layer_norm_examples() {
    let out = layernorm_cont(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]);
    assert_relative_eq!(out[0], 1.0, epsilon = 1e-5);
    assert_relative_eq!(out[1], -1.0, epsilon = 1e-5);

    let out = layernorm_cont(&[3.0, 3.0, 3.0], &[1.0; 3], &[0.0; 3]);
    assert!(out.iter().all(|&v| v == 0.0));

    // scalar oracle: mean 2, population variance 2/3
    let inv = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
    let out = layernorm_cont(&[1.0, 2.0, 3.0], &[2.0, 1.0, 0.5], &[0.1, 0.2, 0.3]);
    let expect = [2.0 * -inv + 0.1, 0.2, 0.5 * inv + 0.3];
    for (a, b) in out.iter().zip(expect) {
        assert_relative_eq!(*a, b, max_relative = 1e-14);
    }
}

#[test]
fn single_token_attention_is_one() {
    let shape = InputShape {
        cardinalities: vec![3],
        continuous: 0,
        tasks: 1,
    };
    let model = TabTransformer::init(tiny_config(), shape, 4).unwrap();
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let batch = Batch {
        rows: 2,
        codes: vec![1, 2],
        continuous: vec![],
    };
    let pass = forward(&mut g, &vars, &model.config, &batch).unwrap();
    for a in pass.attention.iter().flatten() {
        assert_eq!(g.value(*a).data(), &[1.0, 1.0]);
    }
    assert_eq!(g.shape(pass.head_input), &[2, 4]);
}

#[test]
fn zero_query_gives_uniform_attention() {
    let mut model = TabTransformer::init(tiny_config(), tiny_shape(), 5).unwrap();
    let q = &mut model.params.layers[0].query;
    *q = Tensor::zeros(q.shape());
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let pass = forward(&mut g, &vars, &model.config, &tiny_batch()).unwrap();
    for a in &pass.attention[0] {
        assert!(g
            .value(*a)
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }
}

// Independent scalar-loop evaluation of one post-norm encoder layer.
fn oracle_layer(
    x: &[Vec<f64>],
    layer: &EncoderLayer<Tensor>,
    heads: usize,
    k: usize,
    v: usize,
) -> Vec<Vec<f64>> {
    let p = x.len();
    let d = x[0].len();
    let mm = |a: &[f64], w: &Tensor| -> Vec<f64> {
        let cols = w.shape()[1];
        (0..cols)
            .map(|c| (0..a.len()).map(|i| a[i] * w.data()[i * cols + c]).sum())
            .collect()
    };
    let ln = |a: &[f64], s: &Tensor, b: &Tensor| -> Vec<f64> {
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        (0..a.len())
            .map(|i| (a[i] - mean) / (var + 1e-5).sqrt() * s.data()[i] + b.data()[i])
            .collect()
    };
    let qs: Vec<Vec<f64>> = x.iter().map(|r| mm(r, &layer.query)).collect();
    let ks: Vec<Vec<f64>> = x.iter().map(|r| mm(r, &layer.key)).collect();
    let vs: Vec<Vec<f64>> = x.iter().map(|r| mm(r, &layer.value)).collect();
    let mut concat = vec![vec![0.0; heads * v]; p];
    for h in 0..heads {
        for i in 0..p {
            let scores: Vec<f64> = (0..p)
                .map(|j| {
                    (0..k)
                        .map(|t| qs[i][h * k + t] * ks[j][h * k + t])
                        .sum::<f64>()
                        / (k as f64).sqrt()
                })
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..p {
                let a = scores[j].exp() / z;
                for t in 0..v {
                    concat[i][h * v + t] += a * vs[j][h * v + t];
                }
            }
        }
    }
    (0..p)
        .map(|i| {
            let proj: Vec<f64> = mm(&concat[i], &layer.output.weight)
                .iter()
                .zip(layer.output.bias.data())
                .map(|(a, b)| a + b)
                .collect();
            let res: Vec<f64> = (0..d).map(|c| x[i][c] + proj[c]).collect();
            let x1 = ln(&res, &layer.norm1_scale, &layer.norm1_shift);
            let hid: Vec<f64> = mm(&x1, &layer.ff1.weight)
                .iter()
                .zip(layer.ff1.bias.data())
                .map(|(a, b)| (a + b).max(0.0))
                .collect();
            let ff: Vec<f64> = mm(&hid, &layer.ff2.weight)
                .iter()
                .zip(layer.ff2.bias.data())
                .map(|(a, b)| a + b)
                .collect();
            let res2: Vec<f64> = (0..d).map(|c| x1[c] + ff[c]).collect();
            ln(&res2, &layer.norm2_scale, &layer.norm2_shift)
        })
        .collect()
}

#[test]
fn two_token_single_head_matches_oracle() {
    let config = ModelConfig {
        embed_dim: 3,
        layers: 1,
        heads: 1,
        key_dim: 2,
        value_dim: 2,
        ff_hidden: 4,
        head_hidden: vec![2],
        ..ModelConfig::default()
    };
    let shape = InputShape {
        cardinalities: vec![2, 2],
        continuous: 0,
        tasks: 1,
    };
    let mut model = TabTransformer::init(config.clone(), shape, 8).unwrap();
    let layer = &mut model.params.layers[0];
    layer.norm1_scale = Tensor::vector(vec![1.5, 0.5, 1.0]);
    layer.norm2_shift = Tensor::vector(vec![0.1, -0.2, 0.3]);
    layer.output.bias = Tensor::vector(vec![0.05, 0.1, -0.1]);
    let x = [vec![0.3, -0.8, 0.5], vec![1.2, 0.4, -0.6]];
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let input = g.constant(Tensor::from_rows(&x).unwrap());
    let (out, _) = encoder_layer(&mut g, input, &vars.layers[0], &config, 1, 2).unwrap();
    let expect = oracle_layer(&x, &model.params.layers[0], 1, 2, 2);
    for (i, row) in expect.iter().enumerate() {
        for (c, e) in row.iter().enumerate() {
            assert_relative_eq!(
                g.value(out).data()[i * 3 + c],
                *e,
                max_relative = 1e-12,
                epsilon = 1e-14
            );
        }
    }
}

#[test]
fn multi_head_layer_matches_oracle() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 21).unwrap();
    let x: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..4).map(|c| ((i * 4 + c) as f64 * 0.61).sin()).collect())
        .collect();
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let input = g.constant(Tensor::from_rows(&x).unwrap());
    let (out, att) = encoder_layer(&mut g, input, &vars.layers[0], &model.config, 1, 3).unwrap();
    let expect = oracle_layer(&x, &model.params.layers[0], 2, 2, 2);
    for (i, row) in expect.iter().enumerate() {
        for (c, e) in row.iter().enumerate() {
            assert_relative_eq!(
                g.value(out).data()[i * 4 + c],
                *e,
                max_relative = 1e-12,
                epsilon = 1e-14
            );
        }
    }
    for a in att {
        for row in g.value(a).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_heads_give_zero_logits() {
    let mut model = TabTransformer::init(tiny_config(), tiny_shape(), 3).unwrap();
    for head in &mut model.params.heads {
        for l in &mut head.layers {
            l.weight = Tensor::zeros(l.weight.shape());
        }
    }
    let logits = logits_of(&model, &tiny_batch());
    assert!(logits.iter().all(|&z| z == 0.0));
    assert!(logits.iter().all(|&z| crate::autodiff::sigmoid(z) == 0.5));
}

#[test]
fn head_input_has_dp_plus_q_columns() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 3).unwrap();
    let mut g = Graph::new();
    let vars = bind_constants(&mut g, &model.params);
    let pass = forward(&mut g, &vars, &model.config, &tiny_batch()).unwrap();
    assert_eq!(g.shape(pass.head_input), &[3, 4 * 3 + 2]);
    assert_eq!(g.shape(pass.logits), &[3, 2]);
}

#[test]
fn zeroing_one_head_changes_only_its_logit() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 6).unwrap();
    let before = logits_of(&model, &tiny_batch());
    let mut edited = model.clone();
    for l in &mut edited.params.heads[1].layers {
        l.weight = Tensor::zeros(l.weight.shape());
    }
    let after = logits_of(&edited, &tiny_batch());
    for r in 0..3 {
        assert_eq!(before[r * 2], after[r * 2]);
        assert_ne!(before[r * 2 + 1], after[r * 2 + 1]);
    }
}

#[test]
fn continuous_permutation_equivariance() {
    let shape = InputShape {
        cardinalities: vec![2, 3],
        continuous: 3,
        tasks: 2,
    };
    let mut model = TabTransformer::init(tiny_config(), shape, 9).unwrap();
    model.params.cont_scale = Tensor::vector(vec![1.5, 0.7, 1.1]);
    model.params.cont_shift = Tensor::vector(vec![0.2, -0.1, 0.4]);
    let batch = Batch {
        rows: 2,
        codes: vec![0, 1, 1, 2],
        continuous: vec![0.3, -1.0, 2.2, 1.1, 0.0, -0.5],
    };
    let perm = [2usize, 0, 1];
    let mut permuted = model.clone();
    permuted.params.cont_scale = Tensor::vector(
        perm.iter()
            .map(|&i| model.params.cont_scale.data()[i])
            .collect(),
    );
    permuted.params.cont_shift = Tensor::vector(
        perm.iter()
            .map(|&i| model.params.cont_shift.data()[i])
            .collect(),
    );
    let offset = 4 * 2;
    for (m, head) in permuted.params.heads.iter_mut().enumerate() {
        let w0 = &model.params.heads[m].layers[0].weight;
        let cols = w0.shape()[1];
        let mut w = w0.clone();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..cols {
                w.data_mut()[(offset + new) * cols + c] = w0.data()[(offset + old) * cols + c];
            }
        }
        head.layers[0].weight = w;
    }
    let pbatch = Batch {
        rows: 2,
        codes: batch.codes.clone(),
        continuous: (0..2)
            .flat_map(|r| perm.iter().map(move |&i| r * 3 + i))
            .map(|i| batch.continuous[i])
            .collect(),
    };
    let a = logits_of(&model, &batch);
    let b = logits_of(&permuted, &pbatch);
    for (x, y) in a.iter().zip(&b) {
        assert_relative_eq!(x, y, max_relative = 1e-12);
    }
}

#[test]
fn single_task_model_matches_its_head() {
    let mut shape = tiny_shape();
    shape.tasks = 1;
    let model = TabTransformer::init(tiny_config(), shape, 10).unwrap();
    let logits = logits_of(&model, &tiny_batch());
    assert_eq!(logits.len(), 3);
    let single = predict(&model.params, &model.config, &[0, 1, 2], &[0.5, -1.2]).unwrap();
    assert_eq!(single[0], logits[0]);
}

#[test]
fn full_model_gradient_check() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 12).unwrap();
    let batch = tiny_batch();
    let targets = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let loss_for = |params: &ModelParams| -> f64 {
        let mut g = Graph::new();
        let vars = bind_params(&mut g, params);
        let pass = forward(&mut g, &vars, &model.config, &batch).unwrap();
        let t = g.constant(targets.clone());
        let s = g.sigmoid(pass.logits);
        let prod = g.mul(s, t).unwrap();
        let loss = g.sum(prod);
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let vars = bind_params(&mut g, &model.params);
    let pass = forward(&mut g, &vars, &model.config, &batch).unwrap();
    let t = g.constant(targets.clone());
    let s = g.sigmoid(pass.logits);
    let prod = g.mul(s, t).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let var_list = vars.iter();
    let count = model.params.iter().len();
    for idx in 0..count {
        let analytic = grads.get(*var_list[idx].1);
        let base = model.params.iter()[idx].1.clone();
        let numeric = numerical_gradient(&base, 1e-5, |probe| {
            let mut p = model.params.clone();
            *p.iter_mut()[idx].1 = probe.clone();
            loss_for(&p)
        });
        let err = relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "parameter {idx}: relative error {err}");
    }
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 13).unwrap();
    let ck = Checkpoint::new(model.clone(), None);
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    assert_eq!(back.members[0].model, model);
    let a = logits_of(&model, &tiny_batch());
    let b = logits_of(&back.members[0].model, &tiny_batch());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn checkpoint_rejects_foreign_documents() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 13).unwrap();
    let mut ck = Checkpoint::new(model, None);
    ck.version = 99;
    assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
}

#[test]
fn checkpoint_rejects_uncovered_tasks() {
    let model = TabTransformer::init(tiny_config(), tiny_shape(), 13).unwrap();
    let mut ck = Checkpoint::new(model, None);
    ck.task_names.push("extra".into());
    assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    ck.task_names.pop();
    ck.members[0].tasks = vec![0, 0];
    assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
}
