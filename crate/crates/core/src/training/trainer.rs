use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Var};
use crate::data::{FeaturePipeline, Fold, TabularDataset};
use crate::error::{Error, Result};
use crate::metrics::{auprc, auroc};
use crate::model::{bind_params, forward, Batch, Checkpoint, Member, ModelConfig, TabTransformer};
use crate::objectives::graph as obj;
use crate::objectives::{FairnessSpec, TaskWeightState, WeightMetric};
use crate::training::config::{Method, TrainConfig, WeightSource};
use crate::training::gradstep::gradstep_update;
use crate::training::optim::Adam;

/// Stream-separated seed: `seed` mixed with a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &p in path {
        rng.set_stream(p.wrapping_add(1));
        rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    }
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean unweighted task loss over the epoch's batches, per head.
    pub train_loss: Vec<f64>,
    /// `w_m` in force during the epoch.
    pub weights: Vec<f64>,
    /// Metric on this epoch's training predictions, per head.
    pub train_metric: Vec<Option<f64>>,
    /// Mean disparity penalty over batches, for fairness methods.
    pub fairness: Option<f64>,
    pub val_auroc: Vec<Option<f64>>,
    pub val_auprc: Vec<Option<f64>>,
}

impl EpochRecord {
    pub fn mean_val_auroc(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.val_auroc.iter().copied().collect();
        v.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Training history of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Task names, in head order.
    pub tasks: Vec<String>,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Everything one network's training loop needs to know.
pub struct MemberJob<'a> {
    pub ds: &'a TabularDataset,
    pub fold: &'a Fold,
    pub pipeline: &'a FeaturePipeline,
    /// Dataset task indices, one head each.
    pub tasks: Vec<usize>,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub fairness: Option<&'a FairnessSpec>,
    pub seed: u64,
    /// Where the last good parameters are written after each epoch.
    pub checkpoint: Option<PathBuf>,
}

pub type Progress<'a> = &'a (dyn Fn(&str, &EpochRecord) + Sync);

struct BatchOut {
    losses: Vec<f64>,
    fairness: Option<f64>,
    logits: Vec<f64>,
}

/// Total loss for one batch: task term (sum, weighted sum, or the single
/// head's loss) plus the optional disparity penalty. Returns the total, the
/// per-head loss nodes and the unscaled penalty when one applies.
pub fn batch_objective(
    g: &mut Graph,
    logits: Var,
    labels: &[Vec<u8>],
    groups: Option<(&[Option<u32>], &FairnessSpec)>,
    state: &TaskWeightState,
    cfg: &TrainConfig,
) -> Result<(Var, Vec<Var>, Option<Var>)> {
    let mut losses = Vec::with_capacity(labels.len());
    let mut zs = Vec::with_capacity(labels.len());
    for (m, y) in labels.iter().enumerate() {
        let z = obj::task_logits(g, logits, m)?;
        let l = match cfg.method {
            Method::SingleTaskFocal => obj::focal_loss(g, z, y, cfg.focal_alpha, cfg.focal_gamma)?,
            _ => obj::bce(g, z, y)?,
        };
        zs.push(z);
        losses.push(l);
    }
    let task = if cfg.method.is_balanced() {
        obj::balanced_loss(g, &losses, state)?
    } else {
        obj::multitask_loss(g, &losses)?
    };
    let Some((groups, spec)) = groups.filter(|(_, s)| s.enabled) else {
        return Ok((task, losses, None));
    };
    let mut disparities = Vec::with_capacity(zs.len());
    for (z, y) in zs.into_iter().zip(labels) {
        let p = g.sigmoid(z);
        let rates = obj::group_rates(g, p, y, groups, spec.subgroups.len(), spec.metric)?;
        disparities.push(obj::disparity(g, &rates)?);
    }
    let Some(fair) = obj::fairness_loss(g, &disparities)? else {
        return Ok((task, losses, None));
    };
    let scaled = if cfg.fairness_lambda == 1.0 {
        fair
    } else {
        g.scale(fair, cfg.fairness_lambda)
    };
    Ok((g.add(task, scaled)?, losses, Some(fair)))
}

fn metric_of(metric: WeightMetric, scores: &[f64], labels: &[u8]) -> Option<f64> {
    match metric {
        WeightMetric::Auroc => auroc(scores, labels),
        WeightMetric::Auprc => auprc(scores, labels),
    }
}

fn head_labels(ds: &TabularDataset, tasks: &[usize], rows: &[usize]) -> Vec<Vec<u8>> {
    tasks.iter().map(|&t| ds.task_labels(t, rows)).collect()
}

/// Per-head probabilities for `rows`, `[head][i]`.
fn predict_heads(model: &TabTransformer, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    let logits = model.predict_logits(batch)?;
    let h = model.tasks();
    Ok((0..h)
        .map(|m| {
            (0..batch.rows)
                .map(|r| sigmoid(logits[r * h + m]))
                .collect()
        })
        .collect())
}

/// Runs the epoch/batch loop for one network and returns the best-epoch model.
pub fn train_member(
    job: &MemberJob<'_>,
    progress: Option<Progress<'_>>,
) -> Result<(TabTransformer, EpochLog)> {
    let cfg = job.train;
    let schema = job.ds.schema();
    let heads = job.tasks.len();
    let mut shape = job.pipeline.input_shape(schema);
    shape.tasks = heads;
    let mut model = TabTransformer::init(job.model.clone(), shape, derive_seed(job.seed, &[0]))?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate, cfg.adam);
    let alpha = if cfg.method.is_balanced() {
        cfg.alpha
    } else {
        0.0
    };
    let mut state = TaskWeightState::new(heads, alpha, cfg.weight_metric)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(job.seed, &[1]));
    let attr = match job.fairness {
        Some(spec) => Some(schema.attribute_index(&spec.attribute).ok_or_else(|| {
            Error::config(
                "train.fairness_attribute",
                format!("unknown attribute `{}`", spec.attribute),
            )
        })?),
        None => None,
    };
    let task_names: Vec<String> = job.tasks.iter().map(|&t| schema.tasks[t].clone()).collect();
    let label = task_names.join("+");
    let val_batch = job.pipeline.batch(job.ds, &job.fold.validation);
    let val_labels = head_labels(job.ds, &job.tasks, &job.fold.validation);

    let mut rows = job.fold.train.clone();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, TabTransformer)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut last_good = String::from("initial parameters (no epoch completed)");

    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut order_rng);
        let mut loss_sum = vec![0.0; heads];
        let mut fair_sum = 0.0;
        let mut fair_batches = 0usize;
        let mut batches = 0usize;
        let mut seen_scores: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); heads];
        for (b, chunk) in rows.chunks(cfg.batch_size).enumerate() {
            let batch = job.pipeline.batch(job.ds, chunk);
            let labels = head_labels(job.ds, &job.tasks, chunk);
            let out = if cfg.method == Method::MultiTaskGradstep {
                let step = gradstep_update(
                    &mut model.params,
                    &model.config,
                    &batch,
                    &labels,
                    cfg.gradstep_beta,
                    cfg.gradstep_eta,
                )?;
                BatchOut {
                    losses: step.losses,
                    fairness: None,
                    logits: step.logits,
                }
            } else {
                let groups = attr.map(|a| job.ds.subgroups(a, chunk));
                let mut g = Graph::new();
                let vars = bind_params(&mut g, &model.params);
                let pass = forward(&mut g, &vars, &model.config, &batch)?;
                let (total, losses, fair) = batch_objective(
                    &mut g,
                    pass.logits,
                    &labels,
                    groups.as_deref().zip(job.fairness),
                    &state,
                    cfg,
                )?;
                let total_value = g.value(total).data()[0];
                if !total_value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b,
                        last_good,
                    });
                }
                let grads = g.backward(total)?;
                let flat: Vec<_> = vars
                    .iter()
                    .into_iter()
                    .map(|(_, v)| grads.get(*v))
                    .collect();
                adam.step(&mut model.params, &flat);
                BatchOut {
                    losses: losses.iter().map(|&l| g.value(l).data()[0]).collect(),
                    fairness: fair.map(|f| g.value(f).data()[0]),
                    logits: g.value(pass.logits).data().to_vec(),
                }
            };
            if out.losses.iter().any(|l| !l.is_finite()) || !model.params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    last_good,
                });
            }
            for m in 0..heads {
                loss_sum[m] += out.losses[m];
                seen_scores[m].extend((0..chunk.len()).map(|r| out.logits[r * heads + m]));
            }
            if let Some(f) = out.fairness {
                fair_sum += f;
                fair_batches += 1;
            }
            batches += 1;
        }

        let visited = head_labels(job.ds, &job.tasks, &rows);
        let train_metric: Vec<Option<f64>> = (0..heads)
            .map(|m| metric_of(cfg.weight_metric, &seen_scores[m], &visited[m]))
            .collect();
        let val_probs = predict_heads(&model, &val_batch)?;
        let val_auroc: Vec<Option<f64>> = (0..heads)
            .map(|m| auroc(&val_probs[m], &val_labels[m]))
            .collect();
        let val_auprc: Vec<Option<f64>> = (0..heads)
            .map(|m| auprc(&val_probs[m], &val_labels[m]))
            .collect();
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum.iter().map(|s| s / batches.max(1) as f64).collect(),
            weights: state.weights.clone(),
            train_metric: train_metric.clone(),
            fairness: job.fairness.map(|_| {
                if fair_batches > 0 {
                    fair_sum / fair_batches as f64
                } else {
                    0.0
                }
            }),
            val_auroc,
            val_auprc: val_auprc.clone(),
        };
        let next_weights = match cfg.weight_source {
            WeightSource::Train => train_metric,
            WeightSource::Validation => match cfg.weight_metric {
                WeightMetric::Auroc => record.val_auroc.clone(),
                WeightMetric::Auprc => val_auprc,
            },
        };
        state.update(&next_weights)?;

        if let Some(path) = &job.checkpoint {
            save_member(path, &model, &task_names, job)?;
            last_good = format!("{} (epoch {epoch})", path.display());
        } else {
            last_good = format!("in-memory parameters after epoch {epoch}");
        }
        if let Some(p) = progress {
            p(&label, &record);
        }
        let score = record.mean_val_auroc();
        records.push(record);
        match (score, &best) {
            (Some(s), Some((b, _, _))) if s <= *b => since_best += 1,
            (None, Some(_)) => since_best += 1,
            (Some(s), _) => {
                best = Some((s, epoch, model.clone()));
                since_best = 0;
            }
            (None, None) => {}
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let last_epoch = records.len();
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model),
    };
    Ok((
        model,
        EpochLog {
            tasks: task_names,
            records,
            best_epoch,
            stopped_early,
        },
    ))
}

fn save_member(
    path: &Path,
    model: &TabTransformer,
    names: &[String],
    job: &MemberJob<'_>,
) -> Result<()> {
    let ck = Checkpoint::from_members(
        names.to_vec(),
        vec![Member {
            tasks: (0..names.len()).collect(),
            model: model.clone(),
        }],
        job.pipeline.clone(),
    )?;
    ck.save(path)
}

/// Trained networks of one fold, plus history.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub fold: usize,
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Trains every network a method needs on one fold.
pub fn train_fold(
    ds: &TabularDataset,
    fold: &Fold,
    fold_index: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    progress: Option<Progress<'_>>,
) -> Result<FoldRun> {
    let fairness = cfg.validate(ds.schema())?;
    if fold.train.is_empty() {
        return Err(Error::Contract(format!(
            "fold {fold_index} has no training rows"
        )));
    }
    let pipeline = FeaturePipeline::fit(ds, &fold.train, cfg.standardize)?;
    let m = ds.schema().task_count();
    let groups: Vec<Vec<usize>> = if cfg.method.is_single_task() {
        (0..m).map(|t| vec![t]).collect()
    } else {
        vec![(0..m).collect()]
    };
    let fold_seed = derive_seed(cfg.seed, &[fold_index as u64]);
    let mut members = Vec::with_capacity(groups.len());
    let mut logs = Vec::with_capacity(groups.len());
    for (k, tasks) in groups.into_iter().enumerate() {
        let job = MemberJob {
            ds,
            fold,
            pipeline: &pipeline,
            tasks: tasks.clone(),
            model,
            train: cfg,
            fairness: fairness.as_ref(),
            seed: derive_seed(fold_seed, &[k as u64]),
            checkpoint: checkpoint_dir
                .map(|d| d.join(format!("fold{fold_index}_member{k}_last_good.json"))),
        };
        let (net, log) = train_member(&job, progress)?;
        members.push(Member { tasks, model: net });
        logs.push(log);
    }
    let checkpoint = Checkpoint::from_members(ds.schema().tasks.clone(), members, pipeline)?;
    Ok(FoldRun {
        fold: fold_index,
        checkpoint,
        logs,
    })
}
