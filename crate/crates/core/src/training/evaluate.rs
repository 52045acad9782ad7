use std::path::Path;

use crate::data::{SplitPlan, TabularDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    auprc, auroc, cdf_table, dpd, eod, threshold, CdfTable, FairnessCell, FoldMetrics,
    MetricsReport,
};
use crate::model::{Checkpoint, ModelConfig};
use crate::training::config::TrainConfig;
use crate::training::trainer::{train_fold, FoldRun, Progress};

/// Holdout metrics from already computed probabilities `probs[task][i]` of `rows`.
pub fn holdout_metrics(
    ds: &TabularDataset,
    rows: &[usize],
    probs: &[Vec<f64>],
    cut: f64,
    fold: usize,
) -> FoldMetrics {
    let schema = ds.schema();
    let labels: Vec<Vec<u8>> = (0..schema.task_count())
        .map(|t| ds.task_labels(t, rows))
        .collect();
    let mut fairness = Vec::new();
    for (a, attr) in schema.sensitive.iter().enumerate() {
        let groups = ds.subgroups(a, rows);
        for (t, task) in schema.tasks.iter().enumerate() {
            let preds = threshold(&probs[t], cut);
            fairness.push(FairnessCell {
                attribute: attr.name.clone(),
                task: task.clone(),
                dpd: dpd(&preds, &groups),
                eod: eod(&preds, &labels[t], &groups),
            });
        }
    }
    FoldMetrics {
        fold,
        auroc: (0..labels.len())
            .map(|t| auroc(&probs[t], &labels[t]))
            .collect(),
        auprc: (0..labels.len())
            .map(|t| auprc(&probs[t], &labels[t]))
            .collect(),
        fairness,
    }
}

/// Predicts `rows` with a checkpoint and scores them.
pub fn evaluate(
    checkpoint: &Checkpoint,
    ds: &TabularDataset,
    rows: &[usize],
    cut: f64,
    fold: usize,
) -> Result<(FoldMetrics, Vec<Vec<f64>>)> {
    if rows.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    if checkpoint.task_names != ds.schema().tasks {
        return Err(Error::Schema(format!(
            "checkpoint predicts tasks {:?} but the dataset has {:?}",
            checkpoint.task_names,
            ds.schema().tasks
        )));
    }
    let probs = checkpoint.predict_proba(ds, rows)?;
    Ok((holdout_metrics(ds, rows, &probs, cut, fold), probs))
}

/// CDFs of holdout probabilities pooled over folds, per (task, attribute).
pub fn pooled_cdf(
    ds: &TabularDataset,
    parts: &[(&[usize], &[Vec<f64>])],
    grid: &[f64],
) -> Result<Vec<CdfTable>> {
    let schema = ds.schema();
    let mut tables = Vec::new();
    for (t, task) in schema.tasks.iter().enumerate() {
        let probs: Vec<f64> = parts
            .iter()
            .flat_map(|(_, p)| p[t].iter().copied())
            .collect();
        for (a, attr) in schema.sensitive.iter().enumerate() {
            let groups: Vec<Option<u32>> = parts
                .iter()
                .flat_map(|(rows, _)| ds.subgroups(a, rows))
                .collect();
            tables.push(cdf_table(
                task,
                &attr.name,
                &probs,
                &groups,
                &attr.subgroups,
                grid,
            )?);
        }
    }
    Ok(tables)
}

pub struct RunOptions<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    /// Upper bound on folds trained at once.
    pub threads: usize,
    pub progress: Option<Progress<'a>>,
    pub grid: Vec<f64>,
    /// Restrict to these fold indices; all folds when `None`.
    pub folds: Option<Vec<usize>>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions {
            checkpoint_dir: None,
            threads: 1,
            progress: None,
            grid: crate::metrics::default_grid(),
            folds: None,
        }
    }
}

pub struct Experiment {
    pub runs: Vec<FoldRun>,
    /// Holdout probabilities per run, `[task][i]` over that fold's test rows.
    pub holdout: Vec<Vec<Vec<f64>>>,
    pub report: MetricsReport,
}

/// Trains and evaluates every selected fold. Folds are independent, so they
/// may run concurrently; results are gathered in fold order.
pub fn run_experiment(
    ds: &TabularDataset,
    plan: &SplitPlan,
    model: &ModelConfig,
    cfg: &TrainConfig,
    opts: &RunOptions<'_>,
) -> Result<Experiment> {
    cfg.validate(ds.schema())?;
    model.validate()?;
    let selected: Vec<usize> = match &opts.folds {
        Some(f) => f.clone(),
        None => (0..plan.folds.len()).collect(),
    };
    for &k in &selected {
        let fold = plan
            .folds
            .get(k)
            .ok_or_else(|| Error::config("folds", format!("fold {k} does not exist")))?;
        if fold.test.is_empty() {
            return Err(Error::Contract(format!("fold {k} has an empty test split")));
        }
    }
    let one = |k: usize| -> Result<(FoldRun, FoldMetrics, Vec<Vec<f64>>)> {
        let fold = &plan.folds[k];
        let run = train_fold(ds, fold, k, model, cfg, opts.checkpoint_dir, opts.progress)?;
        let (metrics, probs) = evaluate(&run.checkpoint, ds, &fold.test, cfg.threshold, k)?;
        Ok((run, metrics, probs))
    };
    let threads = opts.threads.max(1);
    let mut results = Vec::with_capacity(selected.len());
    for wave in selected.chunks(threads) {
        if wave.len() == 1 {
            results.push(one(wave[0])?);
            continue;
        }
        let out: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.iter().map(|&k| s.spawn(move || one(k))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Contract("training thread panicked".into())))
                })
                .collect()
        });
        for r in out {
            results.push(r?);
        }
    }
    let mut runs = Vec::new();
    let mut folds = Vec::new();
    let mut holdout = Vec::new();
    for (run, metrics, probs) in results {
        runs.push(run);
        folds.push(metrics);
        holdout.push(probs);
    }
    let parts: Vec<(&[usize], &[Vec<f64>])> = runs
        .iter()
        .zip(&holdout)
        .map(|(r, p)| (plan.folds[r.fold].test.as_slice(), p.as_slice()))
        .collect();
    let cdf = pooled_cdf(ds, &parts, &opts.grid)?;
    let report = MetricsReport::aggregate(&ds.schema().tasks, folds, cdf);
    Ok(Experiment {
        runs,
        holdout,
        report,
    })
}
