//! Permutation feature importance on a holdout split.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::metrics::{auroc, Stat};
use crate::model::Checkpoint;
use crate::training::derive_seed;

#[derive(Clone, Debug)]
pub struct ImportanceOptions {
    pub repetitions: usize,
    pub seed: u64,
    /// Use the identity permutation; every drop is then exactly zero.
    pub identity: bool,
    pub threads: usize,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            repetitions: 5,
            seed: 0,
            identity: false,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub task: String,
    pub feature: String,
    /// Baseline AUROC minus the mean permuted AUROC; `None` when no repetition
    /// produced a defined AUROC.
    pub mean_drop: Option<f64>,
    pub sd: Option<f64>,
    /// Repetitions that contributed.
    pub used: usize,
}

/// A repetition dropped because the permuted AUROC was undefined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub task: String,
    pub feature: String,
    pub repetition: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub tasks: Vec<String>,
    pub features: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub baseline: Vec<Option<f64>>,
    /// Task-major: `entries[t * features.len() + f]`.
    pub entries: Vec<ImportanceEntry>,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub rank: usize,
    pub feature: String,
    pub mean_drop: Option<f64>,
    pub sd: Option<f64>,
}

enum Column {
    Categorical(usize),
    Continuous(usize),
}

impl ImportanceTable {
    pub fn entry(&self, task: &str, feature: &str) -> Option<&ImportanceEntry> {
        self.entries
            .iter()
            .find(|e| e.task == task && e.feature == feature)
    }

    /// Full ranking of task `t`: descending mean drop, then by name. Undefined
    /// drops sort last.
    pub fn ranking(&self, t: usize) -> Vec<Ranked> {
        let f = self.features.len();
        let mut rows: Vec<&ImportanceEntry> = self.entries[t * f..(t + 1) * f].iter().collect();
        rows.sort_by(|a, b| {
            let key = |e: &ImportanceEntry| e.mean_drop.unwrap_or(f64::NEG_INFINITY);
            key(b)
                .total_cmp(&key(a))
                .then_with(|| a.feature.cmp(&b.feature))
        });
        rows.into_iter()
            .enumerate()
            .map(|(i, e)| Ranked {
                rank: i + 1,
                feature: e.feature.clone(),
                mean_drop: e.mean_drop,
                sd: e.sd,
            })
            .collect()
    }

    /// 1-based rank of `feature` for `task`.
    pub fn rank_of(&self, task: &str, feature: &str) -> Option<usize> {
        let t = self.tasks.iter().position(|x| x == task)?;
        self.ranking(t)
            .into_iter()
            .find(|r| r.feature == feature)
            .map(|r| r.rank)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `task,feature,mean_drop,sd,rank`, ranked order within each task.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["task", "feature", "mean_drop", "sd", "rank"])?;
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for (t, task) in self.tasks.iter().enumerate() {
            for r in self.ranking(t) {
                w.write_record([
                    task,
                    &r.feature,
                    &fmt(r.mean_drop),
                    &fmt(r.sd),
                    &r.rank.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<importance csv>", e))?;
        Ok(())
    }
}

/// Top `k` features per task.
pub fn top_k(table: &ImportanceTable, k: usize) -> Result<Vec<Vec<Ranked>>> {
    if k > table.features.len() {
        return Err(Error::Contract(format!(
            "top {k} requested but there are only {} features",
            table.features.len()
        )));
    }
    Ok((0..table.tasks.len())
        .map(|t| table.ranking(t).into_iter().take(k).collect())
        .collect())
}

/// Shuffles each model input column of the holdout `rows` independently and
/// records the per-task AUROC drop. Feature `f` draws its permutations from
/// its own stream, so the result does not depend on `threads`.
pub fn permutation_importance(
    checkpoint: &Checkpoint,
    ds: &TabularDataset,
    rows: &[usize],
    opts: &ImportanceOptions,
) -> Result<ImportanceTable> {
    if opts.repetitions == 0 {
        return Err(Error::config("repetitions", "must be at least 1"));
    }
    if rows.is_empty() {
        return Err(Error::Contract(
            "importance needs a non-empty holdout split".into(),
        ));
    }
    let schema = ds.schema();
    if checkpoint.task_names != schema.tasks {
        return Err(Error::Schema(
            "checkpoint tasks do not match the dataset".into(),
        ));
    }
    let features = schema.input_features();
    let model_cat = schema.model_categorical();
    let columns: Vec<Column> = model_cat
        .iter()
        .map(|&c| Column::Categorical(c))
        .chain((0..schema.continuous.len()).map(Column::Continuous))
        .collect();
    let tasks = schema.tasks.clone();
    let labels: Vec<Vec<u8>> = (0..tasks.len()).map(|t| ds.task_labels(t, rows)).collect();
    let baseline: Vec<Option<f64>> = checkpoint
        .predict_proba(ds, rows)?
        .iter()
        .zip(&labels)
        .map(|(p, y)| auroc(p, y))
        .collect();

    // Permuted AUROCs per feature: `[repetition][task]`.
    let one = |f: usize| -> Result<Vec<Vec<Option<f64>>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[f as u64]));
        let mut out = Vec::with_capacity(opts.repetitions);
        for _ in 0..opts.repetitions {
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            if !opts.identity {
                perm.shuffle(&mut rng);
            }
            let shuffled = match columns[f] {
                Column::Categorical(c) => ds.with_categorical_permuted(c, rows, &perm),
                Column::Continuous(c) => ds.with_continuous_permuted(c, rows, &perm),
            };
            let probs = checkpoint.predict_proba(&shuffled, rows)?;
            out.push(
                probs
                    .iter()
                    .zip(&labels)
                    .map(|(p, y)| auroc(p, y))
                    .collect(),
            );
        }
        Ok(out)
    };
    let mut permuted = Vec::with_capacity(features.len());
    let indices: Vec<usize> = (0..features.len()).collect();
    for wave in indices.chunks(opts.threads.max(1)) {
        let out: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.iter().map(|&f| s.spawn(move || one(f))).collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(Error::Contract("importance thread panicked".into()))
                    })
                })
                .collect()
        });
        for r in out {
            permuted.push(r?);
        }
    }

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        for (f, feature) in features.iter().enumerate() {
            let mut drops = Vec::new();
            for (rep, aucs) in permuted[f].iter().enumerate() {
                match (baseline[t], aucs[t]) {
                    (Some(b), Some(a)) => drops.push(Some(b - a)),
                    _ => skipped.push(Skipped {
                        task: task.clone(),
                        feature: feature.clone(),
                        repetition: rep,
                    }),
                }
            }
            let stat = Stat::of(&drops);
            entries.push(ImportanceEntry {
                task: task.clone(),
                feature: feature.clone(),
                mean_drop: stat.mean,
                sd: stat.sd,
                used: stat.n,
            });
        }
    }
    Ok(ImportanceTable {
        tasks,
        features,
        repetitions: opts.repetitions,
        seed: opts.seed,
        baseline,
        entries,
        skipped,
    })
}
