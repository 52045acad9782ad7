//! Evaluation metrics. Undefined cases (a missing label class, too few
//! populated subgroups) come back as `None` rather than a placeholder number.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mann–Whitney AUROC with average ranks for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision–recall step curve. Equal scores form one threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut new_tp = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                new_tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += new_tp;
        area += (tp as f64 / (tp + fp) as f64) * (new_tp as f64 / pos as f64);
        i = j;
    }
    Some(area)
}

/// Hard predictions `σ(z) ≥ t` from probabilities.
pub fn threshold(probs: &[f64], t: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= t)).collect()
}

fn group_ids(groups: &[Option<u32>]) -> Vec<u32> {
    let mut ids: Vec<u32> = groups.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Largest gap in positive-prediction rate between populated subgroups.
/// Rows with no subgroup are ignored.
pub fn dpd(preds: &[u8], groups: &[Option<u32>]) -> Option<f64> {
    assert_eq!(
        preds.len(),
        groups.len(),
        "predictions and groups differ in length"
    );
    let rates: Vec<f64> = group_ids(groups)
        .into_iter()
        .map(|k| {
            let (mut n, mut hits) = (0usize, 0usize);
            for (p, g) in preds.iter().zip(groups) {
                if *g == Some(k) {
                    n += 1;
                    hits += *p as usize;
                }
            }
            hits as f64 / n as f64
        })
        .collect();
    (rates.len() >= 2).then(|| spread(&rates))
}

/// TPR gap plus FPR gap over subgroups that have both label classes.
pub fn eod(preds: &[u8], labels: &[u8], groups: &[Option<u32>]) -> Option<f64> {
    assert_eq!(
        preds.len(),
        groups.len(),
        "predictions and groups differ in length"
    );
    assert_eq!(
        labels.len(),
        groups.len(),
        "labels and groups differ in length"
    );
    let mut tprs = Vec::new();
    let mut fprs = Vec::new();
    for k in group_ids(groups) {
        let mut c = [[0usize; 2]; 2]; // [label][pred]
        for i in 0..preds.len() {
            if groups[i] == Some(k) {
                c[labels[i] as usize][preds[i] as usize] += 1;
            }
        }
        let (p, n) = (c[1][0] + c[1][1], c[0][0] + c[0][1]);
        if p == 0 || n == 0 {
            continue;
        }
        tprs.push(c[1][1] as f64 / p as f64);
        fprs.push(c[0][1] as f64 / n as f64);
    }
    (tprs.len() >= 2).then(|| spread(&tprs) + spread(&fprs))
}

/// `(before - after) / before`.
pub fn reduction_fraction(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) {
        return Err(Error::Domain(format!(
            "reduction needs a positive baseline, got {before}"
        )));
    }
    Ok((before - after) / before)
}

/// 0.00, 0.01, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub subgroup: String,
    pub count: usize,
    pub cdf: Vec<f64>,
}

/// Empirical CDFs of predicted probability per subgroup, on a shared grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub task: String,
    pub attribute: String,
    pub grid: Vec<f64>,
    pub curves: Vec<CdfCurve>,
    /// Subgroups left out because no row belongs to them.
    pub warnings: Vec<String>,
}

pub fn cdf_table(
    task: &str,
    attribute: &str,
    probs: &[f64],
    groups: &[Option<u32>],
    subgroup_names: &[String],
    grid: &[f64],
) -> Result<CdfTable> {
    if grid.is_empty()
        || grid.windows(2).any(|w| !(w[0] < w[1]))
        || grid[0] < 0.0
        || grid[grid.len() - 1] > 1.0
    {
        return Err(Error::config(
            "grid",
            "must be strictly increasing within [0, 1]",
        ));
    }
    if probs.len() != groups.len() {
        return Err(Error::Contract(
            "probabilities and groups differ in length".into(),
        ));
    }
    let mut curves = Vec::new();
    let mut warnings = Vec::new();
    for (k, name) in subgroup_names.iter().enumerate() {
        let mut members: Vec<f64> = probs
            .iter()
            .zip(groups)
            .filter(|(_, g)| **g == Some(k as u32))
            .map(|(p, _)| *p)
            .collect();
        if members.is_empty() {
            warnings.push(format!(
                "subgroup `{name}` of `{attribute}` has no rows; omitted"
            ));
            continue;
        }
        members.sort_by(f64::total_cmp);
        let n = members.len() as f64;
        let cdf = grid
            .iter()
            .map(|&x| members.partition_point(|&p| p <= x) as f64 / n)
            .collect();
        curves.push(CdfCurve {
            subgroup: name.clone(),
            count: members.len(),
            cdf,
        });
    }
    Ok(CdfTable {
        task: task.into(),
        attribute: attribute.into(),
        grid: grid.to_vec(),
        curves,
        warnings,
    })
}

impl CdfTable {
    /// Largest vertical distance between any two subgroup curves on the grid.
    pub fn max_gap(&self) -> Option<f64> {
        if self.curves.len() < 2 {
            return None;
        }
        (0..self.grid.len())
            .map(|i| spread(&self.curves.iter().map(|c| c.cdf[i]).collect::<Vec<_>>()))
            .max_by(f64::total_cmp)
    }
}

/// Exact sup-distance between subgroup empirical CDFs, checked at every sample value.
pub fn cdf_max_gap(probs: &[f64], groups: &[Option<u32>]) -> Option<f64> {
    let ids = group_ids(groups);
    if ids.len() < 2 {
        return None;
    }
    let sorted: Vec<Vec<f64>> = ids
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = probs
                .iter()
                .zip(groups)
                .filter(|(_, g)| **g == Some(k))
                .map(|(p, _)| *p)
                .collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let mut gap: f64 = 0.0;
    for &x in probs {
        let at: Vec<f64> = sorted
            .iter()
            .map(|v| v.partition_point(|&p| p <= x) as f64 / v.len() as f64)
            .collect();
        gap = gap.max(spread(&at));
    }
    Some(gap)
}

/// Writes `task,attribute,subgroup,x,cdf` rows.
pub fn write_cdf_csv<W: Write>(tables: &[CdfTable], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "attribute", "subgroup", "x", "cdf"])?;
    for t in tables {
        for c in &t.curves {
            for (x, v) in t.grid.iter().zip(&c.cdf) {
                w.write_record([
                    &t.task,
                    &t.attribute,
                    &c.subgroup,
                    &format!("{x:.2}"),
                    &v.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<cdf csv>", e))?;
    Ok(())
}

/// Mean and sample standard deviation of the defined values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// How many folds had a defined value.
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[Option<f64>]) -> Stat {
        let v: Vec<f64> = values.iter().flatten().copied().collect();
        if v.is_empty() {
            return Stat {
                mean: None,
                sd: None,
                n: 0,
            };
        }
        if v.iter().all(|&x| x == v[0]) {
            return Stat {
                mean: Some(v[0]),
                sd: Some(0.0),
                n: v.len(),
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat {
            mean: Some(mean),
            sd: Some(sd),
            n: v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessCell {
    pub attribute: String,
    pub task: String,
    pub dpd: Option<f64>,
    pub eod: Option<f64>,
}

/// Holdout metrics of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auroc: Vec<Option<f64>>,
    pub auprc: Vec<Option<f64>>,
    pub fairness: Vec<FairnessCell>,
}

impl FoldMetrics {
    /// Max minus min task AUROC in this fold, if every task has one.
    pub fn auroc_gap(&self) -> Option<f64> {
        gap_of(&self.auroc)
    }
}

fn gap_of(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| spread(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub auroc: Stat,
    pub auprc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub attribute: String,
    pub task: String,
    pub dpd: Stat,
    pub eod: Stat,
}

/// Max minus min of the per-task means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskSummary>,
    pub diff: DiffRow,
    pub fairness: Vec<FairnessSummary>,
    pub folds: Vec<FoldMetrics>,
    /// Holdout predictions of every fold pooled per (task, attribute).
    pub cdf: Vec<CdfTable>,
}

impl MetricsReport {
    pub fn aggregate(
        task_names: &[String],
        folds: Vec<FoldMetrics>,
        cdf: Vec<CdfTable>,
    ) -> MetricsReport {
        let tasks: Vec<TaskSummary> = task_names
            .iter()
            .enumerate()
            .map(|(m, name)| TaskSummary {
                task: name.clone(),
                auroc: Stat::of(&folds.iter().map(|f| f.auroc[m]).collect::<Vec<_>>()),
                auprc: Stat::of(&folds.iter().map(|f| f.auprc[m]).collect::<Vec<_>>()),
            })
            .collect();
        let diff = DiffRow {
            auroc: gap_of(&tasks.iter().map(|t| t.auroc.mean).collect::<Vec<_>>()),
            auprc: gap_of(&tasks.iter().map(|t| t.auprc.mean).collect::<Vec<_>>()),
        };
        let mut cells: BTreeMap<(String, String), (Vec<Option<f64>>, Vec<Option<f64>>)> =
            BTreeMap::new();
        let mut order = Vec::new();
        for f in &folds {
            for c in &f.fairness {
                let key = (c.attribute.clone(), c.task.clone());
                let e = cells.entry(key.clone()).or_insert_with(|| {
                    order.push(key);
                    Default::default()
                });
                e.0.push(c.dpd);
                e.1.push(c.eod);
            }
        }
        let fairness = order
            .into_iter()
            .map(|key| {
                let (d, e) = &cells[&key];
                FairnessSummary {
                    attribute: key.0,
                    task: key.1,
                    dpd: Stat::of(d),
                    eod: Stat::of(e),
                }
            })
            .collect();
        MetricsReport {
            tasks,
            diff,
            fairness,
            folds,
            cdf,
        }
    }

    pub fn mean_auroc(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.tasks.iter().map(|t| t.auroc.mean).collect();
        v.filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn fairness_cell(&self, attribute: &str, task: &str) -> Option<&FairnessSummary> {
        self.fairness
            .iter()
            .find(|f| f.attribute == attribute && f.task == task)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use std::cmp::Ordering;

    fn pairwise_auroc(s: &[f64], y: &[u8]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    wins += match s[i].partial_cmp(&s[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        wins / pairs
    }

    // Enumerate every distinct threshold, predicted positive = score >= t.
    fn threshold_auprc(s: &[f64], y: &[u8]) -> f64 {
        let pos = y.iter().filter(|&&v| v == 1).count() as f64;
        let mut ts: Vec<f64> = s.to_vec();
        ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ts.dedup();
        let (mut prev_recall, mut area) = (0.0, 0.0);
        for t in ts {
            let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
            let fp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 0).count() as f64;
            let recall = tp / pos;
            area += tp / (tp + fp) * (recall - prev_recall);
            prev_recall = recall;
        }
        area
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
        loop {
            let s: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
                .collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            if y.contains(&0) && y.contains(&1) {
                return (s, y);
            }
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.9], &[0, 1]), Some(1.0));
        assert_eq!(auroc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]), Some(0.5));
        assert_eq!(auroc(&[0.1, 0.9], &[1, 1]), None);
        assert_eq!(auroc(&[0.1, 0.9], &[0, 0]), None);
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..50 {
            let n = rng.random_range(2..=50);
            // few score levels so ties are common
            let (s, y) = random_instance(&mut rng, n, if k % 2 == 0 { 5 } else { 1000 });
            assert!((auroc(&s, &y).unwrap() - pairwise_auroc(&s, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]), Some(1.0));
        assert_eq!(auprc(&[0.3, 0.4], &[0, 0]), None);
        // 4-point set: [1, 0, 1, 0] by descending score → 1·½ + ⅔·½
        let v = auprc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert_relative_eq!(v, 0.5 + 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(
            v,
            threshold_auprc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]),
            max_relative = 1e-15
        );
    }

    #[test]
    fn auprc_matches_threshold_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..50 {
            let n = rng.random_range(2..=20);
            let (s, y) = random_instance(&mut rng, n, if k % 2 == 0 { 4 } else { 1000 });
            assert!((auprc(&s, &y).unwrap() - threshold_auprc(&s, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn auprc_of_random_scores_is_near_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<u8> = (0..2000).map(|_| u8::from(rng.random_bool(0.2))).collect();
        let s: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let prev = y.iter().map(|&v| v as f64).sum::<f64>() / 2000.0;
        assert!((auprc(&s, &y).unwrap() - prev).abs() < 0.05);
    }

    fn naive_dpd(preds: &[u8], groups: &[Option<u32>]) -> Option<f64> {
        let mut rates = vec![];
        for k in 0..8u32 {
            let members: Vec<u8> = (0..preds.len())
                .filter(|&i| groups[i] == Some(k))
                .map(|i| preds[i])
                .collect();
            if !members.is_empty() {
                rates.push(members.iter().map(|&p| p as f64).sum::<f64>() / members.len() as f64);
            }
        }
        if rates.len() < 2 {
            return None;
        }
        let mut best: f64 = 0.0;
        for a in &rates {
            for b in &rates {
                best = best.max((a - b).abs());
            }
        }
        Some(best)
    }

    fn naive_eod(preds: &[u8], labels: &[u8], groups: &[Option<u32>]) -> Option<f64> {
        let mut rows = vec![];
        for k in 0..8u32 {
            let idx: Vec<usize> = (0..preds.len()).filter(|&i| groups[i] == Some(k)).collect();
            let tp = idx
                .iter()
                .filter(|&&i| labels[i] == 1 && preds[i] == 1)
                .count() as f64;
            let p = idx.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let fp = idx
                .iter()
                .filter(|&&i| labels[i] == 0 && preds[i] == 1)
                .count() as f64;
            let n = idx.iter().filter(|&&i| labels[i] == 0).count() as f64;
            if p > 0.0 && n > 0.0 {
                rows.push((tp / p, fp / n));
            }
        }
        if rows.len() < 2 {
            return None;
        }
        let (mut t, mut f): (f64, f64) = (0.0, 0.0);
        for a in &rows {
            for b in &rows {
                t = t.max((a.0 - b.0).abs());
                f = f.max((a.1 - b.1).abs());
            }
        }
        Some(t + f)
    }

    #[test]
    fn dpd_examples() {
        let groups = [Some(0), Some(0), Some(1), Some(1)];
        assert_eq!(dpd(&[1, 0, 0, 1], &groups), Some(0.0));
        // rates 3/10 and 7/10
        let preds: Vec<u8> = (0..20)
            .map(|i| u8::from(if i < 10 { i < 3 } else { i < 17 }))
            .collect();
        let g: Vec<Option<u32>> = (0..20).map(|i| Some(u32::from(i >= 10))).collect();
        assert_relative_eq!(dpd(&preds, &g).unwrap(), 0.4, max_relative = 1e-12);
        let preds: Vec<u8> = (0..30)
            .map(|i| u8::from((i % 10) < [2, 5, 9][i / 10]))
            .collect();
        let g: Vec<Option<u32>> = (0..30).map(|i| Some((i / 10) as u32)).collect();
        assert_relative_eq!(dpd(&preds, &g).unwrap(), 0.7, max_relative = 1e-12);
        assert_eq!(dpd(&[1, 0], &[Some(0), None]), None);
    }

    #[test]
    fn eod_examples() {
        // group 0: TPR 9/10, FPR 1/10; group 1: TPR 5/10, FPR 1/10
        let mut preds = vec![];
        let mut labels = vec![];
        let mut groups = vec![];
        for (k, tpr, fpr) in [(0u32, 9, 1), (1, 5, 1)] {
            for i in 0..10 {
                preds.push(u8::from(i < tpr));
                labels.push(1);
                groups.push(Some(k));
                preds.push(u8::from(i < fpr));
                labels.push(0);
                groups.push(Some(k));
            }
        }
        assert_relative_eq!(
            eod(&preds, &labels, &groups).unwrap(),
            0.4,
            max_relative = 1e-12
        );

        let mut preds = vec![];
        let mut labels = vec![];
        let mut groups = vec![];
        for (k, tpr, fpr) in [(0u32, 8, 3), (1, 6, 1)] {
            for i in 0..10 {
                preds.extend([u8::from(i < tpr), u8::from(i < fpr)]);
                labels.extend([1, 0]);
                groups.extend([Some(k), Some(k)]);
            }
        }
        assert_relative_eq!(
            eod(&preds, &labels, &groups).unwrap(),
            0.4,
            max_relative = 1e-12
        );

        // identical behaviour, and a group without negatives is dropped
        let g = [Some(0), Some(0), Some(1), Some(1), Some(2)];
        assert_eq!(eod(&[1, 0, 1, 0, 1], &[1, 0, 1, 0, 1], &g), Some(0.0));
        assert_eq!(
            eod(&[1, 0, 1], &[1, 0, 1], &[Some(0), Some(0), Some(1)]),
            None
        );
    }

    #[test]
    fn fairness_metrics_match_counting_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let k = rng.random_range(1..5u32);
            let preds: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let groups: Vec<Option<u32>> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        None
                    } else {
                        Some(rng.random_range(0..k))
                    }
                })
                .collect();
            assert_eq!(dpd(&preds, &groups), naive_dpd(&preds, &groups));
            assert_eq!(
                eod(&preds, &labels, &groups),
                naive_eod(&preds, &labels, &groups)
            );
        }
    }

    #[test]
    fn reduction_examples() {
        assert_relative_eq!(
            reduction_fraction(0.1176, 0.0715).unwrap(),
            0.392,
            epsilon = 0.001
        );
        assert_eq!(reduction_fraction(0.3, 0.3).unwrap(), 0.0);
        assert_eq!(reduction_fraction(0.3, 0.0).unwrap(), 1.0);
        assert!(matches!(
            reduction_fraction(0.0, 0.1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cdf_examples() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let t = cdf_table(
            "t",
            "attr",
            &[0.2, 0.2, 0.8, 0.5],
            &[Some(0), Some(0), Some(0), Some(1)],
            &names,
            &[0.25, 1.0],
        )
        .unwrap();
        assert_eq!(t.curves.len(), 2);
        assert_relative_eq!(t.curves[0].cdf[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_eq!(t.curves[0].cdf[1], 1.0);
        assert_eq!(t.curves[1].cdf, vec![0.0, 1.0]);
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.max_gap(), Some(2.0 / 3.0));
        assert!(cdf_table("t", "a", &[0.1], &[Some(0)], &names, &[0.5, 0.5]).is_err());
        assert!(cdf_table("t", "a", &[0.1], &[Some(0)], &names, &[0.5, 1.5]).is_err());
        assert_eq!(default_grid().len(), 101);
    }

    #[test]
    fn cdf_csv_layout() {
        let t = cdf_table("t", "g", &[0.3], &[Some(0)], &["x".into()], &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_cdf_csv(&[t], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "task,attribute,subgroup,x,cdf\nt,g,x,0.00,0\nt,g,x,1.00,1\n"
        );
    }

    #[test]
    fn exact_gap_matches_hand_count() {
        let probs = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
        let groups = [Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)];
        assert_eq!(cdf_max_gap(&probs, &groups), Some(1.0));
        assert_eq!(cdf_max_gap(&probs, &[Some(0); 6]), None);
    }

    #[test]
    fn identical_folds_have_zero_sd() {
        let fold = |i| FoldMetrics {
            fold: i,
            auroc: vec![Some(0.7), Some(0.9)],
            auprc: vec![Some(0.2), None],
            fairness: vec![FairnessCell {
                attribute: "A".into(),
                task: "t0".into(),
                dpd: Some(0.1),
                eod: None,
            }],
        };
        let report = MetricsReport::aggregate(
            &["t0".into(), "t1".into()],
            vec![fold(0), fold(1), fold(2)],
            vec![],
        );
        assert_eq!(report.tasks[0].auroc.sd, Some(0.0));
        assert_eq!(
            report.tasks[1].auprc,
            Stat {
                mean: None,
                sd: None,
                n: 0
            }
        );
        assert_relative_eq!(report.diff.auroc.unwrap(), 0.2, max_relative = 1e-12);
        assert_eq!(report.diff.auprc, None);
        assert_eq!(report.fairness[0].dpd.mean, Some(0.1));
        assert_eq!(report.fairness[0].eod.n, 0);
        let back = MetricsReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn auroc_is_invariant_to_monotone_maps(s in prop::collection::vec(-5.0f64..5.0, 2..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<u8> = s.iter().map(|_| rng.random_range(0..2u8)).collect();
            y[0] = 0;
            y[1] = 1;
            let a = auroc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            prop_assert!((auroc(&t, &y).unwrap() - a).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auroc_flips_under_negation(s in prop::collection::hash_set(-100_000i64..100_000, 2..40), seed in any::<u64>()) {
            let s: Vec<f64> = s.into_iter().map(|v| v as f64).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut y: Vec<u8> = s.iter().map(|_| rng.random_range(0..2u8)).collect();
            y[0] = 0;
            y[1] = 1;
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((auroc(&s, &y).unwrap() + auroc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn group_metrics_ignore_relabeling(seed in any::<u64>(), n in 4usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
            let groups: Vec<Option<u32>> = (0..n).map(|_| Some(rng.random_range(0..3u32))).collect();
            let relabel: Vec<Option<u32>> = groups.iter().map(|g| g.map(|k| [7, 2, 5][k as usize])).collect();
            prop_assert_eq!(dpd(&preds, &groups), dpd(&preds, &relabel));
            prop_assert_eq!(eod(&preds, &labels, &groups), eod(&preds, &labels, &relabel));
        }

        #[test]
        fn cdf_curves_are_monotone(probs in prop::collection::vec(0.0f64..=1.0, 1..60)) {
            let groups: Vec<Option<u32>> = (0..probs.len()).map(|i| Some((i % 2) as u32)).collect();
            let t = cdf_table("t", "a", &probs, &groups, &["x".into(), "y".into()], &default_grid()).unwrap();
            for c in &t.curves {
                prop_assert!(c.cdf.windows(2).all(|w| w[0] <= w[1]));
                prop_assert_eq!(*c.cdf.last().unwrap(), 1.0);
            }
        }
    }
}
