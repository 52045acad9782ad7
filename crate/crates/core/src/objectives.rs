//! Training losses: BCE, focal, AUROC-weighted task balancing and the
//! subgroup disparity penalty.
//!
//! Each loss has a scalar `f64` form, used as a reference and in reports, and
//! a graph form in [`graph`] that the trainer differentiates.

use serde::{Deserialize, Serialize};

use crate::autodiff::softplus;
use crate::error::{Error, Result};

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]`, evaluated as `softplus(-s·z)` with `s = 2y-1`.
pub fn bce(logit: f64, y: u8) -> f64 {
    softplus(-sign(y) * logit)
}

/// Class-balanced, focused BCE. `γ = 0, α = 0.5` gives exactly half of [`bce`].
pub fn focal_loss(logit: f64, y: u8, alpha: f64, gamma: f64) -> f64 {
    let s = sign(y);
    // 1 - p_bal = σ(-s·z) = exp(-softplus(s·z))
    let modulator = (-gamma * softplus(s * logit)).exp();
    focal_alpha(y, alpha) * modulator * softplus(-s * logit)
}

pub fn multitask_loss(losses: &[f64]) -> f64 {
    losses.iter().sum()
}

pub fn balanced_loss(losses: &[f64], state: &TaskWeightState) -> f64 {
    losses
        .iter()
        .zip(state.multipliers())
        .map(|(l, c)| c * l)
        .sum()
}

/// Mean probability over the masked rows, `None` for an empty mask.
pub fn soft_group_rate(probs: &[f64], mask: &[bool]) -> Option<f64> {
    mean_where(probs, |i| mask[i])
}

/// Average of the member positives' and member negatives' mean probability.
/// `None` unless the group has both label classes.
pub fn soft_group_eo_rate(probs: &[f64], labels: &[u8], mask: &[bool]) -> Option<f64> {
    let pos = mean_where(probs, |i| mask[i] && labels[i] == 1)?;
    let neg = mean_where(probs, |i| mask[i] && labels[i] == 0)?;
    Some((pos + neg) / 2.0)
}

/// Most advantaged group rate minus the unweighted mean over groups.
pub fn disparity(rates: &[f64]) -> f64 {
    if rates.len() < 2 {
        return 0.0;
    }
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // mean of (max - r_i): same quantity, exactly 0 for equal rates and never negative
    rates.iter().map(|r| max - r).sum::<f64>() / rates.len() as f64
}

pub fn fairness_loss(disparities: &[f64]) -> f64 {
    disparities.iter().sum()
}

fn mean_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, v) in values.iter().enumerate() {
        if keep(i) {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn sign(y: u8) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

fn focal_alpha(y: u8, alpha: f64) -> f64 {
    if y == 1 {
        alpha
    } else {
        1.0 - alpha
    }
}

/// Metric that drives the task weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMetric {
    #[default]
    Auroc,
    Auprc,
}

/// Per-task metric values from the previous epoch and the weighting exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeightState {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub metric: WeightMetric,
}

impl TaskWeightState {
    /// Epoch-zero state: every `w_m = 0`, so the first epoch is a plain sum.
    pub fn new(tasks: usize, alpha: f64, metric: WeightMetric) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::config(
                "alpha",
                format!("must be finite and >= 0, got {alpha}"),
            ));
        }
        Ok(TaskWeightState {
            weights: vec![0.0; tasks],
            alpha,
            metric,
        })
    }

    /// `(1 - w_m)^α` per task. `α = 0` yields exactly 1.0 for each task.
    pub fn multipliers(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| (1.0 - w).powf(self.alpha))
            .collect()
    }

    /// Takes the new metric values; an undefined metric keeps the previous weight.
    pub fn update(&mut self, metrics: &[Option<f64>]) -> Result<()> {
        if metrics.len() != self.weights.len() {
            return Err(Error::Contract(format!(
                "expected {} task metrics, got {}",
                self.weights.len(),
                metrics.len()
            )));
        }
        for (w, m) in self.weights.iter_mut().zip(metrics) {
            if let Some(v) = *m {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!("task metric {v} outside [0, 1]")));
                }
                *w = v;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairnessMetric {
    #[serde(rename = "dp")]
    DemographicParity,
    #[serde(rename = "eo")]
    EqualizedOdds,
}

/// Which attribute the penalty looks at and how group rates are formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub attribute: String,
    pub subgroups: Vec<String>,
    pub metric: FairnessMetric,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl FairnessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subgroups.len() < 2 {
            return Err(Error::config(
                "fairness.subgroups",
                format!("attribute `{}` needs at least 2 subgroups", self.attribute),
            ));
        }
        Ok(())
    }
}

/// Differentiable forms of the losses above.
pub mod graph {
    use super::{focal_alpha, sign, FairnessMetric, TaskWeightState};
    use crate::autodiff::{Graph, Var};
    use crate::error::{Error, Result};
    use crate::tensor::Tensor;

    /// Column `m` of `[rows × M]` logits as a `[rows]` vector.
    pub fn task_logits(g: &mut Graph, logits: Var, m: usize) -> Result<Var> {
        let rows = g.shape(logits)[0];
        let col = g.slice_last(logits, m, 1)?;
        g.reshape(col, &[rows])
    }

    fn signed(g: &mut Graph, z: Var, labels: &[u8], flip: f64) -> Result<Var> {
        check_len(g, z, labels)?;
        let s = g.constant(Tensor::vector(
            labels.iter().map(|&y| flip * sign(y)).collect(),
        ));
        g.mul(z, s)
    }

    fn check_len(g: &Graph, z: Var, labels: &[u8]) -> Result<()> {
        if g.shape(z) != [labels.len()] {
            return Err(Error::Dimension {
                op: "loss",
                left: g.shape(z).to_vec(),
                right: vec![labels.len()],
            });
        }
        Ok(())
    }

    /// Mean BCE over the batch.
    pub fn bce(g: &mut Graph, z: Var, labels: &[u8]) -> Result<Var> {
        let neg = signed(g, z, labels, -1.0)?;
        let terms = g.softplus(neg);
        g.mean(terms)
    }

    /// Mean focal loss over the batch.
    pub fn focal_loss(g: &mut Graph, z: Var, labels: &[u8], alpha: f64, gamma: f64) -> Result<Var> {
        let pos = signed(g, z, labels, 1.0)?;
        let neg = g.scale(pos, -1.0);
        let ce = g.softplus(neg);
        let sp = g.softplus(pos);
        let damp = g.scale(sp, -gamma);
        let modulator = g.exp(damp);
        let a = g.constant(Tensor::vector(
            labels.iter().map(|&y| focal_alpha(y, alpha)).collect(),
        ));
        let weighted = g.mul(a, modulator)?;
        let terms = g.mul(weighted, ce)?;
        g.mean(terms)
    }

    /// Plain sum of task losses.
    pub fn multitask_loss(g: &mut Graph, losses: &[Var]) -> Result<Var> {
        let (&first, rest) = losses
            .split_first()
            .ok_or_else(|| Error::Contract("multi-task loss needs at least one task".into()))?;
        let mut total = first;
        for &l in rest {
            total = g.add(total, l)?;
        }
        Ok(total)
    }

    /// Sum of task losses scaled by the detached multipliers `(1 - w_m)^α`.
    pub fn balanced_loss(g: &mut Graph, losses: &[Var], state: &TaskWeightState) -> Result<Var> {
        if losses.len() != state.weights.len() {
            return Err(Error::Contract(format!(
                "{} task losses but {} task weights",
                losses.len(),
                state.weights.len()
            )));
        }
        let scaled: Vec<Var> = losses
            .iter()
            .zip(state.multipliers())
            .map(|(&l, c)| g.scale(l, c))
            .collect();
        multitask_loss(g, &scaled)
    }

    /// Soft fairness rate per subgroup present in the batch, in subgroup order.
    /// Groups absent from the batch (or lacking a label class, for EO) are skipped.
    pub fn group_rates(
        g: &mut Graph,
        probs: Var,
        labels: &[u8],
        groups: &[Option<u32>],
        n_groups: usize,
        metric: FairnessMetric,
    ) -> Result<Vec<Var>> {
        check_len(g, probs, labels)?;
        if groups.len() != labels.len() {
            return Err(Error::Contract(
                "subgroup codes and labels disagree on the row count".into(),
            ));
        }
        let mut rates = Vec::new();
        for k in 0..n_groups as u32 {
            let member = |i: usize, class: Option<u8>| {
                groups[i] == Some(k) && class.is_none_or(|c| labels[i] == c)
            };
            let pick = |class: Option<u8>| {
                (0..labels.len())
                    .filter(|&i| member(i, class))
                    .collect::<Vec<_>>()
            };
            match metric {
                FairnessMetric::DemographicParity => {
                    let idx = pick(None);
                    if idx.is_empty() {
                        continue;
                    }
                    let sel = g.gather(probs, &idx)?;
                    rates.push(g.mean(sel)?);
                }
                FairnessMetric::EqualizedOdds => {
                    let (pos, neg) = (pick(Some(1)), pick(Some(0)));
                    if pos.is_empty() || neg.is_empty() {
                        continue;
                    }
                    let sp = g.gather(probs, &pos)?;
                    let mp = g.mean(sp)?;
                    let sn = g.gather(probs, &neg)?;
                    let mn = g.mean(sn)?;
                    let both = g.add(mp, mn)?;
                    rates.push(g.scale(both, 0.5));
                }
            }
        }
        Ok(rates)
    }

    /// `max_i F_i - mean_i F_i`, or `None` with fewer than two groups.
    ///
    /// At exact ties the max's gradient is shared equally by the tied groups,
    /// so the penalty is stationary whenever all rates agree.
    pub fn disparity(g: &mut Graph, rates: &[Var]) -> Result<Option<Var>> {
        if rates.len() < 2 {
            return Ok(None);
        }
        let parts = rates
            .iter()
            .map(|&r| g.reshape(r, &[1]))
            .collect::<Result<Vec<_>>>()?;
        let all = g.concat_last(&parts)?;
        let values = g.value(all).data();
        let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..values.len()).filter(|&i| values[i] == top).collect();
        let best = g.gather(all, &tied)?;
        let max = g.mean(best)?;
        let mean = g.mean(all)?;
        Ok(Some(g.sub(max, mean)?))
    }

    /// Sum of the per-task disparities that exist; `None` if none do.
    pub fn fairness_loss(g: &mut Graph, disparities: &[Option<Var>]) -> Result<Option<Var>> {
        let present: Vec<Var> = disparities.iter().flatten().copied().collect();
        if present.is_empty() {
            return Ok(None);
        }
        multitask_loss(g, &present).map(Some)
    }
}
