//! Single-gradient-step task balancing: every task first takes a lookahead
//! step on the shared parameters, the shared parameters then move along the
//! sum of task gradients evaluated at those lookahead points, and each head
//! moves along its own task gradient at the starting point. Plain SGD.

use crate::autodiff::Graph;
use crate::error::Result;
use crate::model::{bind_params, forward, Batch, ModelConfig, ModelParams, Role};
use crate::objectives::graph as obj;
use crate::tensor::Tensor;
use crate::training::optim::sgd_step;

/// Loss of one task and its gradients at a given (shared, head) point.
pub struct TaskGrad {
    pub loss: f64,
    pub shared: Vec<Tensor>,
    pub head: Vec<Tensor>,
}

/// One update over an abstract shared/head split. `task_grad(m, shared, head)`
/// evaluates task `m`. Returns the task losses at the starting point.
pub fn gradstep<F>(
    shared: &mut [Tensor],
    heads: &mut [Vec<Tensor>],
    beta: f64,
    eta: f64,
    mut task_grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[Tensor], &[Tensor]) -> Result<TaskGrad>,
{
    let first = (0..heads.len())
        .map(|m| task_grad(m, shared, &heads[m]))
        .collect::<Result<Vec<_>>>()?;
    let mut total: Vec<Tensor> = shared.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (m, start) in first.iter().enumerate() {
        let mut look = shared.to_vec();
        for (p, g) in look.iter_mut().zip(&start.shared) {
            sgd_step(p, g, beta);
        }
        let at_look = task_grad(m, &look, &heads[m])?;
        for (acc, g) in total.iter_mut().zip(&at_look.shared) {
            sgd_step(acc, g, -1.0);
        }
    }
    for (p, g) in shared.iter_mut().zip(&total) {
        sgd_step(p, g, eta);
    }
    for (head, start) in heads.iter_mut().zip(&first) {
        for (p, g) in head.iter_mut().zip(&start.head) {
            sgd_step(p, g, eta);
        }
    }
    Ok(first.into_iter().map(|t| t.loss).collect())
}

pub(crate) fn split(params: &ModelParams) -> (Vec<Tensor>, Vec<Vec<Tensor>>) {
    let mut shared = Vec::new();
    let mut heads = vec![Vec::new(); params.heads.len()];
    for (role, t) in params.iter() {
        match role {
            Role::Shared => shared.push(t.clone()),
            Role::Head(m) => heads[m].push(t.clone()),
        }
    }
    (shared, heads)
}

/// Writes `shared` and, for the listed heads, their tensors back into `params`.
pub(crate) fn assign(params: &mut ModelParams, shared: &[Tensor], heads: &[(usize, &[Tensor])]) {
    let mut s = shared.iter();
    let mut cursor = vec![0usize; params.heads.len()];
    for (role, t) in params.iter_mut() {
        match role {
            Role::Shared => *t = s.next().expect("shared tensor count").clone(),
            Role::Head(m) => {
                if let Some((_, src)) = heads.iter().find(|(k, _)| *k == m) {
                    *t = src[cursor[m]].clone();
                }
                cursor[m] += 1;
            }
        }
    }
}

/// Result of one model grad-step update.
pub struct GradstepStep {
    /// Per-task BCE at the starting parameters.
    pub losses: Vec<f64>,
    /// `[rows × M]` logits at the starting parameters.
    pub logits: Vec<f64>,
}

/// Grad-step update of a multi-head model on one batch; `labels[m]` holds task `m`'s labels.
pub fn gradstep_update(
    params: &mut ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    labels: &[Vec<u8>],
    beta: f64,
    eta: f64,
) -> Result<GradstepStep> {
    let heads_n = params.heads.len();
    let template = params.clone();
    let mut logits = vec![0.0; batch.rows * heads_n];
    let mut seen = vec![false; heads_n];
    let (mut shared, mut heads) = split(params);
    let losses = gradstep(&mut shared, &mut heads, beta, eta, |m, sh, hd| {
        let mut p = template.clone();
        assign(&mut p, sh, &[(m, hd)]);
        let mut g = Graph::new();
        let vars = bind_params(&mut g, &p);
        let pass = forward(&mut g, &vars, config, batch)?;
        // the first evaluation of each task is at the starting point
        if !seen[m] {
            seen[m] = true;
            let z = g.value(pass.logits).data();
            for r in 0..batch.rows {
                logits[r * heads_n + m] = z[r * heads_n + m];
            }
        }
        let z = obj::task_logits(&mut g, pass.logits, m)?;
        let loss = obj::bce(&mut g, z, &labels[m])?;
        let grads = g.backward(loss)?;
        let mut shared_g = Vec::new();
        let mut head_g = Vec::new();
        for (role, v) in vars.iter() {
            match role {
                Role::Shared => shared_g.push(grads.get(*v)),
                Role::Head(k) if k == m => head_g.push(grads.get(*v)),
                Role::Head(_) => {}
            }
        }
        Ok(TaskGrad {
            loss: g.value(loss).data()[0],
            shared: shared_g,
            head: head_g,
        })
    })?;
    let head_refs: Vec<(usize, &[Tensor])> = heads
        .iter()
        .enumerate()
        .map(|(m, h)| (m, h.as_slice()))
        .collect();
    assign(params, &shared, &head_refs);
    Ok(GradstepStep { losses, logits })
}
