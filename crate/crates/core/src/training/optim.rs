use crate::model::ModelParams;
use crate::tensor::Tensor;
use crate::training::config::AdamConfig;

/// Adam with bias-corrected moments, one state slot per parameter tensor in
/// [`ModelParams::iter`] order.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Adam {
            config,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (k, (_, p)) in params.iter_mut().into_iter().enumerate() {
            let g = grads[k].data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// `p -= lr · g` elementwise.
pub fn sgd_step(p: &mut Tensor, g: &Tensor, lr: f64) {
    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
        *w -= lr * d;
    }
}
