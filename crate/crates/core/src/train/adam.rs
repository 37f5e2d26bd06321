use std::collections::BTreeMap;

use crate::nn::Param;

/// Adam with bias correction and coupled L2 weight decay (`g + wd * theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// First and second moments by parameter name.
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: BTreeMap::new() }
    }

    /// One update of every trainable parameter that holds a gradient.
    /// Parameters without a gradient (unused this step) are left untouched,
    /// moments included.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params {
            if !p.is_trainable() {
                continue;
            }
            let Some(grad) = p.grad() else { continue };
            let n = grad.len();
            let (m, v) = self.moments.entry(p.name.clone()).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mut theta = p.data().to_vec();
            for i in 0..n {
                let g = grad[i] + self.weight_decay * theta[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_data(theta);
        }
    }
}

/// Global L2 norm of all trainable gradients.
pub fn grad_norm(params: &[&Param]) -> f64 {
    params
        .iter()
        .filter(|p| p.is_trainable())
        .filter_map(|p| p.grad())
        .flat_map(|g| g.into_iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = grad_norm(&params.iter().map(|p| &**p).collect::<Vec<_>>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut().filter(|p| p.is_trainable()) {
            if let Some(g) = p.grad() {
                p.tensor().set_grad(g.iter().map(|x| x * s).collect()).expect("same length");
            }
        }
    }
    norm
}
