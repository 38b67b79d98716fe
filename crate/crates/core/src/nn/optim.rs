use super::{Grads, Network};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(net: &Network, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            velocity: net.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// `v = mu * v + g + wd * p; p -= lr * v`, gradients pre-scaled by `grad_scale`.
    pub fn step(&mut self, net: &mut Network, grads: &Grads, lr: f64, grad_scale: f32) {
        let lr = lr as f32;
        for ((p, g), v) in net
            .params_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.velocity)
        {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi * grad_scale + self.weight_decay * *pi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// Cosine decay from `base` to zero over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step as f64 / total as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}
