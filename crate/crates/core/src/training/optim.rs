use serde::{Deserialize, Serialize};

use crate::model::{Param, Parameters, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state, aligned with a model's trainable parameters
/// in visit order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step<T: Real, M: Parameters<T>>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let mut idx = 0;
        let Optimizer { kind, lr, eps, m, v, .. } = self;
        model.visit_mut("", &mut |_, p: &mut Param<T>| {
            if !p.trainable {
                return;
            }
            if m.len() <= idx {
                m.push(vec![0.0; p.len()]);
                v.push(vec![0.0; p.len()]);
            }
            let (mi, vi) = (&mut m[idx], &mut v[idx]);
            for j in 0..p.len() {
                let g = p.grad[j].to_f64_lossy();
                let delta = match kind {
                    OptimizerKind::Sgd => *lr * g,
                    OptimizerKind::Adam => {
                        mi[j] = b1 * mi[j] + (1.0 - b1) * g;
                        vi[j] = b2 * vi[j] + (1.0 - b2) * g * g;
                        *lr * (mi[j] / c1) / ((vi[j] / c2).sqrt() + *eps)
                    }
                };
                p.value[j] -= T::from_f64_lossy(delta);
            }
            p.zero_grad();
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::Linear;
    use rand::SeedableRng;

    fn model_with_grads() -> Linear<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut l = Linear::<f64>::new(3, 2, 0.5, &mut rng);
        l.weight.grad.iter_mut().enumerate().for_each(|(i, g)| *g = i as f64 - 2.5);
        l.bias.grad = vec![0.3, -0.7];
        l
    }

    #[test]
    fn vanishing_learning_rate_leaves_parameters_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut l = model_with_grads();
            let before = (l.weight.value.clone(), l.bias.value.clone());
            Optimizer::new(kind, 0.0).step(&mut l);
            assert_eq!(before, (l.weight.value.clone(), l.bias.value.clone()));
            assert!(l.weight.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut l = model_with_grads();
        let w0 = l.weight.value.clone();
        let g = l.weight.grad.clone();
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut l);
        for j in 0..w0.len() {
            assert!((l.weight.value[j] - (w0[j] - 0.1 * g[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut l = model_with_grads();
        let b0 = l.bias.value.clone();
        Optimizer::new(OptimizerKind::Adam, 0.01).step(&mut l);
        assert!((l.bias.value[0] - (b0[0] - 0.01)).abs() < 1e-9);
        assert!((l.bias.value[1] - (b0[1] + 0.01)).abs() < 1e-9);
    }
}
