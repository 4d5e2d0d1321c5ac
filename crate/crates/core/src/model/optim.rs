//! Adam optimizer.

use super::params::{named, named_mut, Mat, ParamSet};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new<P: ParamSet>(params: &P, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Mat> = named(params)
            .into_iter()
            .map(|(_, m)| Mat::zeros(m.dim()))
            .collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update of `params` along `grads`, a container of
    /// the same type.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let grads = named(grads);
        for (((_, p), (_, g)), (m, v)) in named_mut(params)
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
