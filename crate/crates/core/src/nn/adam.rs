use ndarray::ArrayD;

use crate::num::Scalar;

use super::graph::Param;

/// Adaptive moment estimation with the standard published defaults.
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &[Param<F>], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
            v: params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Param<F>], grads: &[Option<ArrayD<F>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_minus_b1 = F::from_f64(1.0 - self.beta1);
        let one_minus_b2 = F::from_f64(1.0 - self.beta2);
        let eps = F::from_f64(self.eps);
        let step_size = F::from_f64(self.lr * bc2.sqrt() / bc1);

        for (i, param) in params.iter_mut().enumerate() {
            if !param.trainable {
                continue;
            }
            let Some(grad) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|w, m, v, &g| {
                    *m = *m * b1 + g * one_minus_b1;
                    *v = *v * b2 + g * g * one_minus_b2;
                    *w = *w - step_size * *m / (v.sqrt() + eps);
                });
        }
    }
}
