//! Adaptive-moment gradient descent with bias correction.

use crate::real::Real;

pub struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> Adam<F> {
    pub fn new(n: usize) -> Adam<F> {
        Adam {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
            beta1: F::c(0.9),
            beta2: F::c(0.999),
            eps: F::c(1e-8),
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F], lr: F) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let one = F::one();
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] - lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    pub fn state(&self) -> (&[F], &[F], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(n: usize, m: Vec<F>, v: Vec<F>, t: u64) -> Adam<F> {
        assert_eq!(m.len(), n);
        assert_eq!(v.len(), n);
        Adam {
            m,
            v,
            t,
            beta1: F::c(0.9),
            beta2: F::c(0.999),
            eps: F::c(1e-8),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_with_zero_state_leaves_params_unchanged() {
        let mut adam: Adam<f32> = Adam::new(4);
        let mut params = vec![1.0f32, -2.0, 0.5, 3.0];
        let before = params.clone();
        adam.step(&mut params, &[0.0; 4], 1e-3);
        assert_eq!(params, before);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut adam: Adam<f64> = Adam::new(1);
        let mut x = vec![3.0f64];
        for _ in 0..2000 {
            let g = vec![2.0 * x[0]];
            adam.step(&mut x, &g, 0.01);
        }
        assert!(x[0].abs() < 0.05, "x = {}", x[0]);
    }
}
