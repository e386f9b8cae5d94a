//! Adam optimizer (default hyperparameters)

use serde::{Deserialize, Serialize};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_OPT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update: m and v are refreshed, t advances, and `params` moves by
    /// `-lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "param/state size");
        assert_eq!(grads.len(), self.m.len(), "grad/state size");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS_OPT);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut st = AdamState::new(3);
        st.step(&mut p, &[0.0, 0.0, 0.0], 0.1);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_almost_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let g = 0.5;
        st.step(&mut p, &[g], 0.01);
        // bias correction makes m_hat = g and v_hat = g^2 on step one,
        // so the move is lr * g / (|g| + eps) ~ lr
        let mag = p[0].abs();
        assert!(mag <= 0.01 && mag > 0.01 * 0.999, "magnitude {mag}");
        assert!(p[0] < 0.0, "moves against the gradient");
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        let mut last = p[0];
        for _ in 0..2 {
            st.step(&mut p, &[1.0], 0.1);
            assert!(p[0] < last);
            last = p[0];
        }
        assert!(st.v[0] > 0.0);
    }
}
