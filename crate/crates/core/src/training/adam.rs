//! Adam optimizer with the lazy-regularization hyperparameter correction.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 2e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Compensates for running k+1 optimizer passes per k nominal steps when a
/// separate regularization pass executes every k steps:
/// lr' = c*lr, beta' = beta^c with c = k/(k+1).
pub fn lazy_adjusted_hparams(h: AdamParams, k: u32) -> AdamParams {
    assert!(k >= 1, "interval must be >= 1");
    let c = k as f64 / (k as f64 + 1.0);
    AdamParams {
        lr: (h.lr as f64 * c) as f32,
        beta1: (h.beta1 as f64).powf(c) as f32,
        beta2: (h.beta2 as f64).powf(c) as f32,
        eps: h.eps,
    }
}

/// Adam state over a fixed list of parameter slots. The same instance is
/// shared between a network's main and regularization passes.
pub struct Adam {
    pub h: AdamParams,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(h: AdamParams, slots: usize) -> Self {
        Adam {
            h,
            m: vec![Vec::new(); slots],
            v: vec![Vec::new(); slots],
            t: 0,
        }
    }

    /// Starts one optimizer application (a main or a regularization pass).
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Updates one parameter slot, returning the new value. `lr_override`
    /// replaces the stored learning rate (used by schedules).
    pub fn update(
        &mut self,
        slot: usize,
        value: &[f32],
        grad: &[f32],
        lr_override: Option<f32>,
    ) -> Vec<f32> {
        assert_eq!(value.len(), grad.len());
        assert!(self.t > 0, "call begin_step before update");
        let lr = lr_override.unwrap_or(self.h.lr);
        let (b1, b2, eps) = (self.h.beta1, self.h.beta2, self.h.eps);
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; value.len()];
            self.v[slot] = vec![0.0; value.len()];
        }
        let bc1 = 1.0 - (b1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (b2 as f64).powi(self.t as i32);
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        let mut out = Vec::with_capacity(value.len());
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mhat = m[i] as f64 / bc1;
            let vhat = v[i] as f64 / bc2;
            out.push(value[i] - (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lazy_formulas() {
        let h = AdamParams { lr: 2e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 };
        let a = lazy_adjusted_hparams(h, 16);
        let c = 16.0f64 / 17.0;
        assert_eq!(a.lr, (2e-3 * c) as f32);
        assert_eq!(a.beta1, 0.0, "0^c stays 0");
        assert_eq!(a.beta2, 0.99f64.powf(c) as f32);
        assert!((a.beta2 as f64 - 0.99054).abs() < 1e-4, "{}", a.beta2);

        // large k approaches the unadjusted parameters
        let big = lazy_adjusted_hparams(h, 1_000_000);
        assert!((big.lr - h.lr).abs() < 1e-8);
        assert!((big.beta2 - h.beta2).abs() < 1e-7);
    }

    #[test]
    fn adam_descends_quadratic() {
        // minimize f(x) = (x - 3)^2
        let mut opt = Adam::new(AdamParams { lr: 0.1, ..Default::default() }, 1);
        let mut x = vec![0.0f32];
        for _ in 0..500 {
            let g = vec![2.0 * (x[0] - 3.0)];
            opt.begin_step();
            x = opt.update(0, &x, &g, None);
        }
        assert!((x[0] - 3.0).abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // with beta1=0 the first update is exactly lr * sign(g)
        let mut opt = Adam::new(AdamParams::default(), 1);
        opt.begin_step();
        let x = opt.update(0, &[1.0], &[0.5], None);
        let expected = 1.0 - opt.h.lr * 0.5 / ((0.5f64 * 0.5).sqrt() as f32 + opt.h.eps);
        assert!((x[0] - expected).abs() < 1e-6);
    }
}
