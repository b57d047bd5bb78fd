use super::graph::ModelGraph;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub slots: Vec<AdamSlot>,
}

/// One bias-corrected Adam update of `params` in place. `step` is the
/// 1-based count including this update.
pub fn adam_update(params: &mut [f64], grads: &[f64], slot: &mut AdamSlot, step: u64, lr: f64) {
    if slot.m.len() != params.len() {
        slot.m = vec![0.0; params.len()];
        slot.v = vec![0.0; params.len()];
    }
    let c1 = 1.0 - BETA1.powi(step as i32);
    let c2 = 1.0 - BETA2.powi(step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut slot.m).zip(&mut slot.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

impl AdamState {
    /// Applies one update to every parameter of `model` from its
    /// accumulated gradients.
    pub fn step(&mut self, model: &mut ModelGraph, lr: f64) {
        self.step += 1;
        for (i, (p, g)) in model.slots_mut().enumerate() {
            if self.slots.len() <= i {
                self.slots.push(AdamSlot::default());
            }
            adam_update(p, g, &mut self.slots[i], self.step, lr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamSlot::default();
        for t in 1..=5 {
            adam_update(&mut p, &[0.0, 0.0], &mut s, t, 0.1);
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        for g in [1e-6, 0.3, -50.0] {
            let mut p = vec![0.0];
            adam_update(&mut p, &[g], &mut AdamSlot::default(), 1, 0.01);
            assert!(p[0].abs() <= 0.01 * (1.0 + 1e-6));
            assert!(p[0] * g < 0.0);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = vec![0.0];
        let mut s = AdamSlot::default();
        for t in 1..=200 {
            let g = 2.0 * (w[0] - 3.0);
            adam_update(&mut w, &[g], &mut s, t, 0.1);
        }
        assert!((w[0] - 3.0).abs() < 0.05, "w = {}", w[0]);
    }
}
