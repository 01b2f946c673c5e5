//! Adam optimizer with per-parameter state and cycle-indexed LR decay.
//!
//! State (first/second moment) is keyed by canonical parameter name so that
//! checkpoint/restore and parameter freezing cannot silently mix moments
//! between tensors. The step counter is shared across parameters, matching
//! the usual convention.

use std::collections::BTreeMap;

use crate::error::NumericsError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient (`g += weight_decay * w`),
    /// applied to every parameter handed to the optimizer.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, state: BTreeMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the shared step counter. Call once per optimization step,
    /// before the per-parameter updates of that step.
    pub fn start_step(&mut self) {
        self.step += 1;
    }

    /// Apply one Adam update to `param` in place.
    pub fn update(
        &mut self,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
    ) -> Result<(), NumericsError> {
        if param.shape() != grad.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam",
                details: format!("param {} {:?} vs grad {:?}", name, param.shape(), grad.shape()),
            });
        }
        assert!(self.step > 0, "start_step must be called before update");
        let n = param.len();
        let moments = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let pd = param.data_mut();
        for i in 0..n {
            let g = grad.data()[i] + self.cfg.weight_decay * pd[i];
            moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
            moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
            let mhat = moments.m[i] / bc1;
            let vhat = moments.v[i] / bc2;
            pd[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
        }
        if let Some(index) = param.first_non_finite() {
            return Err(NumericsError::NonFinite { op: "adam", index });
        }
        Ok(())
    }
}

/// Step decay indexed by active-learning cycle (not epoch): the rate drops by
/// a factor of `gamma` at each cycle listed in `drop_cycles`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
    pub drop_cycles: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { base_lr: 1e-3, gamma: 0.1, drop_cycles: vec![5, 8] }
    }
}

impl LrSchedule {
    pub fn effective_lr(&self, cycle: usize) -> f64 {
        let drops = self.drop_cycles.iter().filter(|&&c| c <= cycle).count();
        self.base_lr * self.gamma.powi(drops as i32)
    }
}
