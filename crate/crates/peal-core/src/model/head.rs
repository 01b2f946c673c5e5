//! Probe head: batch norm, dropout, linear classifier.

use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::graph::{BatchNormState, Graph, Phase, Var};
use crate::tensor::Tensor;

pub const HEAD_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub bn_g: Tensor,
    pub bn_b: Tensor,
    pub bn_state: BatchNormState,
    pub lin_w: Tensor, // (feature_dim, num_classes)
    pub lin_b: Tensor,
}

impl HeadParams {
    pub fn init(feature_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = 1.0 / (feature_dim as f64).sqrt();
        Self {
            bn_g: Tensor::full(vec![feature_dim], 1.0).with_grad(),
            bn_b: Tensor::zeros(vec![feature_dim]).with_grad(),
            bn_state: BatchNormState::new(feature_dim),
            lin_w: Tensor::randn(vec![feature_dim, num_classes], std, rng).with_grad(),
            lin_b: Tensor::zeros(vec![num_classes]).with_grad(),
        }
    }
}

/// Head forward over `(batch, feature_dim)` features, producing logits.
pub(crate) fn head_forward(
    g: &mut Graph,
    head: &mut HeadParams,
    features: Var,
    phase: Phase,
    seed: u64,
    record: &mut dyn FnMut(String, Var),
) -> Result<Var, NumericsError> {
    let bn_g = g.leaf(head.bn_g.clone())?;
    let bn_b = g.leaf(head.bn_b.clone())?;
    record("head.bn.g".to_string(), bn_g);
    record("head.bn.b".to_string(), bn_b);
    let z = g.batch_norm(features, bn_g, bn_b, &mut head.bn_state, phase)?;
    let z = g.dropout(z, HEAD_DROPOUT, phase, seed)?;
    let w = g.leaf(head.lin_w.clone())?;
    let b = g.leaf(head.lin_b.clone())?;
    record("head.lin.w".to_string(), w);
    record("head.lin.b".to_string(), b);
    let z = g.matmul(z, w)?;
    g.add_bias(z, b)
}
