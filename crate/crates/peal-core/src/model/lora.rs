//! Low-rank adapters for the attention QKV projection.
//!
//! An adapter adds `(alpha / rank) * dropout(x) A^T B^T` to the frozen
//! projection output. `A` is Gaussian with std `1/sqrt(rank)` and `B` starts
//! at zero, so a freshly initialized adapter is an exact no-op and training
//! departs smoothly from the base encoder.

use rand_chacha::ChaCha8Rng;

use crate::error::NumericsError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    /// Adapt q, k and v with separate rank-`r` pairs instead of one fused
    /// pair on the concatenated projection.
    pub per_matrix: bool,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 16, alpha: 16.0, dropout: 0.1, per_matrix: false }
    }
}

/// One encoder layer's adapter parameters.
#[derive(Debug, Clone)]
pub enum LoraLayer {
    /// `a`: (rank, dim); `b`: (3*dim, rank), applied to the fused QKV output.
    Fused { a: Tensor, b: Tensor },
    /// Per-projection pairs; each `a`: (rank, dim), `b`: (dim, rank).
    PerMatrix { q: (Tensor, Tensor), k: (Tensor, Tensor), v: (Tensor, Tensor) },
}

impl LoraLayer {
    pub fn init(cfg: &LoraConfig, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let r = cfg.rank;
        let std = 1.0 / (r as f64).sqrt();
        if cfg.per_matrix {
            let pair = |rng: &mut ChaCha8Rng| {
                (
                    Tensor::randn(vec![r, dim], std, rng).with_grad(),
                    Tensor::zeros(vec![dim, r]).with_grad(),
                )
            };
            LoraLayer::PerMatrix { q: pair(rng), k: pair(rng), v: pair(rng) }
        } else {
            LoraLayer::Fused {
                a: Tensor::randn(vec![r, dim], std, rng).with_grad(),
                b: Tensor::zeros(vec![3 * dim, r]).with_grad(),
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LoraLayer::Fused { a, b } => a.len() + b.len(),
            LoraLayer::PerMatrix { q, k, v } => {
                q.0.len() + q.1.len() + k.0.len() + k.1.len() + v.0.len() + v.1.len()
            }
        }
    }
}

/// Build the adapter delta for one layer: input `x` is the (already dropped)
/// normalized activations, shape `(batch, tokens, dim)`; the result matches
/// the fused QKV output `(batch, tokens, 3*dim)`.
pub(crate) fn adapter_delta(
    g: &mut Graph,
    layer: &LoraLayer,
    cfg: &LoraConfig,
    x: Var,
    mut record: impl FnMut(String, Var),
    layer_idx: usize,
) -> Result<Var, NumericsError> {
    let scaling = cfg.alpha / cfg.rank as f64;
    let low_rank = |g: &mut Graph, x: Var, a: Var, b: Var| -> Result<Var, NumericsError> {
        let at = g.permute(a, &[1, 0])?;
        let bt = g.permute(b, &[1, 0])?;
        let t = g.matmul(x, at)?;
        g.matmul(t, bt)
    };
    let delta = match layer {
        LoraLayer::Fused { a, b } => {
            let av = g.leaf(a.clone())?;
            let bv = g.leaf(b.clone())?;
            record(format!("lora.{layer_idx}.a"), av);
            record(format!("lora.{layer_idx}.b"), bv);
            low_rank(g, x, av, bv)?
        }
        LoraLayer::PerMatrix { q, k, v } => {
            let mut parts = Vec::with_capacity(3);
            for (tag, (a, b)) in [("q", q), ("k", k), ("v", v)] {
                let av = g.leaf(a.clone())?;
                let bv = g.leaf(b.clone())?;
                record(format!("lora.{layer_idx}.{tag}.a"), av);
                record(format!("lora.{layer_idx}.{tag}.b"), bv);
                parts.push(low_rank(g, x, av, bv)?);
            }
            g.concat_last(&parts)?
        }
    };
    g.scale(delta, scaling)
}
