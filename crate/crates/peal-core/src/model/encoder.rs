//! Pre-norm transformer encoder with optional low-rank adapters.
//!
//! Each block computes `x = x + attn(ln1(x))` followed by `x = x + mlp(ln2(x))`,
//! with a final layer norm and token pooling producing `(batch, dim)` features.
//! Base weights are never trainable; in adapter mode the QKV projections are
//! augmented with [`LoraLayer`] deltas on a dropout-regularized side path.

use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::graph::{Graph, Phase, Pooling, Var};
use crate::model::lora::{adapter_delta, LoraConfig, LoraLayer};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub qkv_w: Tensor, // (dim, 3*dim)
    pub out_w: Tensor, // (dim, dim)
    pub out_b: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub mlp_w1: Tensor, // (dim, mlp_hidden)
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor, // (mlp_hidden, dim)
    pub mlp_b2: Tensor,
}

impl EncoderLayer {
    /// Weight draw order: qkv_w, out_w, mlp_w1, mlp_w2. Norm scales start at
    /// one, every bias at zero; nothing here is trainable.
    fn init(dim: usize, mlp_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let std_d = 1.0 / (dim as f64).sqrt();
        let std_h = 1.0 / (mlp_hidden as f64).sqrt();
        Self {
            ln1_g: Tensor::full(vec![dim], 1.0),
            ln1_b: Tensor::zeros(vec![dim]),
            qkv_w: Tensor::randn(vec![dim, 3 * dim], std_d, rng),
            out_w: Tensor::randn(vec![dim, dim], std_d, rng),
            out_b: Tensor::zeros(vec![dim]),
            ln2_g: Tensor::full(vec![dim], 1.0),
            ln2_b: Tensor::zeros(vec![dim]),
            mlp_w1: Tensor::randn(vec![dim, mlp_hidden], std_d, rng),
            mlp_b1: Tensor::zeros(vec![mlp_hidden]),
            mlp_w2: Tensor::randn(vec![mlp_hidden, dim], std_h, rng),
            mlp_b2: Tensor::zeros(vec![dim]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
    pub final_ln_g: Tensor,
    pub final_ln_b: Tensor,
    pub lora: Vec<LoraLayer>,
}

impl EncoderParams {
    /// Draw order: every block in layer order, then one adapter per layer.
    pub fn init(
        dim: usize,
        layers: usize,
        mlp_hidden: usize,
        lora: &LoraConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let blocks: Vec<EncoderLayer> =
            (0..layers).map(|_| EncoderLayer::init(dim, mlp_hidden, rng)).collect();
        let adapters: Vec<LoraLayer> = (0..layers).map(|_| LoraLayer::init(lora, dim, rng)).collect();
        Self {
            layers: blocks,
            final_ln_g: Tensor::full(vec![dim], 1.0),
            final_ln_b: Tensor::zeros(vec![dim]),
            lora: adapters,
        }
    }
}

pub(crate) struct EncodeOpts<'a> {
    pub heads: usize,
    pub pooling: Pooling,
    pub phase: Phase,
    /// `None` disables the adapter path entirely (base-encoder forward).
    pub lora_cfg: Option<&'a LoraConfig>,
    /// Supplies one seed per dropout site, in graph construction order.
    pub seeds: &'a mut dyn FnMut() -> u64,
    /// Records trainable leaf vars by canonical name.
    pub record: &'a mut dyn FnMut(String, Var),
}

/// Encode `(batch, tokens, dim)` activations to `(batch, dim)` features.
pub(crate) fn encode(
    g: &mut Graph,
    params: &EncoderParams,
    x: &Tensor,
    opts: &mut EncodeOpts,
) -> Result<Var, ModelError> {
    let sp = x.shape().to_vec();
    if sp.len() != 3 {
        return Err(ModelError::DimensionMismatch(format!(
            "encoder expects (batch, tokens, dim) input, got {sp:?}"
        )));
    }
    let (bsz, t, d) = (sp[0], sp[1], sp[2]);
    if d == 0 || d % opts.heads != 0 {
        return Err(ModelError::DimensionMismatch(format!(
            "token dim {d} not divisible by {} heads",
            opts.heads
        )));
    }
    let hd = d / opts.heads;
    let h = opts.heads;

    let mut cur = g.leaf(x.clone())?;
    for (l, layer) in params.layers.iter().enumerate() {
        // Attention sub-block.
        let ln1_g = g.leaf(layer.ln1_g.clone())?;
        let ln1_b = g.leaf(layer.ln1_b.clone())?;
        let a_in = g.layer_norm(cur, ln1_g, ln1_b, LN_EPS)?;
        let qkv_w = g.leaf(layer.qkv_w.clone())?;
        let mut qkv = g.matmul(a_in, qkv_w)?;
        if let Some(cfg) = opts.lora_cfg {
            let seed = (opts.seeds)();
            let dropped = g.dropout(a_in, cfg.dropout, opts.phase, seed)?;
            let delta = adapter_delta(g, &params.lora[l], cfg, dropped, &mut *opts.record, l)?;
            qkv = g.add(qkv, delta)?;
        }
        let q = g.slice_last(qkv, 0, d)?;
        let k = g.slice_last(qkv, d, d)?;
        let v = g.slice_last(qkv, 2 * d, d)?;
        let split = |g: &mut Graph, x: Var| -> Result<Var, crate::error::NumericsError> {
            let x4 = g.reshape(x, vec![bsz, t, h, hd])?;
            let xp = g.permute(x4, &[0, 2, 1, 3])?;
            g.reshape(xp, vec![bsz * h, t, hd])
        };
        let qb = split(g, q)?;
        let kb = split(g, k)?;
        let vb = split(g, v)?;
        let kt = g.permute(kb, &[0, 2, 1])?;
        let scores = g.bmm(qb, kt)?;
        let scaled = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let attn = g.softmax(scaled)?;
        let ctx = g.bmm(attn, vb)?;
        let ctx4 = g.reshape(ctx, vec![bsz, h, t, hd])?;
        let ctxp = g.permute(ctx4, &[0, 2, 1, 3])?;
        let merged = g.reshape(ctxp, vec![bsz, t, d])?;
        let out_w = g.leaf(layer.out_w.clone())?;
        let out_b = g.leaf(layer.out_b.clone())?;
        let proj = g.matmul(merged, out_w)?;
        let proj = g.add_bias(proj, out_b)?;
        cur = g.add(cur, proj)?;

        // MLP sub-block.
        let ln2_g = g.leaf(layer.ln2_g.clone())?;
        let ln2_b = g.leaf(layer.ln2_b.clone())?;
        let m_in = g.layer_norm(cur, ln2_g, ln2_b, LN_EPS)?;
        let w1 = g.leaf(layer.mlp_w1.clone())?;
        let b1 = g.leaf(layer.mlp_b1.clone())?;
        let w2 = g.leaf(layer.mlp_w2.clone())?;
        let b2 = g.leaf(layer.mlp_b2.clone())?;
        let m = g.matmul(m_in, w1)?;
        let m = g.add_bias(m, b1)?;
        let m = g.gelu(m)?;
        let m = g.matmul(m, w2)?;
        let m = g.add_bias(m, b2)?;
        cur = g.add(cur, m)?;
    }

    let fg = g.leaf(params.final_ln_g.clone())?;
    let fb = g.leaf(params.final_ln_b.clone())?;
    let normed = g.layer_norm(cur, fg, fb, LN_EPS)?;
    Ok(g.pool_tokens(normed, opts.pooling)?)
}
