//! Classifier model: an optional adapted encoder feeding a probe head.
//!
//! Two modes share one interface. Frozen-embedding mode treats its input as
//! precomputed features and trains only the head. Adapter mode encodes token
//! grids with a frozen transformer whose QKV projections carry trainable
//! low-rank deltas, so the trainable set is the adapters plus the head.
//!
//! Trainability is encoded on the parameter tensors themselves; the forward
//! pass records graph leaves for exactly the trainable tensors, which is what
//! ties gradients back to named parameters for the optimizer.

pub mod checkpoint;
pub mod encoder;
pub mod head;
pub mod lora;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::graph::{Graph, Phase, Pooling, Var};
use crate::tensor::Tensor;

use self::encoder::{encode, EncodeOpts, EncoderParams};
use self::head::{head_forward, HeadParams};
use self::lora::LoraConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Inputs are precomputed embeddings; only the head trains.
    Frozen,
    /// Inputs are token grids; adapters and the head train.
    Adapter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub num_classes: usize,
    /// Head input width: the embedding width in frozen mode, `dim` in
    /// adapter mode.
    pub feature_dim: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub pooling: Pooling,
    pub lora: LoraConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adapter,
            num_classes: 10,
            feature_dim: 16,
            dim: 16,
            layers: 2,
            heads: 2,
            mlp_hidden: 32,
            pooling: Pooling::Mean,
            lora: LoraConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim == 0 {
            return Err(ModelError::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.mode == Mode::Adapter {
            if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.mlp_hidden == 0 {
                return Err(ModelError::InvalidConfig(
                    "encoder dimensions must be positive in adapter mode".into(),
                ));
            }
            if self.dim % self.heads != 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "dim {} must be divisible by heads {}",
                    self.dim, self.heads
                )));
            }
            if self.feature_dim != self.dim {
                return Err(ModelError::InvalidConfig(format!(
                    "adapter mode features come from the encoder, so feature_dim {} must equal dim {}",
                    self.feature_dim, self.dim
                )));
            }
            if self.lora.rank == 0 {
                return Err(ModelError::InvalidConfig("lora rank must be positive".into()));
            }
            if !(0.0..1.0).contains(&self.lora.dropout) {
                return Err(ModelError::InvalidConfig(format!(
                    "lora dropout {} outside [0, 1)",
                    self.lora.dropout
                )));
            }
            if self.lora.alpha <= 0.0 {
                return Err(ModelError::InvalidConfig("lora alpha must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub features: Var,
    pub logits: Var,
    /// Trainable leaves in creation order, by canonical parameter name.
    pub params: Vec<(String, Var)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: Option<EncoderParams>,
    pub head: HeadParams,
}

impl Model {
    /// Seed-deterministic initialization. Draw order: encoder blocks in layer
    /// order, then one adapter per layer, then the head classifier.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = match cfg.mode {
            Mode::Adapter => Some(EncoderParams::init(
                cfg.dim,
                cfg.layers,
                cfg.mlp_hidden,
                &cfg.lora,
                &mut rng,
            )),
            Mode::Frozen => None,
        };
        let head = HeadParams::init(cfg.feature_dim, cfg.num_classes, &mut rng);
        Ok(Self { cfg, encoder, head })
    }

    /// Forward pass. Rank-2 input is `(batch, features)`, rank-3 is
    /// `(batch, tokens, dim)`; each mode accepts exactly one of them.
    pub fn forward(
        &mut self,
        g: &mut Graph,
        x: &Tensor,
        phase: Phase,
        seeds: &mut dyn FnMut() -> u64,
    ) -> Result<Forward, ModelError> {
        self.forward_impl(g, x, phase, seeds, true)
    }

    /// Forward pass with the adapter path removed: the base encoder exactly
    /// as initialized. Used to verify the fresh-adapter no-op contract.
    pub fn forward_base(
        &mut self,
        g: &mut Graph,
        x: &Tensor,
        phase: Phase,
        seeds: &mut dyn FnMut() -> u64,
    ) -> Result<Forward, ModelError> {
        self.forward_impl(g, x, phase, seeds, false)
    }

    fn forward_impl(
        &mut self,
        g: &mut Graph,
        x: &Tensor,
        phase: Phase,
        seeds: &mut dyn FnMut() -> u64,
        use_adapters: bool,
    ) -> Result<Forward, ModelError> {
        let mut params: Vec<(String, Var)> = Vec::new();
        let mut record = |name: String, v: Var| params.push((name, v));
        let features = match (self.cfg.mode, x.shape().len()) {
            (Mode::Frozen, 2) => {
                if x.shape()[1] != self.cfg.feature_dim {
                    return Err(ModelError::DimensionMismatch(format!(
                        "expected {} features, got {}",
                        self.cfg.feature_dim,
                        x.shape()[1]
                    )));
                }
                g.leaf(x.clone())?
            }
            (Mode::Adapter, 3) => {
                if x.shape()[2] != self.cfg.dim {
                    return Err(ModelError::DimensionMismatch(format!(
                        "expected token dim {}, got {}",
                        self.cfg.dim,
                        x.shape()[2]
                    )));
                }
                let enc = self.encoder.as_ref().expect("adapter mode has an encoder");
                let mut opts = EncodeOpts {
                    heads: self.cfg.heads,
                    pooling: self.cfg.pooling,
                    phase,
                    lora_cfg: if use_adapters { Some(&self.cfg.lora) } else { None },
                    seeds,
                    record: &mut record,
                };
                encode(g, enc, x, &mut opts)?
            }
            (Mode::Frozen, rank) => {
                return Err(ModelError::ModeInputMismatch(format!(
                    "frozen-embedding mode takes (batch, features) embeddings, got rank-{rank} input"
                )));
            }
            (Mode::Adapter, rank) => {
                return Err(ModelError::ModeInputMismatch(format!(
                    "adapter mode takes (batch, tokens, dim) token input, got rank-{rank} input"
                )));
            }
        };
        let head_seed = seeds();
        let logits = head_forward(g, &mut self.head, features, phase, head_seed, &mut record)?;
        Ok(Forward { features, logits, params })
    }

    /// Visit every parameter tensor (trainable or not, including batch-norm
    /// running statistics) in canonical declaration order.
    pub fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(enc) = &self.encoder {
            for (l, layer) in enc.layers.iter().enumerate() {
                f(&format!("enc.{l}.ln1.g"), &layer.ln1_g);
                f(&format!("enc.{l}.ln1.b"), &layer.ln1_b);
                f(&format!("enc.{l}.qkv.w"), &layer.qkv_w);
                f(&format!("enc.{l}.out.w"), &layer.out_w);
                f(&format!("enc.{l}.out.b"), &layer.out_b);
                f(&format!("enc.{l}.ln2.g"), &layer.ln2_g);
                f(&format!("enc.{l}.ln2.b"), &layer.ln2_b);
                f(&format!("enc.{l}.mlp.w1"), &layer.mlp_w1);
                f(&format!("enc.{l}.mlp.b1"), &layer.mlp_b1);
                f(&format!("enc.{l}.mlp.w2"), &layer.mlp_w2);
                f(&format!("enc.{l}.mlp.b2"), &layer.mlp_b2);
            }
            f("enc.final_ln.g", &enc.final_ln_g);
            f("enc.final_ln.b", &enc.final_ln_b);
            for (l, adapter) in enc.lora.iter().enumerate() {
                match adapter {
                    lora::LoraLayer::Fused { a, b } => {
                        f(&format!("lora.{l}.a"), a);
                        f(&format!("lora.{l}.b"), b);
                    }
                    lora::LoraLayer::PerMatrix { q, k, v } => {
                        for (tag, pair) in [("q", q), ("k", k), ("v", v)] {
                            f(&format!("lora.{l}.{tag}.a"), &pair.0);
                            f(&format!("lora.{l}.{tag}.b"), &pair.1);
                        }
                    }
                }
            }
        }
        f("head.bn.g", &self.head.bn_g);
        f("head.bn.b", &self.head.bn_b);
        f("head.bn.rm", &self.head.bn_state.running_mean);
        f("head.bn.rv", &self.head.bn_state.running_var);
        f("head.lin.w", &self.head.lin_w);
        f("head.lin.b", &self.head.lin_b);
    }

    /// Mutable variant of [`Model::for_each_param`], same order.
    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(enc) = &mut self.encoder {
            for (l, layer) in enc.layers.iter_mut().enumerate() {
                f(&format!("enc.{l}.ln1.g"), &mut layer.ln1_g);
                f(&format!("enc.{l}.ln1.b"), &mut layer.ln1_b);
                f(&format!("enc.{l}.qkv.w"), &mut layer.qkv_w);
                f(&format!("enc.{l}.out.w"), &mut layer.out_w);
                f(&format!("enc.{l}.out.b"), &mut layer.out_b);
                f(&format!("enc.{l}.ln2.g"), &mut layer.ln2_g);
                f(&format!("enc.{l}.ln2.b"), &mut layer.ln2_b);
                f(&format!("enc.{l}.mlp.w1"), &mut layer.mlp_w1);
                f(&format!("enc.{l}.mlp.b1"), &mut layer.mlp_b1);
                f(&format!("enc.{l}.mlp.w2"), &mut layer.mlp_w2);
                f(&format!("enc.{l}.mlp.b2"), &mut layer.mlp_b2);
            }
            f("enc.final_ln.g", &mut enc.final_ln_g);
            f("enc.final_ln.b", &mut enc.final_ln_b);
            for (l, adapter) in enc.lora.iter_mut().enumerate() {
                match adapter {
                    lora::LoraLayer::Fused { a, b } => {
                        f(&format!("lora.{l}.a"), a);
                        f(&format!("lora.{l}.b"), b);
                    }
                    lora::LoraLayer::PerMatrix { q, k, v } => {
                        for (tag, pair) in [("q", q), ("k", k), ("v", v)] {
                            f(&format!("lora.{l}.{tag}.a"), &mut pair.0);
                            f(&format!("lora.{l}.{tag}.b"), &mut pair.1);
                        }
                    }
                }
            }
        }
        f("head.bn.g", &mut self.head.bn_g);
        f("head.bn.b", &mut self.head.bn_b);
        f("head.bn.rm", &mut self.head.bn_state.running_mean);
        f("head.bn.rv", &mut self.head.bn_state.running_var);
        f("head.lin.w", &mut self.head.lin_w);
        f("head.lin.b", &mut self.head.lin_b);
    }

    /// Number of scalar parameters that receive gradients.
    pub fn trainable_param_count(&self) -> usize {
        let mut count = 0;
        self.for_each_param(&mut |_, t| {
            if t.requires_grad() {
                count += t.len();
            }
        });
        count
    }

    /// Order-sensitive hash of every parameter with the given trainability;
    /// used to prove that frozen weights never move. Batch-norm running
    /// statistics are excluded: they are state updated by forward passes,
    /// not weights, so freeze checks must not see them.
    pub fn params_hash(&self, trainable: bool) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        self.for_each_param(&mut |name, t| {
            if name == "head.bn.rm" || name == "head.bn.rv" {
                return;
            }
            if t.requires_grad() == trainable {
                let th = t.bit_hash();
                for b in th.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        });
        h
    }
}
