//! Parameter-efficient active learning.
//!
//! The crate provides everything needed to run label-efficient fine-tuning
//! experiments end to end: a reverse-mode autodiff engine, a small
//! transformer encoder with low-rank adapters, Adam with step-wise learning
//! rate decay, class-conditional feature indexes, acquisition strategies with
//! class-balanced budgeting, dataset generation and binary formats, and the
//! active-learning loop with metrics aggregation.

pub mod alloop;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod index;
pub mod model;
pub mod optim;
pub mod selection;
pub mod tensor;

pub use alloop::{
    run_experiment, run_trial, unknown_known_counts, AggregateRow, CycleRecord, ExperimentResult,
    LoopConfig, PoolState, RunMetrics,
};
pub use dataset::synthetic::SyntheticSpec;
pub use dataset::{DataKind, Dataset};
pub use error::{
    DataError, IndexError, LoopError, ModelError, NumericsError, PealError, SelectionError,
};
pub use graph::{BatchNormState, Gradients, Graph, Phase, Pooling, Var};
pub use index::ClassIndex;
pub use model::lora::LoraConfig;
pub use selection::{
    allocate_budget, entropy, score_pool, select_agnostic, select_balanced, BudgetPlan, ScoredPool,
    Selection, Strategy,
};
pub use model::train::{evaluate, extract_features, predict_classes, predict_probs, train_epochs, TrainConfig, TrainReport};
pub use model::{Forward, Mode, Model, ModelConfig};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use tensor::Tensor;

/// Stable seed derivation: mixes a base seed with a purpose tag and an index
/// so that independent random streams never alias.
pub fn mix_seed(base: u64, tag: &str, extra: u64) -> u64 {
    // FNV-1a over the tag bytes, then the extra word.
    let mut h = 0xcbf29ce484222325u64 ^ base.wrapping_mul(0x100000001b3);
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    for b in extra.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
