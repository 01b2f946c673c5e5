//! Shared fixtures for the engine benchmarks: deterministic labeled
//! indexes, candidate batches, predictive distributions, and a ready-to-train
//! adapter model. Everything is seeded so benchmark runs are comparable.

use peal_core::{ClassIndex, Model, ModelConfig, SyntheticSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A labeled feature dictionary with `n` rows spread over `k` classes.
pub fn labeled_index(n: usize, dim: usize, k: usize, seed: u64) -> ClassIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClassIndex::build(
        dim,
        k,
        (0..n).map(|id| {
            let class = rng.gen_range(0..k);
            let feat: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (id, class, feat)
        }),
    )
    .expect("valid index fixture")
}

/// `m` query rows as one flat `(m, dim)` buffer.
pub fn query_batch(m: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m * dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// `m` random points on the `k`-simplex: one predictive distribution each.
pub fn prob_batch(m: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let draws: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-9..1.0f64).ln()).collect();
            let total: f64 = draws.iter().sum();
            draws.iter().map(|e| e / total).collect()
        })
        .collect()
}

/// A default adapter-mode model plus one labeled training batch.
pub fn training_fixture(batch: usize) -> (Model, Tensor, Vec<usize>) {
    let cfg = ModelConfig::default();
    let spec = SyntheticSpec {
        classes: cfg.num_classes,
        per_class: batch.div_ceil(cfg.num_classes),
        seed: 31,
        ..SyntheticSpec::default()
    };
    let data = peal_core::dataset::synthetic::generate(&spec).expect("fixture dataset");
    let model = Model::new(cfg, 17).expect("fixture model");
    let ids: Vec<usize> = (0..batch).collect();
    let inputs = data.gather(&ids).expect("gather fixture batch");
    let labels: Vec<usize> = ids.iter().map(|&i| data.labels[i]).collect();
    (model, inputs, labels)
}
