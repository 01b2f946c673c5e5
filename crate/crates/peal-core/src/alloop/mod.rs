//! The active-learning cycle state machine.
//!
//! A trial owns one model and one evolving pool partition. Each cycle: acquire
//! a batch (cycle 1 draws the seed set uniformly at random from a
//! strategy-independent stream; later cycles score the pool with the previous
//! cycle's best checkpoint), annotate it through the oracle interface, train
//! from the previous cycle's weights (transfer — never reinitialized) at the
//! cycle's scheduled learning rate, and evaluate on the fixed test split.
//!
//! Oracle-label hygiene: unlabeled labels are revealed only by
//! [`PoolState::annotate`]; the unknown/known diagnostic consumes the labels
//! that annotation just revealed, paired with the predictions of the model
//! that made the selection.

pub mod metrics;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DataKind, Dataset};
use crate::error::{DataError, LoopError};
use crate::graph::{Graph, Phase};
use crate::index::ClassIndex;
use crate::mix_seed;
use crate::model::train::{
    evaluate, extract_features, predict_classes, predict_probs, train_epochs, TrainConfig,
};
use crate::model::{Mode, Model, ModelConfig};
use crate::optim::LrSchedule;
use crate::selection::{score_pool, select_agnostic, select_balanced, Strategy};
use crate::tensor::Tensor;

pub use metrics::{aggregate, aggregate_csv, trial_csv, unknown_ratio, AggregateRow};

/// Evolving partition of pool ids into labeled and unlabeled, with the
/// annotation ledger. Test ids are held only to reject hygiene violations.
#[derive(Debug, Clone)]
pub struct PoolState {
    pool: BTreeSet<usize>,
    labeled: BTreeMap<usize, usize>,
    unlabeled: BTreeSet<usize>,
    test: BTreeSet<usize>,
    pub consumed: usize,
    pub total_budget: usize,
    pub cycle: usize,
}

impl PoolState {
    pub fn new(
        pool_ids: &[usize],
        test_ids: &[usize],
        total_budget: usize,
    ) -> Result<Self, LoopError> {
        let pool: BTreeSet<usize> = pool_ids.iter().copied().collect();
        let test: BTreeSet<usize> = test_ids.iter().copied().collect();
        if pool.len() != pool_ids.len() || test.len() != test_ids.len() {
            return Err(LoopError::InvalidConfig("duplicate ids in split".into()));
        }
        if let Some(&id) = pool.intersection(&test).next() {
            return Err(LoopError::PartitionViolation {
                cycle: 0,
                details: format!("id {id} is in both pool and test splits"),
            });
        }
        Ok(Self {
            unlabeled: pool.clone(),
            pool,
            labeled: BTreeMap::new(),
            test,
            consumed: 0,
            total_budget,
            cycle: 0,
        })
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.len()
    }

    /// Unlabeled ids, ascending.
    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    /// Labeled `(id, revealed label)` pairs, ascending by id.
    pub fn labeled_entries(&self) -> Vec<(usize, usize)> {
        self.labeled.iter().map(|(&id, &l)| (id, l)).collect()
    }

    /// Reveal oracle labels for `ids`, moving them from unlabeled to labeled
    /// and charging the budget ledger. Returns the labels in `ids` order.
    /// Not transactional: a hygiene error leaves earlier ids annotated.
    pub fn annotate(&mut self, dataset: &Dataset, ids: &[usize]) -> Result<Vec<usize>, DataError> {
        let mut revealed = Vec::with_capacity(ids.len());
        for &id in ids {
            if self.test.contains(&id) {
                return Err(DataError::TestSplitId(id));
            }
            if self.labeled.contains_key(&id) {
                return Err(DataError::AlreadyLabeled(id));
            }
            if !self.unlabeled.remove(&id) {
                return Err(DataError::UnknownId(id));
            }
            let label = dataset.oracle(id)?;
            self.labeled.insert(id, label);
            self.consumed += 1;
            revealed.push(label);
        }
        Ok(revealed)
    }

    /// Verify labeled ∪ unlabeled = pool (disjoint by construction).
    pub fn check_partition(&self) -> Result<(), String> {
        if self.labeled.len() + self.unlabeled.len() != self.pool.len() {
            return Err(format!(
                "{} labeled + {} unlabeled != {} pool ids",
                self.labeled.len(),
                self.unlabeled.len(),
                self.pool.len()
            ));
        }
        for id in self.labeled.keys().chain(self.unlabeled.iter()) {
            if !self.pool.contains(id) {
                return Err(format!("id {id} is not a pool id"));
            }
            if self.labeled.contains_key(id) && self.unlabeled.contains(id) {
                return Err(format!("id {id} is both labeled and unlabeled"));
            }
        }
        Ok(())
    }
}

/// Everything one experiment needs beyond the dataset and its split.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub strategy: Strategy,
    /// Class-balanced acquisition (budget split over predicted classes).
    pub balanced: bool,
    pub budget: usize,
    pub per_cycle: usize,
    pub trials: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: LrSchedule,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Entropy,
            balanced: false,
            budget: 500,
            per_cycle: 50,
            trials: 3,
            seed: 42,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            schedule: LrSchedule::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.budget == 0 || self.per_cycle == 0 {
            return Err(LoopError::InvalidConfig("budget and per_cycle must be positive".into()));
        }
        if self.trials == 0 {
            return Err(LoopError::InvalidConfig("need at least one trial".into()));
        }
        Ok(())
    }

    /// Per-cycle acquisition sizes; the final cycle takes any remainder.
    pub fn cycle_sizes(&self) -> Vec<usize> {
        let full = self.budget / self.per_cycle;
        let rem = self.budget % self.per_cycle;
        let mut sizes = vec![self.per_cycle; full];
        if rem > 0 {
            sizes.push(rem);
        }
        sizes
    }
}

/// One cycle's metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Labeled-set size the cycle trained on (after acquisition).
    pub labeled_count: usize,
    pub test_accuracy: f64,
    /// Acquired samples the selecting model mispredicted (model unknowns).
    pub selected_wrong: usize,
    /// Acquired samples the selecting model predicted correctly (knowns).
    pub selected_correct: usize,
    pub effective_lr: f64,
    pub wall_time_s: f64,
}

/// Full record of one trial.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub trial: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub mode: Mode,
    /// Set when the budget was not a multiple of the per-cycle size.
    pub partial_final_cycle: bool,
    pub cycles: Vec<CycleRecord>,
    /// Trainable-weight hashes (entering, leaving) each cycle; consecutive
    /// cycles chain (leave t == enter t+1) because weights transfer.
    pub weight_hashes: Vec<(u64, u64)>,
}

/// Count (wrong, correct) predictions among an acquired batch: the
/// unknown/known diagnostic for the model that selected it.
pub fn unknown_known_counts(predicted: &[usize], actual: &[usize]) -> (usize, usize) {
    assert_eq!(predicted.len(), actual.len(), "one prediction per acquired sample");
    let wrong = predicted.iter().zip(actual).filter(|(p, a)| p != a).count();
    (wrong, actual.len() - wrong)
}

fn gather(inputs: &Tensor, ids: &[usize]) -> Result<Tensor, LoopError> {
    inputs.gather_rows(ids).map_err(LoopError::from)
}

/// Pooled features of the base encoder with the adapter path removed: the
/// "random frozen backbone" used by the linear-probing baseline on token
/// datasets.
fn base_features(model: &mut Model, inputs: &Tensor) -> Result<Tensor, LoopError> {
    const CHUNK: usize = 256;
    let n = inputs.shape()[0];
    let mut data = Vec::new();
    let mut feat_dim = 0;
    let mut start = 0;
    while start < n {
        let ids: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let chunk = gather(inputs, &ids)?;
        let mut g = Graph::new();
        let out = model.forward_base(&mut g, &chunk, Phase::Eval, &mut || 0)?;
        let feats = g.value(out.features);
        feat_dim = feats.shape()[1];
        data.extend_from_slice(feats.data());
        start += CHUNK;
    }
    Tensor::from_vec(vec![n, feat_dim], data).map_err(LoopError::from)
}

/// Resolve the tensor the trial trains on and the model config it needs.
///
/// Adapter mode consumes token grids directly. Frozen mode consumes
/// embeddings; a token dataset is first encoded once by a randomly
/// initialized frozen encoder (seeded per trial), giving the random-feature
/// linear-probing baseline.
fn resolve_inputs<'a>(
    cfg: &LoopConfig,
    dataset: &'a Dataset,
    trial_seed: u64,
) -> Result<(Cow<'a, Tensor>, ModelConfig), LoopError> {
    match (cfg.model.mode, dataset.kind()) {
        (Mode::Adapter, DataKind::Tokens) => {
            let d = dataset.inputs.shape()[2];
            if d != cfg.model.dim {
                return Err(LoopError::InvalidConfig(format!(
                    "token dim {d} != configured encoder dim {}",
                    cfg.model.dim
                )));
            }
            Ok((Cow::Borrowed(&dataset.inputs), cfg.model.clone()))
        }
        (Mode::Adapter, DataKind::Embeddings) => Err(LoopError::InvalidConfig(
            "adapter mode needs a token dataset; got precomputed embeddings".into(),
        )),
        (Mode::Frozen, DataKind::Embeddings) => {
            // The probe's input width comes from the data.
            let mut model_cfg = cfg.model.clone();
            model_cfg.feature_dim = dataset.inputs.shape()[1];
            Ok((Cow::Borrowed(&dataset.inputs), model_cfg))
        }
        (Mode::Frozen, DataKind::Tokens) => {
            let d = dataset.inputs.shape()[2];
            if d != cfg.model.dim {
                return Err(LoopError::InvalidConfig(format!(
                    "token dim {d} != configured encoder dim {}",
                    cfg.model.dim
                )));
            }
            let enc_cfg = ModelConfig {
                mode: Mode::Adapter,
                feature_dim: cfg.model.dim,
                ..cfg.model.clone()
            };
            let mut encoder = Model::new(enc_cfg, mix_seed(trial_seed, "frozen-encoder", 0))?;
            let features = base_features(&mut encoder, &dataset.inputs)?;
            let mut model_cfg = cfg.model.clone();
            model_cfg.feature_dim = cfg.model.dim;
            Ok((Cow::Owned(features), model_cfg))
        }
    }
}

/// Run one trial: `cfg.trials` of these make an experiment. The trial seed is
/// `cfg.seed + trial`, and every internal stream (model init, seed set,
/// per-cycle selection and training) is derived from it with a purpose tag.
pub fn run_trial(
    cfg: &LoopConfig,
    dataset: &Dataset,
    pool_ids: &[usize],
    test_ids: &[usize],
    trial: usize,
) -> Result<RunMetrics, LoopError> {
    cfg.validate()?;
    if test_ids.is_empty() {
        return Err(LoopError::EmptyTestSplit);
    }
    if cfg.budget > pool_ids.len() {
        return Err(LoopError::BudgetExceedsPool { budget: cfg.budget, pool: pool_ids.len() });
    }
    if cfg.model.num_classes != dataset.num_classes {
        return Err(LoopError::InvalidConfig(format!(
            "model expects {} classes, dataset has {}",
            cfg.model.num_classes, dataset.num_classes
        )));
    }
    let trial_seed = cfg.seed.wrapping_add(trial as u64);
    let (inputs, model_cfg) = resolve_inputs(cfg, dataset, trial_seed)?;
    let k = dataset.num_classes;

    let mut model = Model::new(model_cfg, mix_seed(trial_seed, "model", 0))?;
    let frozen_hash = model.params_hash(false);
    let mut pool = PoolState::new(pool_ids, test_ids, cfg.budget)?;
    let test_inputs = gather(&inputs, test_ids)?;
    let test_labels: Vec<usize> = test_ids.iter().map(|&id| dataset.labels[id]).collect();

    let sizes = cfg.cycle_sizes();
    let mut cycles = Vec::with_capacity(sizes.len());
    let mut weight_hashes = Vec::with_capacity(sizes.len());

    for (i, &batch) in sizes.iter().enumerate() {
        let cycle = i + 1;
        let started = Instant::now();
        let entry_hash = model.params_hash(true);

        // Acquire: cycle 1 draws the seed set from a strategy-independent
        // stream; later cycles score the pool with the previous cycle's best
        // checkpoint (which is exactly the current weights).
        let (chosen, predicted) = if cycle == 1 {
            let mut ids = pool.unlabeled_ids();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, "seed-set", 0));
            ids.shuffle(&mut rng);
            ids.truncate(batch);
            let preds = predict_classes(&mut model, &gather(&inputs, &ids)?)?;
            (ids, preds)
        } else {
            let candidates = pool.unlabeled_ids();
            let x = gather(&inputs, &candidates)?;
            let probs = predict_probs(&mut model, &x)?;
            let mut features_flat: Option<Vec<f64>> = None;
            let mut index: Option<ClassIndex> = None;
            if cfg.strategy == Strategy::FeatDist {
                let feats = extract_features(&mut model, &x)?;
                features_flat = Some(feats.data().to_vec());
                let entries = pool.labeled_entries();
                let labeled_ids: Vec<usize> = entries.iter().map(|&(id, _)| id).collect();
                let labeled_feats = extract_features(&mut model, &gather(&inputs, &labeled_ids)?)?;
                let dim = labeled_feats.shape()[1];
                let mut idx = ClassIndex::new(dim, k);
                for (row, &(id, label)) in entries.iter().enumerate() {
                    idx.insert(id, label, &labeled_feats.data()[row * dim..(row + 1) * dim])
                        .map_err(LoopError::from)?;
                }
                index = Some(idx);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, "select", cycle as u64));
            let scored = score_pool(
                cfg.strategy,
                &candidates,
                &probs,
                features_flat.as_deref(),
                index.as_ref(),
                &mut rng,
            )?;
            let predicted_of: BTreeMap<usize, usize> =
                scored.ids.iter().copied().zip(scored.predicted.iter().copied()).collect();
            let selection = if cfg.balanced {
                select_balanced(&scored, batch, k)?
            } else {
                select_agnostic(&scored, batch)
            };
            let preds = selection.chosen.iter().map(|id| predicted_of[id]).collect();
            (selection.chosen, preds)
        };

        // Annotate (the only label reveal), then diagnose the batch with the
        // selecting model's predictions.
        let actual = pool.annotate(dataset, &chosen)?;
        let (wrong, correct) = unknown_known_counts(&predicted, &actual);
        pool.cycle = cycle;
        pool.check_partition()
            .map_err(|details| LoopError::PartitionViolation { cycle, details })?;

        // Train from the previous cycle's weights at this cycle's LR.
        let entries = pool.labeled_entries();
        let labeled_ids: Vec<usize> = entries.iter().map(|&(id, _)| id).collect();
        let labels: Vec<usize> = entries.iter().map(|&(_, l)| l).collect();
        let lr = cfg.schedule.effective_lr(cycle);
        let mut train_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(trial_seed, "train", cycle as u64));
        train_epochs(&mut model, &gather(&inputs, &labeled_ids)?, &labels, &cfg.train, lr, &mut train_rng)?;
        assert_eq!(
            model.params_hash(false),
            frozen_hash,
            "frozen base weights must never change"
        );

        let test_accuracy = evaluate(&mut model, &test_inputs, &test_labels)?;
        weight_hashes.push((entry_hash, model.params_hash(true)));
        cycles.push(CycleRecord {
            cycle,
            labeled_count: pool.labeled_len(),
            test_accuracy,
            selected_wrong: wrong,
            selected_correct: correct,
            effective_lr: lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }

    Ok(RunMetrics {
        trial,
        seed: trial_seed,
        strategy: cfg.strategy,
        mode: cfg.model.mode,
        partial_final_cycle: cfg.budget % cfg.per_cycle != 0,
        cycles,
        weight_hashes,
    })
}

/// A full experiment: trials plus their per-cycle aggregate.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub trials: Vec<RunMetrics>,
    pub aggregate: Vec<AggregateRow>,
}

/// Run `cfg.trials` independent trials (seeds `cfg.seed + 0..trials`) over a
/// fixed split and aggregate their per-cycle metrics.
pub fn run_experiment(
    cfg: &LoopConfig,
    dataset: &Dataset,
    pool_ids: &[usize],
    test_ids: &[usize],
) -> Result<ExperimentResult, LoopError> {
    cfg.validate()?;
    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        trials.push(run_trial(cfg, dataset, pool_ids, test_ids, trial)?);
    }
    let aggregate = aggregate(&trials);
    Ok(ExperimentResult { trials, aggregate })
}
