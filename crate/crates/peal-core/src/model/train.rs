//! Supervised fine-tuning on the labeled set, with checkpoint selection on a
//! stratified validation split.
//!
//! Each call re-draws the validation split from the supplied RNG stream, runs
//! a fixed number of epochs, and restores the weights of the epoch with the
//! best validation accuracy (earliest epoch wins ties). When any class has
//! fewer than two labeled samples a stratified split is impossible, so the
//! trainer falls back to training on everything and keeping the final epoch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::graph::{Graph, Phase};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, weight_decay: 1e-2, val_fraction: 0.15 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    /// Accuracy of the kept checkpoint on the validation split, when one exists.
    pub best_val_acc: Option<f64>,
    pub val_size: usize,
    pub final_train_loss: f64,
}

/// Train `model` in place on `(inputs, labels)` at learning rate `lr`.
pub fn train_epochs(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport, ModelError> {
    let n = labels.len();
    if n == 0 || inputs.shape().first() != Some(&n) {
        if n == 0 {
            return Err(ModelError::EmptyLabeledSet);
        }
        return Err(ModelError::DimensionMismatch(format!(
            "{} labels for input shape {:?}",
            n,
            inputs.shape()
        )));
    }
    let k = model.cfg.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(ModelError::DimensionMismatch(format!("label {bad} out of range 0..{k}")));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ModelError::InvalidConfig("epochs and batch_size must be positive".into()));
    }

    // Stratified validation split, re-drawn from this cycle's stream.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let stratifiable = by_class.iter().all(|ids| ids.is_empty() || ids.len() >= 2);
    let (train_ids, val_ids) = if stratifiable {
        let mut train_ids = Vec::new();
        let mut val_ids = Vec::new();
        for ids in &mut by_class {
            if ids.is_empty() {
                continue;
            }
            ids.shuffle(rng);
            let nc = ids.len();
            let want = (cfg.val_fraction * nc as f64).round() as usize;
            let take = want.clamp(1, nc - 1);
            val_ids.extend_from_slice(&ids[..take]);
            train_ids.extend_from_slice(&ids[take..]);
        }
        train_ids.sort_unstable();
        val_ids.sort_unstable();
        (train_ids, val_ids)
    } else {
        ((0..n).collect(), Vec::new())
    };

    let mut opt = Adam::new(AdamConfig { lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let batch = cfg.batch_size.min(train_ids.len());
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order = train_ids.clone();
    let mut final_train_loss = 0.0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let bx = inputs.gather_rows(chunk).map_err(ModelError::from)?;
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let mut draw = || rng.gen::<u64>();
            let fwd = model.forward(&mut g, &bx, Phase::Train, &mut draw)?;
            let loss = g.softmax_cross_entropy(fwd.logits, &by)?;
            epoch_loss += g.value(loss).item();
            batches += 1;
            let mut grads = g.backward(loss)?;
            let mut updates: BTreeMap<String, Tensor> = BTreeMap::new();
            for (name, var) in &fwd.params {
                if let Some(grad) = grads.take(*var) {
                    updates.insert(name.clone(), grad);
                }
            }
            opt.start_step();
            let mut opt_err = None;
            model.for_each_param_mut(&mut |name, tensor| {
                if let Some(grad) = updates.remove(name) {
                    if let Err(e) = opt.update(name, tensor, &grad) {
                        opt_err.get_or_insert(e);
                    }
                }
            });
            if let Some(e) = opt_err {
                return Err(e.into());
            }
        }
        final_train_loss = epoch_loss / batches.max(1) as f64;

        if !val_ids.is_empty() {
            let vx = inputs.gather_rows(&val_ids).map_err(ModelError::from)?;
            let vy: Vec<usize> = val_ids.iter().map(|&i| labels[i]).collect();
            let acc = evaluate(model, &vx, &vy)?;
            let better = match &best {
                Some((best_acc, _, _)) => acc > *best_acc,
                None => true,
            };
            if better {
                best = Some((acc, epoch, model.clone()));
            }
        }
    }

    match best {
        Some((acc, epoch, snapshot)) => {
            *model = snapshot;
            Ok(TrainReport {
                epochs_run: cfg.epochs,
                best_epoch: epoch,
                best_val_acc: Some(acc),
                val_size: val_ids.len(),
                final_train_loss,
            })
        }
        None => Ok(TrainReport {
            epochs_run: cfg.epochs,
            best_epoch: cfg.epochs,
            best_val_acc: None,
            val_size: 0,
            final_train_loss,
        }),
    }
}

const EVAL_CHUNK: usize = 256;

/// Accuracy on `(inputs, labels)` in eval phase.
pub fn evaluate(model: &mut Model, inputs: &Tensor, labels: &[usize]) -> Result<f64, ModelError> {
    if labels.is_empty() {
        return Err(ModelError::EmptyLabeledSet);
    }
    let preds = predict_classes(model, inputs)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Softmax class probabilities per row, eval phase, chunked.
pub fn predict_probs(model: &mut Model, inputs: &Tensor) -> Result<Vec<Vec<f64>>, ModelError> {
    let n = *inputs.shape().first().unwrap_or(&0);
    let k = model.cfg.num_classes;
    let mut out = Vec::with_capacity(n);
    let ids: Vec<usize> = (0..n).collect();
    for chunk in ids.chunks(EVAL_CHUNK) {
        let bx = inputs.gather_rows(chunk).map_err(ModelError::from)?;
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &bx, Phase::Eval, &mut || 0)?;
        let probs = g.softmax(fwd.logits).map_err(ModelError::from)?;
        let data = g.value(probs).data();
        for r in 0..chunk.len() {
            out.push(data[r * k..(r + 1) * k].to_vec());
        }
    }
    Ok(out)
}

/// Argmax predictions; ties resolve to the lowest class id.
pub fn predict_classes(model: &mut Model, inputs: &Tensor) -> Result<Vec<usize>, ModelError> {
    let probs = predict_probs(model, inputs)?;
    Ok(probs.iter().map(|p| argmax(p)).collect())
}

/// Eval-phase features `(batch, feature_dim)`, chunked.
pub fn extract_features(model: &mut Model, inputs: &Tensor) -> Result<Tensor, ModelError> {
    let n = *inputs.shape().first().unwrap_or(&0);
    let f = model.cfg.feature_dim;
    let mut data = Vec::with_capacity(n * f);
    let ids: Vec<usize> = (0..n).collect();
    for chunk in ids.chunks(EVAL_CHUNK) {
        let bx = inputs.gather_rows(chunk).map_err(ModelError::from)?;
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &bx, Phase::Eval, &mut || 0)?;
        data.extend_from_slice(g.value(fwd.features).data());
    }
    Ok(Tensor::from_vec(vec![n, f], data).map_err(ModelError::from)?)
}

/// Index of the maximum value; first occurrence wins.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
