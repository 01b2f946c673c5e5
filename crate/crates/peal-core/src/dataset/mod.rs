//! Datasets: in-memory labeled pools, binary serialization, and a synthetic
//! generator.
//!
//! A [`Dataset`] is a dense tensor of inputs plus one label per row. Rank-2
//! inputs are precomputed embeddings `(n, f)`; rank-3 inputs are token grids
//! `(n, tokens, dim)`. Row position is the instance id everywhere else in the
//! engine (selection, budgets, annotation).

pub mod format;
pub mod synthetic;

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::DataError;
use crate::tensor::Tensor;

/// Whether inputs are pooled embeddings or per-token grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Embeddings,
    Tokens,
}

/// A fully labeled pool. Labels are hidden behind [`Dataset::oracle`] during
/// active learning and only revealed when an id is annotated.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn kind(&self) -> DataKind {
        if self.inputs.shape().len() == 3 {
            DataKind::Tokens
        } else {
            DataKind::Embeddings
        }
    }

    /// Reveal the label of one instance, as an annotator would.
    pub fn oracle(&self, id: usize) -> Result<usize, DataError> {
        self.labels.get(id).copied().ok_or(DataError::UnknownId(id))
    }

    /// Rows `ids` as a new input tensor (labels not included).
    pub fn gather(&self, ids: &[usize]) -> Result<Tensor, DataError> {
        self.inputs
            .gather_rows(ids)
            .map_err(|e| DataError::DegenerateSpec(e.to_string()))
    }

    /// How many instances carry each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Split ids into `(pool, test)` stratified by class.
    ///
    /// Each class contributes `round(fraction * n_c)` test instances, clamped
    /// to `1..=n_c - 1` so both sides keep every class. A fraction of zero
    /// returns an empty test split; fractions at or above one, or classes too
    /// small to stratify, are degenerate.
    pub fn stratified_split(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(DataError::DegenerateSpec(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        if test_fraction == 0.0 {
            return Ok(((0..self.len()).collect(), Vec::new()));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (id, &l) in self.labels.iter().enumerate() {
            by_class[l].push(id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = Vec::new();
        let mut test = Vec::new();
        for (class, mut ids) in by_class.into_iter().enumerate() {
            if ids.len() < 2 {
                return Err(DataError::DegenerateSpec(format!(
                    "class {class} has {} instance(s); need >= 2 to stratify",
                    ids.len()
                )));
            }
            let want = ((test_fraction * ids.len() as f64).round() as usize)
                .clamp(1, ids.len() - 1);
            ids.shuffle(&mut rng);
            test.extend_from_slice(&ids[..want]);
            pool.extend_from_slice(&ids[want..]);
        }
        pool.sort_unstable();
        test.sort_unstable();
        Ok((pool, test))
    }

    /// Write `id,label,x0,...` rows (tokens flattened) for inspection.
    pub fn export_csv(&self, path: &Path) -> Result<(), DataError> {
        let per = if self.is_empty() { 0 } else { self.inputs.len() / self.len() };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "id,label")?;
        for j in 0..per {
            write!(out, ",x{j}")?;
        }
        writeln!(out)?;
        for (id, &label) in self.labels.iter().enumerate() {
            write!(out, "{id},{label}")?;
            for v in &self.inputs.data()[id * per..(id + 1) * per] {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}
