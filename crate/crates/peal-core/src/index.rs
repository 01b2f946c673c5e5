//! Class-conditional feature dictionaries with farthest-point queries.
//!
//! The featdist acquisition strategy scores a candidate by its distance to
//! the labeled examples of its predicted class, so the index keeps one flat
//! dictionary per class and answers max-distance queries. Distances expand
//! `|a - q|^2 = |a|^2 + |q|^2 - 2 a.q`, which is fast but loses precision
//! when operands nearly cancel; rows whose expanded distance lies within a
//! relative band of the running maximum are therefore re-evaluated with the
//! exact subtract-and-square form before the winner is reported.

use std::collections::BTreeSet;

use crate::error::IndexError;

/// Rows with expanded squared distance at least `(1 - REFINE_BAND) * max`
/// are recomputed exactly.
const REFINE_BAND: f64 = 2e-6;

#[derive(Debug, Clone, Default)]
struct ClassDict {
    ids: Vec<usize>,
    feats: Vec<f64>,
    norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassIndex {
    dim: usize,
    classes: Vec<ClassDict>,
    seen: BTreeSet<usize>,
}

impl ClassIndex {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim, classes: vec![ClassDict::default(); num_classes], seen: BTreeSet::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_len(&self, class: usize) -> Result<usize, IndexError> {
        self.check_class(class)?;
        Ok(self.classes[class].ids.len())
    }

    fn check_class(&self, class: usize) -> Result<(), IndexError> {
        if class >= self.classes.len() {
            return Err(IndexError::UnknownClass { class, num_classes: self.classes.len() });
        }
        Ok(())
    }

    pub fn insert(&mut self, id: usize, class: usize, feat: &[f64]) -> Result<(), IndexError> {
        self.check_class(class)?;
        if feat.len() != self.dim {
            return Err(IndexError::DimMismatch { expected: self.dim, got: feat.len() });
        }
        if !self.seen.insert(id) {
            return Err(IndexError::DuplicateId(id));
        }
        let dict = &mut self.classes[class];
        dict.ids.push(id);
        dict.feats.extend_from_slice(feat);
        dict.norms.push(feat.iter().map(|v| v * v).sum());
        Ok(())
    }

    pub fn build(
        dim: usize,
        num_classes: usize,
        items: impl IntoIterator<Item = (usize, usize, Vec<f64>)>,
    ) -> Result<Self, IndexError> {
        let mut index = Self::new(dim, num_classes);
        for (id, class, feat) in items {
            index.insert(id, class, &feat)?;
        }
        Ok(index)
    }

    /// Distance from `query` to the farthest dictionary entry of `class`.
    /// An empty dictionary reports `f64::INFINITY`: a candidate with no
    /// labeled support is maximally informative.
    pub fn max_distance(&self, class: usize, query: &[f64]) -> Result<f64, IndexError> {
        self.check_class(class)?;
        if query.len() != self.dim {
            return Err(IndexError::DimMismatch { expected: self.dim, got: query.len() });
        }
        let dict = &self.classes[class];
        let n = dict.ids.len();
        if n == 0 {
            return Ok(f64::INFINITY);
        }
        let qn: f64 = query.iter().map(|v| v * v).sum();
        let mut d2 = vec![0.0; n];
        let mut max_d2 = 0.0f64;
        for i in 0..n {
            let row = &dict.feats[i * self.dim..(i + 1) * self.dim];
            let dot: f64 = row.iter().zip(query).map(|(a, q)| a * q).sum();
            let d = (dict.norms[i] + qn - 2.0 * dot).max(0.0);
            d2[i] = d;
            max_d2 = max_d2.max(d);
        }
        // Exact refinement over every near-maximal row.
        let threshold = (1.0 - REFINE_BAND) * max_d2;
        let mut exact_max = 0.0f64;
        for i in 0..n {
            if d2[i] >= threshold {
                let row = &dict.feats[i * self.dim..(i + 1) * self.dim];
                let exact: f64 = row.iter().zip(query).map(|(a, q)| (a - q) * (a - q)).sum();
                exact_max = exact_max.max(exact);
            }
        }
        Ok(exact_max.sqrt())
    }

    /// [`ClassIndex::max_distance`] over rows of a flat `(n, dim)` buffer.
    pub fn max_distance_batch(
        &self,
        class: usize,
        queries: &[f64],
    ) -> Result<Vec<f64>, IndexError> {
        if queries.len() % self.dim != 0 {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: queries.len() % self.dim,
            });
        }
        queries.chunks(self.dim).map(|q| self.max_distance(class, q)).collect()
    }

    /// Every dictionary entry as `(id, class, features)`, class-major in
    /// insertion order. Used to dump the index for inspection.
    pub fn entries(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out = Vec::with_capacity(self.len());
        for (class, dict) in self.classes.iter().enumerate() {
            for (i, &id) in dict.ids.iter().enumerate() {
                out.push((id, class, &dict.feats[i * self.dim..(i + 1) * self.dim]));
            }
        }
        out
    }
}
