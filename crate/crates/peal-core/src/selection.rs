//! Acquisition scoring, class-balanced budgeting and batch selection.
//!
//! Three strategies share one scoring interface: `random` draws uniform
//! scores from a dedicated stream, `entropy` scores by predictive entropy in
//! nats, and `featdist` scores by the farthest-point distance to the labeled
//! dictionary of the predicted class. Selection takes the top scores either
//! globally (class-agnostic) or per predicted class under a budget plan that
//! splits the batch as evenly as the candidate counts allow.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::SelectionError;
use crate::index::ClassIndex;
use crate::model::train::argmax;

/// Tolerance on `sum(p) - 1` before a distribution is rejected.
pub const PROB_SUM_TOL: f64 = 1e-6;
/// Probabilities this small contribute nothing to the entropy sum.
const ENTROPY_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Entropy,
    FeatDist,
}

impl FromStr for Strategy {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            "featdist" => Ok(Strategy::FeatDist),
            other => Err(SelectionError::UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::FeatDist => "featdist",
        })
    }
}

/// Shannon entropy in nats of a validated probability vector. Exact zeros
/// contribute nothing; positive values are clamped at 1e-12 before the log.
pub fn entropy(probs: &[f64]) -> Result<f64, SelectionError> {
    validate_probs(probs)?;
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.max(ENTROPY_CLAMP).ln();
        }
    }
    Ok(h)
}

/// Reject negative entries and sums outside `1 ± PROB_SUM_TOL`.
pub fn validate_probs(probs: &[f64]) -> Result<(), SelectionError> {
    let mut sum = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        if p < 0.0 {
            return Err(SelectionError::NegativeProbability { index, value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(SelectionError::ProbabilitySum { sum, tolerance: PROB_SUM_TOL });
    }
    Ok(())
}

/// Predicted class: argmax of the probabilities, lowest class id on ties.
pub fn predicted_class(probs: &[f64]) -> usize {
    argmax(probs)
}

/// Scores aligned with `pool_ids`, plus each sample's predicted class.
#[derive(Debug, Clone)]
pub struct ScoredPool {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub predicted: Vec<usize>,
}

/// Score the candidate pool under one strategy.
///
/// `probs[i]` is the predictive distribution of pool sample `pool_ids[i]`;
/// featdist additionally needs the candidates' `features` (flat rows) and the
/// labeled-set `index`. Only the random strategy consumes `rng`.
pub fn score_pool(
    strategy: Strategy,
    pool_ids: &[usize],
    probs: &[Vec<f64>],
    features: Option<&[f64]>,
    index: Option<&ClassIndex>,
    rng: &mut ChaCha8Rng,
) -> Result<ScoredPool, SelectionError> {
    if pool_ids.is_empty() {
        return Err(SelectionError::EmptyPool);
    }
    assert_eq!(pool_ids.len(), probs.len(), "one distribution per pool sample");
    let predicted: Vec<usize> = probs
        .iter()
        .map(|p| {
            validate_probs(p)?;
            Ok(predicted_class(p))
        })
        .collect::<Result<_, SelectionError>>()?;
    let scores: Vec<f64> = match strategy {
        Strategy::Random => pool_ids.iter().map(|_| rng.gen::<f64>()).collect(),
        Strategy::Entropy => {
            probs.iter().map(|p| entropy(p)).collect::<Result<_, SelectionError>>()?
        }
        Strategy::FeatDist => {
            let index = index.expect("featdist needs the labeled-set index");
            let features = features.expect("featdist needs candidate features");
            let dim = index.dim();
            assert_eq!(features.len(), pool_ids.len() * dim, "one feature row per sample");
            predicted
                .iter()
                .enumerate()
                .map(|(i, &class)| {
                    Ok(index.max_distance(class, &features[i * dim..(i + 1) * dim])?)
                })
                .collect::<Result<_, SelectionError>>()?
        }
    };
    Ok(ScoredPool { ids: pool_ids.to_vec(), scores, predicted })
}

/// Per-class annotation quotas for one acquisition batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetPlan {
    pub per_class: Vec<usize>,
    pub total: usize,
}

/// Split `budget` across classes as evenly as candidate counts allow.
///
/// Every class starts from `floor(budget / k)`, the remainder goes one each
/// to ascending class ids, quotas are capped at the candidate counts, and any
/// shortfall is re-dealt round-robin (ascending id) to classes with spare
/// candidates. The plan total is `min(budget, sum(candidates))`.
pub fn allocate_budget(budget: usize, candidates_per_class: &[usize]) -> BudgetPlan {
    let k = candidates_per_class.len();
    if k == 0 || budget == 0 {
        return BudgetPlan { per_class: vec![0; k], total: 0 };
    }
    let available: usize = candidates_per_class.iter().sum();
    let total = budget.min(available);
    let base = budget / k;
    let remainder = budget % k;
    let mut per_class: Vec<usize> = candidates_per_class
        .iter()
        .enumerate()
        .map(|(c, &cand)| (base + usize::from(c < remainder)).min(cand))
        .collect();
    let mut shortfall = total - per_class.iter().sum::<usize>();
    while shortfall > 0 {
        for c in 0..k {
            if shortfall == 0 {
                break;
            }
            if per_class[c] < candidates_per_class[c] {
                per_class[c] += 1;
                shortfall -= 1;
            }
        }
    }
    BudgetPlan { per_class, total }
}

/// One acquisition batch.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Chosen sample ids, highest score first (ascending id on ties).
    pub chosen: Vec<usize>,
    /// Set when the batch asked for more samples than the pool held.
    pub pool_exhausted: bool,
}

/// Indices of `scored` sorted by descending score, ascending id on ties.
fn ranked_order(scored: &ScoredPool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.ids.len()).collect();
    order.sort_by(|&a, &b| {
        scored.scores[b]
            .total_cmp(&scored.scores[a])
            .then(scored.ids[a].cmp(&scored.ids[b]))
    });
    order
}

/// Global top-`budget` selection, ignoring predicted classes.
pub fn select_agnostic(scored: &ScoredPool, budget: usize) -> Selection {
    let order = ranked_order(scored);
    let take = budget.min(order.len());
    Selection {
        chosen: order[..take].iter().map(|&i| scored.ids[i]).collect(),
        pool_exhausted: budget > order.len(),
    }
}

/// Class-balanced selection: the budget is split over predicted classes with
/// [`allocate_budget`], then each class contributes its own top scorers.
pub fn select_balanced(
    scored: &ScoredPool,
    budget: usize,
    num_classes: usize,
) -> Result<Selection, SelectionError> {
    let mut counts = vec![0usize; num_classes];
    for &c in &scored.predicted {
        assert!(c < num_classes, "predicted class {c} out of range");
        counts[c] += 1;
    }
    let plan = allocate_budget(budget, &counts);
    let order = ranked_order(scored);
    let mut taken = vec![0usize; num_classes];
    let mut chosen = Vec::with_capacity(plan.total);
    for i in order {
        let class = scored.predicted[i];
        if taken[class] < plan.per_class[class] {
            taken[class] += 1;
            chosen.push(scored.ids[i]);
        }
    }
    debug_assert_eq!(chosen.len(), plan.total);
    Ok(Selection { chosen, pool_exhausted: budget > scored.ids.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    // The explicit import wins over both globs; `Strategy` below always means
    // the acquisition enum, not the proptest trait.
    use super::Strategy;

    #[test]
    fn entropy_reference_values() {
        // -0.7 ln 0.7 - 0.2 ln 0.2 - 0.1 ln 0.1
        let h = entropy(&[0.7, 0.2, 0.1]).unwrap();
        assert!((h - 0.8018185525433374).abs() < 1e-12, "{h}");
        let uniform = entropy(&[0.25; 4]).unwrap();
        assert!((uniform - 4.0_f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(matches!(
            entropy(&[0.5, -0.1, 0.6]),
            Err(SelectionError::NegativeProbability { index: 1, .. })
        ));
        assert!(matches!(
            entropy(&[0.5, 0.4]),
            Err(SelectionError::ProbabilitySum { .. })
        ));
        // Within tolerance passes.
        assert!(entropy(&[0.5, 0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn budget_reference_allocations() {
        let plan = allocate_budget(50, &[100; 8]);
        assert_eq!(plan.per_class, vec![7, 7, 6, 6, 6, 6, 6, 6]);
        assert_eq!(plan.total, 50);

        let plan = allocate_budget(9, &[1, 10, 10]);
        assert_eq!(plan.per_class, vec![1, 4, 4]);
        assert_eq!(plan.total, 9);
    }

    /// Deal the budget one sample at a time, cycling ascending class ids and
    /// skipping exhausted classes. Slower but obviously correct.
    fn deal_one_by_one(budget: usize, candidates: &[usize]) -> Vec<usize> {
        let mut out = vec![0usize; candidates.len()];
        let mut left = budget.min(candidates.iter().sum());
        while left > 0 {
            for c in 0..candidates.len() {
                if left == 0 {
                    break;
                }
                if out[c] < candidates[c] {
                    out[c] += 1;
                    left -= 1;
                }
            }
        }
        out
    }

    proptest! {
        /// When no class caps, the allocation must equal dealing the budget
        /// one sample at a time over ascending class ids.
        #[test]
        fn uncapped_allocation_matches_dealing_reference(
            budget in 0usize..200,
            k in 1usize..12,
        ) {
            let candidates = vec![200usize; k];
            let plan = allocate_budget(budget, &candidates);
            prop_assert_eq!(&plan.per_class, &deal_one_by_one(budget, &candidates));
            let min = plan.per_class.iter().min().unwrap();
            let max = plan.per_class.iter().max().unwrap();
            prop_assert!(max - min <= 1);
        }

        /// General contract: quotas never exceed candidate counts, the plan
        /// total is exactly what is attainable, and classes that end below
        /// their cap stay within two samples of each other (the remainder
        /// favors low class ids by one, and a mid-loop exit of the
        /// redistribution adds at most one more).
        #[test]
        fn capped_allocation_contract(
            budget in 0usize..200,
            candidates in prop::collection::vec(0usize..40, 1..12),
        ) {
            let plan = allocate_budget(budget, &candidates);
            prop_assert_eq!(plan.total, plan.per_class.iter().sum::<usize>());
            prop_assert_eq!(plan.total, budget.min(candidates.iter().sum()));
            for (n, c) in plan.per_class.iter().zip(&candidates) {
                prop_assert!(n <= c);
            }
            let uncapped: Vec<usize> = plan
                .per_class
                .iter()
                .zip(&candidates)
                .filter(|(n, c)| n < c)
                .map(|(n, _)| *n)
                .collect();
            if let (Some(min), Some(max)) = (uncapped.iter().min(), uncapped.iter().max()) {
                prop_assert!(max - min <= 2, "uncapped quotas {:?}", uncapped);
            }
        }
    }

    fn pool(scores: &[f64], predicted: &[usize]) -> ScoredPool {
        ScoredPool {
            ids: (0..scores.len()).collect(),
            scores: scores.to_vec(),
            predicted: predicted.to_vec(),
        }
    }

    #[test]
    fn agnostic_takes_global_top_with_stable_ties() {
        let p = pool(&[0.5, 0.9, 0.5, 0.1, 0.9], &[0; 5]);
        let sel = select_agnostic(&p, 3);
        // 0.9s first (ids 1, 4), then the tied 0.5s by ascending id.
        assert_eq!(sel.chosen, vec![1, 4, 0]);
        assert!(!sel.pool_exhausted);
    }

    #[test]
    fn exhausted_pool_is_flagged_and_fully_taken() {
        let p = pool(&[0.3, 0.2], &[0, 1]);
        let sel = select_agnostic(&p, 10);
        assert_eq!(sel.chosen, vec![0, 1]);
        assert!(sel.pool_exhausted);
        let sel = select_balanced(&p, 10, 2).unwrap();
        assert_eq!(sel.chosen.len(), 2);
        assert!(sel.pool_exhausted);
    }

    #[test]
    fn balanced_respects_per_class_quotas() {
        // Class 0 dominates the scores, but the plan still reserves slots
        // for class 1.
        let p = pool(&[0.9, 0.8, 0.7, 0.2, 0.1], &[0, 0, 0, 1, 1]);
        let sel = select_balanced(&p, 4, 2).unwrap();
        assert_eq!(sel.chosen, vec![0, 1, 3, 4]);

        let agnostic = select_agnostic(&p, 4);
        assert_eq!(agnostic.chosen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn random_scores_are_stream_deterministic() {
        let ids: Vec<usize> = (0..6).collect();
        let probs = vec![vec![0.5, 0.5]; 6];
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            score_pool(Strategy::Random, &ids, &probs, None, None, &mut rng).unwrap().scores
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn featdist_scores_come_from_the_index() {
        let mut index = ClassIndex::new(2, 2);
        index.insert(100, 0, &[0.0, 0.0]).unwrap();
        index.insert(101, 0, &[1.0, 0.0]).unwrap();
        // Class 1 dictionary stays empty.
        let ids = vec![0, 1];
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let feats = vec![3.0, 4.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scored =
            score_pool(Strategy::FeatDist, &ids, &probs, Some(&feats), Some(&index), &mut rng)
                .unwrap();
        assert!((scored.scores[0] - 5.0).abs() < 1e-12);
        assert!(scored.scores[1].is_infinite());
        assert_eq!(scored.predicted, vec![0, 1]);
    }

    #[test]
    fn strategy_strings_round_trip() {
        for s in [Strategy::Random, Strategy::Entropy, Strategy::FeatDist] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!(
            "margin".parse::<Strategy>(),
            Err(SelectionError::UnknownStrategy(_))
        ));
    }
}
