//! Metrics serialization and cross-trial aggregation.
//!
//! CSV layouts are a stable external contract: UTF-8, header row, fixed
//! column order, floats at six decimal places. The per-trial file has one row
//! per (trial, cycle); the aggregate file has one row per cycle with the
//! mean/std of test accuracy and the mean unknown/known ratio over trials.

use std::fmt::Write as _;

use crate::alloop::RunMetrics;

/// Per-cycle aggregate over a set of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub cycle: usize,
    pub labeled_count: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub unknown_ratio_mean: f64,
}

/// wrong/correct, with a perfect-knowns batch reported as infinite.
pub fn unknown_ratio(wrong: usize, correct: usize) -> f64 {
    if correct == 0 {
        f64::INFINITY
    } else {
        wrong as f64 / correct as f64
    }
}

/// Render one trial as CSV. With `timing` off the wall-time column is zeroed
/// so identical runs serialize to identical bytes.
pub fn trial_csv(metrics: &RunMetrics, timing: bool) -> String {
    let mut out = String::from(
        "trial,cycle,labeled_count,test_accuracy,selected_wrong,selected_correct,effective_lr,wall_time_s\n",
    );
    for c in &metrics.cycles {
        let wall = if timing { c.wall_time_s } else { 0.0 };
        writeln!(
            out,
            "{},{},{},{:.6},{},{},{:.6},{:.6}",
            metrics.trial,
            c.cycle,
            c.labeled_count,
            c.test_accuracy,
            c.selected_wrong,
            c.selected_correct,
            c.effective_lr,
            wall
        )
        .expect("string write");
    }
    out
}

/// Per-cycle mean/std of accuracy and mean unknown ratio across trials.
/// All trials must share the same cycle structure.
pub fn aggregate(trials: &[RunMetrics]) -> Vec<AggregateRow> {
    let Some(first) = trials.first() else {
        return Vec::new();
    };
    let cycles = first.cycles.len();
    for t in trials {
        assert_eq!(t.cycles.len(), cycles, "trials must share the cycle structure");
    }
    let n = trials.len() as f64;
    (0..cycles)
        .map(|i| {
            let accs: Vec<f64> = trials.iter().map(|t| t.cycles[i].test_accuracy).collect();
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            let ratio = trials
                .iter()
                .map(|t| unknown_ratio(t.cycles[i].selected_wrong, t.cycles[i].selected_correct))
                .sum::<f64>()
                / n;
            let labeled = first.cycles[i].labeled_count;
            for t in trials {
                assert_eq!(t.cycles[i].labeled_count, labeled, "labeled counts diverged");
            }
            AggregateRow {
                cycle: first.cycles[i].cycle,
                labeled_count: labeled,
                acc_mean: mean,
                acc_std: var.sqrt(),
                unknown_ratio_mean: ratio,
            }
        })
        .collect()
}

/// Render the aggregate as CSV.
pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("cycle,labeled_count,acc_mean,acc_std,unknown_ratio_mean\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.cycle, r.labeled_count, r.acc_mean, r.acc_std, r.unknown_ratio_mean
        )
        .expect("string write");
    }
    out
}
