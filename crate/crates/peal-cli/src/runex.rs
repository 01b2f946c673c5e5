//! Experiment execution: dataset resolution, trial scheduling, CSV and
//! manifest emission.
//!
//! A run directory contains `trial_<i>.csv` (one per completed trial),
//! `aggregate.csv`, and `manifest.txt`. A mid-run failure leaves the
//! completed trial files in place and writes a `FAILED` marker holding the
//! error, so partial output is never mistaken for a finished run. Manifests
//! carry no timestamps: identical configs produce identical directories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use peal_core::alloop::{aggregate, aggregate_csv, trial_csv, RunMetrics};
use peal_core::dataset::{format, synthetic};
use peal_core::model::Mode;
use peal_core::{mix_seed, Dataset, LoopError};

use crate::config::{canonical, config_hash, ExperimentConfig};
use crate::CliError;

/// Load the configured binary dataset or generate the synthetic one.
pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    match &cfg.dataset_path {
        Some(path) => format::load(path)
            .map_err(|e| CliError::Runtime(format!("loading {}: {e}", path.display()))),
        None => synthetic::generate(&cfg.synthetic)
            .map_err(|e| CliError::Usage(format!("synthetic spec: {e}"))),
    }
}

/// Pre-flight checks that are config mistakes rather than runtime failures.
pub fn validate_for_run(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(), CliError> {
    cfg.loop_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(CliError::Usage(format!(
            "dataset.test_fraction {} outside [0, 1)",
            cfg.test_fraction
        )));
    }
    if cfg.test_fraction == 0.0 {
        return Err(CliError::Usage("active learning needs a test split (fraction > 0)".into()));
    }
    if cfg.loop_cfg.model.mode == Mode::Adapter
        && dataset.kind() == peal_core::DataKind::Embeddings
    {
        return Err(CliError::Usage(
            "adapter mode needs a token dataset; this one holds embeddings".into(),
        ));
    }
    Ok(())
}

fn write_failure(dir: &Path, error: &str) {
    // Best effort: the marker must not mask the original failure.
    let _ = fs::write(dir.join("FAILED"), format!("{error}\n"));
}

/// Execute one experiment into `dir`. Returns the aggregate CSV text.
pub fn execute_run(cfg: &ExperimentConfig, dir: &Path) -> Result<String, CliError> {
    let dataset = resolve_dataset(cfg)?;
    validate_for_run(cfg, &dataset)?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
    // A fresh run invalidates any earlier failure marker.
    let _ = fs::remove_file(dir.join("FAILED"));

    // The split is a function of the experiment seed only, so different
    // strategies compete on identical pools.
    let split_seed = mix_seed(cfg.loop_cfg.seed, "split", 0);
    let (pool_ids, test_ids) = dataset
        .stratified_split(cfg.test_fraction, split_seed)
        .map_err(|e| CliError::Runtime(format!("splitting dataset: {e}")))?;

    // The class count always comes from the data.
    let mut loop_cfg = cfg.loop_cfg.clone();
    loop_cfg.model.num_classes = dataset.num_classes;
    let loop_cfg = &loop_cfg;
    let run_one = |trial: usize| -> Result<RunMetrics, LoopError> {
        peal_core::run_trial(loop_cfg, &dataset, &pool_ids, &test_ids, trial)
    };

    let results: Vec<Result<RunMetrics, LoopError>> = if cfg.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                (0..loop_cfg.trials).map(|t| scope.spawn(move || run_one(t))).collect();
            handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
        })
    } else {
        let mut out = Vec::with_capacity(loop_cfg.trials);
        for t in 0..loop_cfg.trials {
            let r = run_one(t);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };

    let mut trials = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(m) => {
                let path = dir.join(format!("trial_{}.csv", m.trial));
                fs::write(&path, trial_csv(&m, cfg.timing))
                    .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
                trials.push(m);
            }
            Err(e) => {
                let msg = format!("trial {} failed: {e}", trials.len());
                write_failure(dir, &msg);
                return Err(CliError::Runtime(msg));
            }
        }
    }

    let rows = aggregate(&trials);
    let agg_text = aggregate_csv(&rows);
    fs::write(dir.join("aggregate.csv"), &agg_text)
        .map_err(|e| CliError::Runtime(format!("writing aggregate.csv: {e}")))?;
    fs::write(dir.join("manifest.txt"), manifest(cfg, &dataset, &trials))
        .map_err(|e| CliError::Runtime(format!("writing manifest.txt: {e}")))?;
    Ok(agg_text)
}

/// The run manifest: version, config hash, data shape, seeds — everything
/// needed to identify and reproduce the run, nothing volatile.
fn manifest(cfg: &ExperimentConfig, dataset: &Dataset, trials: &[RunMetrics]) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    line("engine_version", env!("CARGO_PKG_VERSION").to_string());
    line("config_hash", config_hash(cfg));
    line(
        "dataset",
        cfg.dataset_path
            .as_ref()
            .map_or_else(|| "synthetic".into(), |p| p.display().to_string()),
    );
    line("records", dataset.len().to_string());
    line("classes", dataset.num_classes.to_string());
    line("strategy", cfg.loop_cfg.strategy.to_string());
    line(
        "mode",
        match cfg.loop_cfg.model.mode {
            Mode::Adapter => "adapter".into(),
            Mode::Frozen => "frozen".into(),
        },
    );
    line("balanced", cfg.loop_cfg.balanced.to_string());
    line("budget", cfg.loop_cfg.budget.to_string());
    line("per_cycle", cfg.loop_cfg.per_cycle.to_string());
    line("cycles", cfg.loop_cfg.cycle_sizes().len().to_string());
    line(
        "partial_final_cycle",
        (cfg.loop_cfg.budget % cfg.loop_cfg.per_cycle != 0).to_string(),
    );
    line(
        "seeds",
        trials.iter().map(|t| t.seed.to_string()).collect::<Vec<_>>().join(","),
    );
    line("timing", cfg.timing.to_string());
    out.push_str("# resolved config\n");
    for l in canonical(cfg).lines() {
        let _ = writeln!(out, "# {l}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use peal_core::DataKind;

    fn fast_cfg() -> ExperimentConfig {
        parse_config(
            "dataset.kind=embeddings\ndataset.classes=3\ndataset.per_class=30\ndataset.dim=8\n\
             model.mode=frozen\ntrain.epochs=3\nal.budget=20\nal.per_cycle=10\ntrials=2\n",
        )
        .unwrap()
    }

    #[test]
    fn run_writes_trials_aggregate_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = fast_cfg();
        execute_run(&cfg, &out).unwrap();
        assert!(out.join("trial_0.csv").exists());
        assert!(out.join("trial_1.csv").exists());
        assert!(!out.join("FAILED").exists());
        let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
        assert_eq!(agg.lines().count(), 3); // header + 2 cycles
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("strategy=entropy"));
        assert!(manifest.contains("seeds=42,43"));
        assert!(manifest.contains(&format!("config_hash={}", config_hash(&cfg))));
    }

    #[test]
    fn reruns_are_byte_identical_and_parallel_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fast_cfg();
        execute_run(&cfg, &dir.path().join("a")).unwrap();
        execute_run(&cfg, &dir.path().join("b")).unwrap();
        let mut par = cfg.clone();
        par.parallel = true;
        execute_run(&par, &dir.path().join("c")).unwrap();
        for name in ["trial_0.csv", "trial_1.csv", "aggregate.csv"] {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            let c = fs::read(dir.path().join("c").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
            assert_eq!(a, c, "{name} differs under parallel trials");
        }
    }

    #[test]
    fn failures_leave_a_marker_and_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = fast_cfg();
        // More budget than the pool holds: trial 0 fails immediately.
        cfg.loop_cfg.budget = 10_000;
        let err = execute_run(&cfg, &out).unwrap_err();
        assert!(matches!(err, CliError::Runtime(_)));
        assert!(out.join("FAILED").exists());
        let marker = fs::read_to_string(out.join("FAILED")).unwrap();
        assert!(marker.contains("budget"), "{marker}");
    }

    #[test]
    fn config_mistakes_are_usage_errors() {
        let mut cfg = fast_cfg();
        cfg.loop_cfg.model.mode = Mode::Adapter;
        let ds = resolve_dataset(&cfg).unwrap();
        assert_eq!(ds.kind(), DataKind::Embeddings);
        assert!(matches!(validate_for_run(&cfg, &ds), Err(CliError::Usage(_))));
        let mut cfg = fast_cfg();
        cfg.test_fraction = 0.0;
        let ds = resolve_dataset(&cfg).unwrap();
        assert!(matches!(validate_for_run(&cfg, &ds), Err(CliError::Usage(_))));
    }
}
