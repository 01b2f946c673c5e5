//! Flat `key=value` experiment configuration.
//!
//! The file format is UTF-8 text: one `section.key=value` per line, `#`
//! comments, blank lines ignored. Every key has a default, so the empty file
//! is a valid config; unknown and duplicate keys are rejected with their line
//! number. The canonical rendering (every key, sorted) backs the manifest's
//! config hash.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use peal_core::graph::Pooling;
use peal_core::model::Mode;
use peal_core::{LoopConfig, Strategy, SyntheticSpec};

/// A parse failure, pinned to its config line.
#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Everything `run` and `sweep` need: data source, model, training, loop.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Binary dataset to load; `None` generates from `synthetic`.
    pub dataset_path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub test_fraction: f64,
    pub loop_cfg: LoopConfig,
    /// Emit real wall times (non-deterministic bytes) instead of zeros.
    pub timing: bool,
    /// Run trials on parallel threads.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: None,
            synthetic: SyntheticSpec::default(),
            test_fraction: 0.2,
            loop_cfg: LoopConfig::default(),
            timing: false,
            parallel: false,
        }
    }
}

fn parse_as<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError {
        line,
        message: format!("invalid value for {key}: {value:?}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError {
            line,
            message: format!("invalid value for {key}: {value:?} (expected true or false)"),
        }),
    }
}

/// Parse config text. Every error carries the offending line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError {
                line,
                message: format!("expected key=value, got {trimmed:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(ConfigError { line, message: format!("duplicate key {key}") });
        }
        apply(&mut cfg, line, key, value)?;
    }
    // In adapter mode the head reads the encoder's pooled features.
    if cfg.loop_cfg.model.mode == Mode::Adapter {
        cfg.loop_cfg.model.feature_dim = cfg.loop_cfg.model.dim;
    }
    Ok(cfg)
}

fn apply(
    cfg: &mut ExperimentConfig,
    line: usize,
    key: &str,
    value: &str,
) -> Result<(), ConfigError> {
    let invalid = |message: String| ConfigError { line, message };
    match key {
        "dataset.path" => cfg.dataset_path = Some(PathBuf::from(value)),
        "dataset.kind" => {
            cfg.synthetic.kind = match value {
                "tokens" => peal_core::DataKind::Tokens,
                "embeddings" => peal_core::DataKind::Embeddings,
                _ => {
                    return Err(invalid(format!(
                        "invalid value for dataset.kind: {value:?} (tokens or embeddings)"
                    )))
                }
            }
        }
        "dataset.classes" => cfg.synthetic.classes = parse_as(line, key, value)?,
        "dataset.per_class" => cfg.synthetic.per_class = parse_as(line, key, value)?,
        "dataset.tokens" => cfg.synthetic.tokens = parse_as(line, key, value)?,
        "dataset.dim" => cfg.synthetic.dim = parse_as(line, key, value)?,
        "dataset.separation" => cfg.synthetic.separation = parse_as(line, key, value)?,
        "dataset.noise" => cfg.synthetic.noise = parse_as(line, key, value)?,
        "dataset.imbalance" => {
            cfg.synthetic.imbalance =
                if value == "none" { None } else { Some(parse_as(line, key, value)?) }
        }
        "dataset.seed" => cfg.synthetic.seed = parse_as(line, key, value)?,
        "dataset.test_fraction" => cfg.test_fraction = parse_as(line, key, value)?,
        "model.mode" => {
            cfg.loop_cfg.model.mode = match value {
                "adapter" => Mode::Adapter,
                "frozen" => Mode::Frozen,
                _ => {
                    return Err(invalid(format!(
                        "invalid value for model.mode: {value:?} (adapter or frozen)"
                    )))
                }
            }
        }
        "model.dim" => cfg.loop_cfg.model.dim = parse_as(line, key, value)?,
        "model.layers" => cfg.loop_cfg.model.layers = parse_as(line, key, value)?,
        "model.heads" => cfg.loop_cfg.model.heads = parse_as(line, key, value)?,
        "model.mlp_hidden" => cfg.loop_cfg.model.mlp_hidden = parse_as(line, key, value)?,
        "model.pooling" => {
            cfg.loop_cfg.model.pooling = match value {
                "mean" => Pooling::Mean,
                "first" => Pooling::FirstToken,
                _ => {
                    return Err(invalid(format!(
                        "invalid value for model.pooling: {value:?} (mean or first)"
                    )))
                }
            }
        }
        "lora.rank" => cfg.loop_cfg.model.lora.rank = parse_as(line, key, value)?,
        "lora.alpha" => cfg.loop_cfg.model.lora.alpha = parse_as(line, key, value)?,
        "lora.dropout" => cfg.loop_cfg.model.lora.dropout = parse_as(line, key, value)?,
        "lora.per_matrix" => cfg.loop_cfg.model.lora.per_matrix = parse_bool(line, key, value)?,
        "train.batch" => cfg.loop_cfg.train.batch_size = parse_as(line, key, value)?,
        "train.lr" => cfg.loop_cfg.schedule.base_lr = parse_as(line, key, value)?,
        "train.weight_decay" => cfg.loop_cfg.train.weight_decay = parse_as(line, key, value)?,
        "train.epochs" => cfg.loop_cfg.train.epochs = parse_as(line, key, value)?,
        "train.val_fraction" => cfg.loop_cfg.train.val_fraction = parse_as(line, key, value)?,
        "schedule.gamma" => cfg.loop_cfg.schedule.gamma = parse_as(line, key, value)?,
        "schedule.drops" => {
            cfg.loop_cfg.schedule.drop_cycles = value
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_as(line, key, s.trim()))
                .collect::<Result<_, _>>()?
        }
        "al.budget" => cfg.loop_cfg.budget = parse_as(line, key, value)?,
        "al.per_cycle" => cfg.loop_cfg.per_cycle = parse_as(line, key, value)?,
        "al.strategy" => {
            cfg.loop_cfg.strategy = Strategy::from_str(value)
                .map_err(|_| invalid(format!("invalid value for al.strategy: {value:?}")))?
        }
        "al.balanced" => cfg.loop_cfg.balanced = parse_bool(line, key, value)?,
        "trials" => cfg.loop_cfg.trials = parse_as(line, key, value)?,
        "seed" => cfg.loop_cfg.seed = parse_as(line, key, value)?,
        "output.timing" => cfg.timing = parse_bool(line, key, value)?,
        "parallel" => cfg.parallel = parse_bool(line, key, value)?,
        _ => return Err(invalid(format!("unknown key {key}"))),
    }
    Ok(())
}

/// Render the fully resolved config, one sorted `key=value` per line. This is
/// what the manifest's config hash covers, so two configs that resolve to the
/// same experiment hash identically even if written differently.
pub fn canonical(cfg: &ExperimentConfig) -> String {
    let model = &cfg.loop_cfg.model;
    let mut pairs: Vec<(String, String)> = vec![
        (
            "dataset.path".into(),
            cfg.dataset_path
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
        ),
        (
            "dataset.kind".into(),
            match cfg.synthetic.kind {
                peal_core::DataKind::Tokens => "tokens".into(),
                peal_core::DataKind::Embeddings => "embeddings".into(),
            },
        ),
        ("dataset.classes".into(), cfg.synthetic.classes.to_string()),
        ("dataset.per_class".into(), cfg.synthetic.per_class.to_string()),
        ("dataset.tokens".into(), cfg.synthetic.tokens.to_string()),
        ("dataset.dim".into(), cfg.synthetic.dim.to_string()),
        ("dataset.separation".into(), cfg.synthetic.separation.to_string()),
        ("dataset.noise".into(), cfg.synthetic.noise.to_string()),
        (
            "dataset.imbalance".into(),
            cfg.synthetic.imbalance.map_or_else(|| "none".into(), |r| r.to_string()),
        ),
        ("dataset.seed".into(), cfg.synthetic.seed.to_string()),
        ("dataset.test_fraction".into(), cfg.test_fraction.to_string()),
        (
            "model.mode".into(),
            match model.mode {
                Mode::Adapter => "adapter".into(),
                Mode::Frozen => "frozen".into(),
            },
        ),
        ("model.dim".into(), model.dim.to_string()),
        ("model.layers".into(), model.layers.to_string()),
        ("model.heads".into(), model.heads.to_string()),
        ("model.mlp_hidden".into(), model.mlp_hidden.to_string()),
        (
            "model.pooling".into(),
            match model.pooling {
                Pooling::Mean => "mean".into(),
                Pooling::FirstToken => "first".into(),
            },
        ),
        ("lora.rank".into(), model.lora.rank.to_string()),
        ("lora.alpha".into(), model.lora.alpha.to_string()),
        ("lora.dropout".into(), model.lora.dropout.to_string()),
        ("lora.per_matrix".into(), model.lora.per_matrix.to_string()),
        ("train.batch".into(), cfg.loop_cfg.train.batch_size.to_string()),
        ("train.lr".into(), cfg.loop_cfg.schedule.base_lr.to_string()),
        ("train.weight_decay".into(), cfg.loop_cfg.train.weight_decay.to_string()),
        ("train.epochs".into(), cfg.loop_cfg.train.epochs.to_string()),
        ("train.val_fraction".into(), cfg.loop_cfg.train.val_fraction.to_string()),
        ("schedule.gamma".into(), cfg.loop_cfg.schedule.gamma.to_string()),
        (
            "schedule.drops".into(),
            cfg.loop_cfg
                .schedule
                .drop_cycles
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("al.budget".into(), cfg.loop_cfg.budget.to_string()),
        ("al.per_cycle".into(), cfg.loop_cfg.per_cycle.to_string()),
        ("al.strategy".into(), cfg.loop_cfg.strategy.to_string()),
        ("al.balanced".into(), cfg.loop_cfg.balanced.to_string()),
        ("trials".into(), cfg.loop_cfg.trials.to_string()),
        ("seed".into(), cfg.loop_cfg.seed.to_string()),
        ("output.timing".into(), cfg.timing.to_string()),
        ("parallel".into(), cfg.parallel.to_string()),
    ];
    pairs.sort();
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// FNV-1a over the canonical config text, as a fixed-width hex id.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut h = 0xcbf29ce484222325u64;
    for b in canonical(cfg).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
