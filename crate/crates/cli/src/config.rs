//! Run configuration: defaults, then a TOML or JSON file, then flags.
//!
//! Layers are merged as JSON values so a file or flag only needs to name the
//! keys it changes. Keys that do not exist in the defaults are rejected,
//! which catches typos that `#[serde(default)]` would otherwise swallow.
//! The merged result is dumped as `config.json` into every run directory and
//! can be passed back with `--config` to repeat the run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lookaround_core::inference::InferConfig;
use lookaround_core::manifest::Split;
use lookaround_core::model::ModelConfig;
use lookaround_core::preprocess::PreprocessConfig;
use lookaround_core::scoring::Tolerance;
use lookaround_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::synth::SynthSpec;

pub const CONFIG_DUMP: &str = "config.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Directory for preprocessed recordings; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    /// Recordings for `infer` and `bench` (raw `.json` or `.edf`).
    pub recordings: Vec<PathBuf>,
    pub hypothesis: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Thread counts to time, each in its own pool. Empty means the machine
    /// core count only.
    pub threads: Vec<usize>,
    pub duration_s: f64,
    /// Seed of the synthetic hour used when no recording is given.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            threads: Vec::new(),
            duration_s: 3600.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Manifest split used by `infer`, `score` and `render`.
    pub split: Split,
    /// Continue training from the state file in `run_dir`.
    pub resume: bool,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub tolerance: Tolerance,
    pub synth: SynthSpec,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("run"),
            threads: 0,
            split: Split::Test,
            resume: false,
            paths: Paths::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
            tolerance: Tolerance::default(),
            synth: SynthSpec::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Parses a config file by extension: `.toml` or `.json`.
pub fn read_layer(path: &Path) -> Result<Value> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            let t: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok(serde_json::to_value(t)?)
        }
        Some("json") => {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
        _ => bail!("config {} must end in .toml or .json", path.display()),
    }
}

/// Recursively overlays `top` onto `base`, checking every key of `top`
/// exists in `base`. Objects merge; anything else replaces.
pub fn merge(base: &mut Value, top: &Value, at: &str) -> Result<()> {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                let path = if at.is_empty() {
                    k.clone()
                } else {
                    format!("{at}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => bail!("unknown config key {path}"),
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
    Ok(())
}

/// Turns `a.b.c=value` into `{"a":{"b":{"c":value}}}`. The value is read as
/// JSON when it parses (numbers, booleans, arrays, quoted strings) and as a
/// bare string otherwise.
pub fn parse_override(text: &str) -> Result<Value> {
    let (key, raw) = text
        .split_once('=')
        .with_context(|| format!("override {text:?} is not key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {text:?} has an empty key");
    }
    let mut value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    for part in key.rsplit('.') {
        value = Value::Object([(part.to_string(), value)].into_iter().collect());
    }
    Ok(value)
}

/// Defaults, then `file`, then each layer of `overrides` in order.
pub fn resolve(file: Option<&Path>, overrides: &[Value]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = file {
        merge(&mut value, &read_layer(path)?, "")?;
    }
    for o in overrides {
        merge(&mut value, o, "")?;
    }
    serde_json::from_value(value).context("config does not match the expected types")
}

impl RunConfig {
    pub fn dump(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(CONFIG_DUMP);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_nest_and_type() {
        assert_eq!(
            parse_override("train.epochs=5").unwrap(),
            json!({"train": {"epochs": 5}})
        );
        assert_eq!(
            parse_override("run_dir=out/a").unwrap(),
            json!({"run_dir": "out/a"})
        );
        assert_eq!(
            parse_override("bench.threads=[1,2]").unwrap(),
            json!({"bench": {"threads": [1, 2]}})
        );
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = resolve(None, &[json!({"train": {"epoch": 3}})]).unwrap_err();
        assert!(err.to_string().contains("train.epoch"), "{err}");
    }

    #[test]
    fn later_layers_win() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(
            &file,
            "threads = 2\n[train]\nepochs = 7\nseed = 3\n[preprocess]\nnotch_hz = 60.0\n",
        )
        .unwrap();
        let cfg = resolve(Some(&file), &[json!({"train": {"epochs": 9}})]).unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.preprocess.notch_hz, 60.0);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn dump_refeeds_to_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolve(
            None,
            &[json!({"model": {"embed_dim": 32}, "synth": {"seed": 11}})],
        )
        .unwrap();
        let dumped = cfg.dump(dir.path()).unwrap();
        assert_eq!(resolve(Some(&dumped), &[]).unwrap(), cfg);
    }
}
