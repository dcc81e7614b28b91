//! Layered `key = value` run configuration.
//!
//! Layers apply in order `defaults <- config file <- command line`. Model
//! keys live under `model.`, training keys under `train.`, evaluation keys
//! under `eval.`. `model.preset` replaces every model key of its layer's
//! base with a named preset before that layer's explicit keys apply.

use std::collections::BTreeMap;
use std::path::PathBuf;

use noisecond_core::corpus::STANDARD_SNRS;
use noisecond_core::model::{parse_kv_lines, ModelConfig};
use noisecond_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

pub const PRESET_KEY: &str = "model.preset";
pub const DEFAULT_PRESET: &str = "desk";

pub const TRAIN_KEYS: [&str; 8] = [
    "train.lr",
    "train.batch_size",
    "train.steps",
    "train.seed",
    "train.eval_every",
    "train.val_examples",
    "train.snrs",
    "train.nan_retries",
];

pub const EVAL_KEYS: [&str; 1] = ["eval.seed"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn snrs_text(snrs: &[f64]) -> String {
    snrs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let mut values = BTreeMap::new();
        values.insert(PRESET_KEY.to_string(), DEFAULT_PRESET.to_string());
        let model = ModelConfig::preset(DEFAULT_PRESET).expect("default preset exists");
        for (k, v) in parse_kv_lines(&model.to_kv()).expect("canonical model text parses") {
            values.insert(format!("model.{k}"), v);
        }
        for (k, v) in [
            ("train.lr", t.lr.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.val_examples", t.val_examples.to_string()),
            ("train.snrs", snrs_text(&STANDARD_SNRS)),
            ("train.nan_retries", t.nan_retries.to_string()),
            ("eval.seed", "0".to_string()),
        ] {
            values.insert(k.to_string(), v);
        }
        RunConfig { values }
    }
}

impl RunConfig {
    /// Every key a run consumes.
    pub fn declared_keys() -> Vec<String> {
        std::iter::once(PRESET_KEY.to_string())
            .chain(ModelConfig::KEYS.iter().map(|k| format!("model.{k}")))
            .chain(TRAIN_KEYS.iter().chain(&EVAL_KEYS).map(|k| k.to_string()))
            .collect()
    }

    /// Defaults, then the file text, then command-line pairs.
    pub fn merge(file: Option<&str>, cli: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            let pairs = parse_kv_lines(text).map_err(|e| usage(format!("config file: {e}")))?;
            cfg.apply_layer(&pairs)?;
        }
        cfg.apply_layer(cli)?;
        cfg.model()?;
        cfg.train(None)?;
        cfg.eval_seed()?;
        Ok(cfg)
    }

    /// Applies one layer. Keys must be declared and occur once per layer.
    pub fn apply_layer(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let declared = Self::declared_keys();
        let mut seen = Vec::new();
        for (k, _) in pairs {
            if !declared.contains(k) {
                return Err(usage(format!("unknown configuration key {k:?}")));
            }
            if seen.contains(&k) {
                return Err(usage(format!("key {k:?} given twice")));
            }
            seen.push(k);
        }
        if let Some((_, preset)) = pairs.iter().find(|(k, _)| k == PRESET_KEY) {
            let model = ModelConfig::preset(preset).map_err(|e| usage(e.to_string()))?;
            for (k, v) in parse_kv_lines(&model.to_kv()).expect("canonical model text parses") {
                self.values.insert(format!("model.{k}"), v);
            }
        }
        for (k, v) in pairs {
            self.values.insert(k.clone(), v.clone());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key).ok_or_else(|| usage(format!("missing key {key:?}")))?;
        v.parse().map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(self.get(PRESET_KEY).unwrap_or(DEFAULT_PRESET)).map_err(|e| usage(e.to_string()))?;
        for k in ModelConfig::KEYS {
            if let Some(v) = self.get(&format!("model.{k}")) {
                m.set(k, v).map_err(|e| usage(e.to_string()))?;
            }
        }
        m.validate().map_err(|e| usage(e.to_string()))?;
        Ok(m)
    }

    pub fn train(&self, checkpoint_dir: Option<PathBuf>) -> Result<TrainConfig> {
        let snrs = self
            .get("train.snrs")
            .unwrap_or_default()
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("train.snrs: cannot parse {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let cfg = TrainConfig {
            model: self.model()?,
            lr: self.parse("train.lr")?,
            batch_size: self.parse("train.batch_size")?,
            steps: self.parse("train.steps")?,
            seed: self.parse("train.seed")?,
            eval_every: self.parse("train.eval_every")?,
            val_examples: self.parse("train.val_examples")?,
            snrs,
            nan_retries: self.parse("train.nan_retries")?,
            checkpoint_dir,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn eval_seed(&self) -> Result<u64> {
        self.parse("eval.seed")
    }

    /// Every key, one `key = value` line each, in key order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("expected key=value, got {s:?}")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
