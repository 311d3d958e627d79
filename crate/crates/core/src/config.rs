//! Flat `key = value` run configuration. Unknown keys are errors and the
//! printed form parses back to an identical value.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::training::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

/// Training settings plus data paths and evaluation cadence.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_data: PathBuf,
    pub eval_data: Option<PathBuf>,
    /// Evaluate every this many epochs (0: only after the last).
    pub eval_every: usize,
    /// Mode counts to decode at evaluation; each at least `train.modes`.
    pub eval_modes: Vec<usize>,
}

impl RunConfig {
    pub fn new(train_data: PathBuf) -> Self {
        Self {
            train: TrainConfig::default(),
            train_data,
            eval_data: None,
            eval_every: 1,
            eval_modes: vec![6],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Value {
            key: "train".into(),
            message: e.to_string(),
        })?;
        if self.eval_modes.is_empty() || self.eval_modes.iter().any(|&k| k < self.train.modes) {
            return Err(ConfigError::Value {
                key: "eval_modes".into(),
                message: format!("entries must be at least modes = {}", self.train.modes),
            });
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::new(PathBuf::new());
        let mut have_data = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "train_data" {
                have_data = true;
            }
            config.set(key, value).map_err(|e| match e {
                ConfigError::Value { key, message } if message.starts_with("unknown key") => ConfigError::Syntax {
                    line: i + 1,
                    message: format!("unknown key `{key}`"),
                },
                other => other,
            })?;
        }
        if !have_data {
            return Err(ConfigError::Missing("train_data"));
        }
        config.validate()?;
        Ok(config)
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::Value {
                key: key.to_string(),
                message: format!("cannot parse `{value}`: {e}"),
            })
        }
        let t = &mut self.train;
        match key {
            "strategy" => t.strategy = parse(key, value)?,
            "ignore_variant" => t.ignore_variant = parse(key, value)?,
            "rearrange" => t.rearrange = parse(key, value)?,
            "modes" => t.modes = parse(key, value)?,
            "layers" => t.layers = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "heads" => t.heads = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "match_family" => t.match_family = parse(key, value)?,
            "step_duration" => t.step_duration = parse(key, value)?,
            "map_radius" => t.map_radius = parse(key, value)?,
            "train_data" => self.train_data = PathBuf::from(value),
            "eval_data" => self.eval_data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_modes" => {
                self.eval_modes = value
                    .split(',')
                    .map(|v| parse::<usize>(key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            _ => {
                return Err(ConfigError::Value {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("strategy", t.strategy.as_str().into());
        kv("ignore_variant", t.ignore_variant.as_str().into());
        kv("rearrange", t.rearrange.to_string());
        kv("modes", t.modes.to_string());
        kv("layers", t.layers.to_string());
        kv("hidden", t.hidden.to_string());
        kv("heads", t.heads.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.lr.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("dropout", t.dropout.to_string());
        kv("grad_clip", t.grad_clip.to_string());
        kv("seed", t.seed.to_string());
        kv("match_family", t.match_family.as_str().into());
        kv("step_duration", t.step_duration.to_string());
        kv("map_radius", t.map_radius.to_string());
        kv("train_data", self.train_data.display().to_string());
        kv(
            "eval_data",
            self.eval_data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("eval_every", self.eval_every.to_string());
        kv(
            "eval_modes",
            self.eval_modes.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        s
    }
}
