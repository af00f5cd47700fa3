use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::LossReduction;
use crate::error::{Error, Result};
use crate::model::ModelShape;

/// Training and model hyperparameters. Only `d` is required in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    #[serde(rename = "K", default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::alpha_init")]
    pub alpha_init: f64,
    #[serde(default)]
    pub beta_init: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    /// Epoch at which the learning rate is multiplied by `lr_decay_factor`.
    /// Defaults to half of `epochs`.
    #[serde(default)]
    pub lr_decay_epoch: Option<usize>,
    #[serde(default = "defaults::lr_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::attention_blocks")]
    pub attention_blocks: usize,
    /// Fraction of the dataset held out for the per-epoch rSum.
    #[serde(default = "defaults::val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub loss_reduction: LossReduction,
}

mod defaults {
    pub fn heads() -> usize {
        8
    }
    pub fn alpha_init() -> f64 {
        5.0
    }
    pub fn delta() -> f64 {
        0.3
    }
    pub fn margin() -> f64 {
        0.2
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn learning_rate() -> f64 {
        2e-4
    }
    pub fn lr_decay_factor() -> f64 {
        0.1
    }
    pub fn attention_blocks() -> usize {
        1
    }
    pub fn val_fraction() -> f64 {
        0.2
    }
}

impl TrainConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            heads: defaults::heads(),
            alpha_init: defaults::alpha_init(),
            beta_init: 0.0,
            delta: defaults::delta(),
            margin: defaults::margin(),
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            lr_decay_epoch: None,
            lr_decay_factor: defaults::lr_decay_factor(),
            seed: 0,
            attention_blocks: defaults::attention_blocks(),
            val_fraction: defaults::val_fraction(),
            loss_reduction: LossReduction::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("K", self.heads),
            ("batch_size", self.batch_size),
            ("attention_blocks", self.attention_blocks),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let finite = [
            ("alpha_init", self.alpha_init),
            ("beta_init", self.beta_init),
            ("delta", self.delta),
            ("margin", self.margin),
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
            ("val_fraction", self.val_fraction),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} is not finite")));
            }
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!("delta {} is negative", self.delta)));
        }
        if self.margin <= 0.0 || self.learning_rate <= 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(Error::Config("margin, learning_rate and lr_decay_factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    pub fn decay_epoch(&self) -> usize {
        self.lr_decay_epoch.unwrap_or(self.epochs / 2)
    }

    /// Learning rate in effect during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch() {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            d: self.d,
            heads: self.heads,
            attention_blocks: self.attention_blocks,
            alpha_init: self.alpha_init,
            beta_init: self.beta_init,
            delta: self.delta,
            margin: self.margin,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
