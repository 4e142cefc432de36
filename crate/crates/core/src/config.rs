//! Run configuration: network architecture plus training schedule, stored
//! as a flat `key = value` UTF-8 text format with strict key checking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetKind;
use crate::networks::{NetworkConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for '{key}': {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Full training-run description. Round-trips losslessly through the text
/// format; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub seed: u64,
    pub dataset: DatasetKind,
    pub dataset_size: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Discriminator regularization interval (R1 every k_d steps).
    pub k_d: u32,
    /// Generator regularization interval (path length every k_g steps).
    pub k_g: u32,
    pub r1_enabled: bool,
    pub r1_gamma: f64,
    pub pl_enabled: bool,
    /// Path-length weight; `None` uses the resolution-derived default.
    pub pl_weight: Option<f64>,
    pub pl_decay: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Generator EMA half-life in thousands of images.
    pub ema_halflife_kimg: f64,
    pub style_mix_prob: f64,
    pub checkpoint_every: u64,
    pub snapshot_every: u64,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            seed: 1,
            dataset: DatasetKind::Blobs,
            dataset_size: 4096,
            batch_size: 8,
            total_steps: 2000,
            k_d: 16,
            k_g: 8,
            r1_enabled: true,
            r1_gamma: 10.0,
            pl_enabled: true,
            pl_weight: None,
            pl_decay: 0.99,
            lr: 2e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            ema_halflife_kimg: 10.0,
            style_mix_prob: 0.9,
            checkpoint_every: 1000,
            snapshot_every: 500,
            out_dir: "runs/out".into(),
        }
    }
}

impl RunConfig {
    /// Serializes to the flat text format (every key, fixed order).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = &self.network;
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("resolution", n.resolution.to_string());
        kv("z_dim", n.z_dim.to_string());
        kv("w_dim", n.w_dim.to_string());
        kv("mapping_depth", n.mapping_depth.to_string());
        kv("channel_base", n.channel_base.to_string());
        kv("channel_cap", n.channel_cap.to_string());
        kv("hi_res_mult", n.hi_res_mult.to_string());
        kv("hi_res_start", n.hi_res_start.to_string());
        kv("g_variant", n.g_variant.to_string());
        kv("d_variant", n.d_variant.to_string());
        kv("mbstd_group", n.mbstd_group.to_string());
        kv("seed", self.seed.to_string());
        kv("dataset", self.dataset.to_string());
        kv("dataset_size", self.dataset_size.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("k_d", self.k_d.to_string());
        kv("k_g", self.k_g.to_string());
        kv("r1_enabled", self.r1_enabled.to_string());
        kv("r1_gamma", self.r1_gamma.to_string());
        kv("pl_enabled", self.pl_enabled.to_string());
        kv(
            "pl_weight",
            self.pl_weight.map_or_else(|| "auto".into(), |v| v.to_string()),
        );
        kv("pl_decay", self.pl_decay.to_string());
        kv("lr", self.lr.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("ema_halflife_kimg", self.ema_halflife_kimg.to_string());
        kv("style_mix_prob", self.style_mix_prob.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("snapshot_every", self.snapshot_every.to_string());
        kv("out_dir", self.out_dir.clone());
        s
    }

    /// Parses the flat text format, starting from defaults. `#` starts a
    /// comment; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((k, v)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            };
            cfg.set_key(k.trim(), v.trim())
                .map_err(|e| match e {
                    SetKeyError::Unknown => ConfigError::UnknownKey { line, key: k.trim().into() },
                    SetKeyError::Bad(message) => ConfigError::BadValue {
                        line,
                        key: k.trim().into(),
                        message,
                    },
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single `key=value` override (used for CLI flags).
    pub fn set_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(ConfigError::Syntax { line: 0, text: kv.to_string() });
        };
        self.set_key(k.trim(), v.trim()).map_err(|e| match e {
            SetKeyError::Unknown => ConfigError::UnknownKey { line: 0, key: k.trim().into() },
            SetKeyError::Bad(message) => ConfigError::BadValue {
                line: 0,
                key: k.trim().into(),
                message,
            },
        })
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<(), SetKeyError> {
        fn p<T: std::str::FromStr>(v: &str) -> Result<T, SetKeyError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| SetKeyError::Bad(e.to_string()))
        }
        match key {
            "resolution" => self.network.resolution = p(value)?,
            "z_dim" => self.network.z_dim = p(value)?,
            "w_dim" => self.network.w_dim = p(value)?,
            "mapping_depth" => self.network.mapping_depth = p(value)?,
            "channel_base" => self.network.channel_base = p(value)?,
            "channel_cap" => self.network.channel_cap = p(value)?,
            "hi_res_mult" => self.network.hi_res_mult = p(value)?,
            "hi_res_start" => self.network.hi_res_start = p(value)?,
            "g_variant" => self.network.g_variant = p::<Variant>(value)?,
            "d_variant" => self.network.d_variant = p::<Variant>(value)?,
            "mbstd_group" => self.network.mbstd_group = p(value)?,
            "seed" => self.seed = p(value)?,
            "dataset" => self.dataset = p::<DatasetKind>(value)?,
            "dataset_size" => self.dataset_size = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "total_steps" => self.total_steps = p(value)?,
            "k_d" => self.k_d = p(value)?,
            "k_g" => self.k_g = p(value)?,
            "r1_enabled" => self.r1_enabled = p(value)?,
            "r1_gamma" => self.r1_gamma = p(value)?,
            "pl_enabled" => self.pl_enabled = p(value)?,
            "pl_weight" => {
                self.pl_weight = if value == "auto" { None } else { Some(p(value)?) };
            }
            "pl_decay" => self.pl_decay = p(value)?,
            "lr" => self.lr = p(value)?,
            "adam_beta1" => self.adam_beta1 = p(value)?,
            "adam_beta2" => self.adam_beta2 = p(value)?,
            "adam_eps" => self.adam_eps = p(value)?,
            "ema_halflife_kimg" => self.ema_halflife_kimg = p(value)?,
            "style_mix_prob" => self.style_mix_prob = p(value)?,
            "checkpoint_every" => self.checkpoint_every = p(value)?,
            "snapshot_every" => self.snapshot_every = p(value)?,
            "out_dir" => self.out_dir = value.to_string(),
            _ => return Err(SetKeyError::Unknown),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.network.validate().map_err(ConfigError::Invalid)?;
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.k_d == 0 || self.k_g == 0 {
            return Err(ConfigError::Invalid("regularization intervals must be >= 1".into()));
        }
        if self.dataset_size == 0 {
            return Err(ConfigError::Invalid("dataset_size must be positive".into()));
        }
        Ok(())
    }
}

enum SetKeyError {
    Unknown,
    Bad(String),
}
