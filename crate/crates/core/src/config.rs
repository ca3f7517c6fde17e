//! Flat `key = value` run configuration layered over a named profile.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geomdist::LossVariant;
use crate::model::{DecoderFlags, ModelConfig};
use crate::training::{StageOneConfig, StageTwoConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("unknown profile '{0}' (expected desk|paper)")]
    UnknownProfile(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

/// Every recognised key with its `(desk, paper)` default.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "0"),
    ("points", "256", "2048"),
    ("latent_dim", "128", "128"),
    ("enc_widths", "16,32,64,128", "64,128,256,512"),
    ("dec_widths", "16,32,64,128", "64,128,256,512"),
    ("disc_widths", "16,32,64,128", "64,128,256,512"),
    ("disc_fc", "64", "256"),
    ("mapper_layers", "4", "4"),
    ("se_reduction", "4", "4"),
    ("mlp_decoder", "false", "false"),
    ("se_off", "false", "false"),
    ("surface_input", "false", "false"),
    ("disc_batch_norm", "false", "false"),
    ("loss_variant", "both", "both"),
    ("ae_lr", "0.001", "0.001"),
    ("ae_beta1", "0.9", "0.9"),
    ("ae_beta2", "0.99", "0.99"),
    ("ae_decay_epoch", "80", "400"),
    ("ae_decay_ratio", "0.1", "0.1"),
    ("ae_batch", "16", "128"),
    ("ae_epochs", "100", "500"),
    ("gan_lr", "0.0001", "0.0001"),
    ("gan_beta1", "0.5", "0.5"),
    ("gan_beta2", "0.9", "0.9"),
    ("gp_weight", "10", "10"),
    ("gan_batch", "16", "64"),
    ("gan_epochs", "100", "500"),
    ("d_steps_per_g", "5", "5"),
];

/// A profile plus explicit overrides. Lookups fall back to the profile default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    profile: Profile,
    overrides: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::new(Profile::Desk)
    }
}

impl RunConfig {
    pub fn new(profile: Profile) -> Self {
        RunConfig {
            profile,
            overrides: BTreeMap::new(),
        }
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.0)
    }

    /// Parses `key = value` lines (`#` starts a comment). A `profile` key
    /// selects the base profile; its position in the file does not matter.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k == "profile" {
                cfg.profile = v.parse()?;
            } else {
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Sets one key after checking that it exists and that its value parses.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "profile" {
            self.profile = value.parse()?;
            return Ok(());
        }
        if !KEYS.iter().any(|k| k.0 == key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let prev = self.overrides.insert(key.to_string(), value.to_string());
        if let Err(e) = self.check_value(key) {
            match prev {
                Some(p) => self.overrides.insert(key.to_string(), p),
                None => self.overrides.remove(key),
            };
            return Err(e);
        }
        Ok(())
    }

    /// Explicitly set keys, in key order.
    pub fn overrides(&self) -> impl Iterator<Item = (&str, &str)> {
        self.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.overrides.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        if let Some(v) = self.overrides.get(key) {
            return Ok(v);
        }
        KEYS.iter()
            .find(|k| k.0 == key)
            .map(|k| match self.profile {
                Profile::Desk => k.1,
                Profile::Paper => k.2,
            })
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key)?;
        v.parse().map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            msg: e.to_string(),
        })
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.get(key)?;
        v.split(',')
            .map(|s| {
                s.trim().parse().map_err(|e: std::num::ParseIntError| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    msg: e.to_string(),
                })
            })
            .collect()
    }

    fn check_value(&self, key: &str) -> Result<()> {
        match key {
            "enc_widths" | "dec_widths" | "disc_widths" => self.list(key).map(drop),
            "mlp_decoder" | "se_off" | "surface_input" | "disc_batch_norm" => {
                self.typed::<bool>(key).map(drop)
            }
            "loss_variant" => self.typed::<LossVariant>(key).map(drop),
            "seed" => self.typed::<u64>(key).map(drop),
            k if k.contains("lr")
                || k.contains("beta")
                || k.contains("ratio")
                || k == "gp_weight" =>
            {
                self.typed::<f64>(key).map(drop)
            }
            _ => self.typed::<usize>(key).map(drop),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.typed("seed")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            latent_dim: self.typed("latent_dim")?,
            enc_widths: self.list("enc_widths")?,
            dec_widths: self.list("dec_widths")?,
            disc_widths: self.list("disc_widths")?,
            disc_fc: self.typed("disc_fc")?,
            mapper_layers: self.typed("mapper_layers")?,
            se_reduction: self.typed("se_reduction")?,
            points: self.typed("points")?,
            flags: DecoderFlags {
                mlp_decoder: self.typed("mlp_decoder")?,
                se_off: self.typed("se_off")?,
                surface_input: self.typed("surface_input")?,
            },
            disc_batch_norm: self.typed("disc_batch_norm")?,
        })
    }

    pub fn stage_one(&self) -> Result<StageOneConfig> {
        Ok(StageOneConfig {
            lr: self.typed("ae_lr")?,
            betas: (self.typed("ae_beta1")?, self.typed("ae_beta2")?),
            decay_epoch: self.typed("ae_decay_epoch")?,
            decay_ratio: self.typed("ae_decay_ratio")?,
            batch: self.typed("ae_batch")?,
            epochs: self.typed("ae_epochs")?,
            loss_variant: self.typed("loss_variant")?,
        })
    }

    pub fn stage_two(&self) -> Result<StageTwoConfig> {
        Ok(StageTwoConfig {
            lr: self.typed("gan_lr")?,
            betas: (self.typed("gan_beta1")?, self.typed("gan_beta2")?),
            gp_weight: self.typed("gp_weight")?,
            batch: self.typed("gan_batch")?,
            epochs: self.typed("gan_epochs")?,
            d_steps_per_g: self.typed("d_steps_per_g")?,
        })
    }

    /// Every key with its resolved value, `profile` first.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut out = vec![("profile".to_string(), self.profile.to_string())];
        for (k, _, _) in KEYS {
            out.push((k.to_string(), self.get(k).expect("known key").to_string()));
        }
        out
    }

    /// Fully resolved config in the file syntax accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        self.resolved()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
