//! Plain-text `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [data]
//! window = 24
//! horizon = 3
//! ```
//!
//! Every key is optional and falls back to its documented default (see
//! `configs/default.cfg`). Unknown sections or keys are rejected, all of
//! them listed in one error.

use std::str::FromStr;

use crate::data::{LoadOptions, MissingPolicy};
use crate::error::{Error, Result};
use crate::forecasters::ModelConfig;
use crate::interpretation::{InterpretConfig, Target};
use crate::permutation::{Aggregate, PermuteConfig};
use crate::reference::ReferenceSpec;
use crate::training::{LossKind, TrainConfig};

/// A group of keys under one `[section]` header.
pub trait Section {
    /// Sets `key`; returns `Ok(false)` if the key is not part of this section.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Current values in canonical order.
    fn entries(&self) -> Vec<(&'static str, String)>;
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

pub(crate) fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits config text into `(section, key, value, line)` entries.
pub(crate) fn tokenize(text: &str) -> Result<Vec<(String, String, String, usize)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((section.clone(), k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub(crate) fn render(out: &mut String, name: &str, section: &dyn Section) {
    out.push_str(&format!("[{name}]\n"));
    for (k, v) in section.entries() {
        out.push_str(&format!("{k} = {v}\n"));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub path: String,
    pub load: LoadOptions,
    pub window: usize,
    pub horizon: usize,
    pub split: (f64, f64, f64),
    /// Restrict loss and metrics to one column.
    pub target_col: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: String::new(),
            load: LoadOptions::default(),
            window: 24,
            horizon: 3,
            split: (0.6, 0.2, 0.2),
            target_col: None,
        }
    }
}

impl Section for DataConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "path" => self.path = value.to_string(),
            "has_header" => self.load.has_header = parse_bool(key, value)?,
            "timestamp_col" => self.load.timestamp_col = parse_bool(key, value)?,
            "missing" => {
                self.load.missing = match value {
                    "reject" => MissingPolicy::Reject,
                    "forward_fill" => MissingPolicy::ForwardFill,
                    _ => return Err(Error::Config(format!("data.missing: unknown policy {value:?}"))),
                }
            }
            "window" => self.window = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "split" => {
                let parts: Vec<f64> = parse_list(key, value)?;
                let [a, b, c] = parts[..] else {
                    return Err(Error::Config("data.split needs three fractions".into()));
                };
                self.split = (a, b, c);
            }
            "target_col" => {
                self.target_col = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("path", self.path.clone()),
            ("has_header", self.load.has_header.to_string()),
            ("timestamp_col", self.load.timestamp_col.to_string()),
            (
                "missing",
                match self.load.missing {
                    MissingPolicy::Reject => "reject",
                    MissingPolicy::ForwardFill => "forward_fill",
                }
                .to_string(),
            ),
            ("window", self.window.to_string()),
            ("horizon", self.horizon.to_string()),
            ("split", format!("{},{},{}", self.split.0, self.split.1, self.split.2)),
            (
                "target_col",
                self.target_col.map_or("none".to_string(), |c| c.to_string()),
            ),
        ]
    }
}

impl Section for ReferenceSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "mode" => self.mode = value.parse()?,
            "sigma1" => self.sigma1 = parse(key, value)?,
            "sigma2" => self.sigma2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("mode", self.mode.to_string()),
            ("sigma1", self.sigma1.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Mask settings shared by both phases.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskConfig {
    pub init_logit: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { init_logit: 0.0 }
    }
}

impl Section for MaskConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "init_logit" => self.init_logit = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![("init_logit", self.init_logit.to_string())]
    }
}

/// `[loss]`: only `kind = mse` is implemented; `mae` is reserved.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
}

impl Section for LossConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "kind" => self.kind = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![("kind", self.kind.to_string())]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub reference: ReferenceSpec,
    pub mask: MaskConfig,
    pub interpret: InterpretConfig,
    pub permute: PermuteConfig,
}

impl Config {
    fn sections_mut(&mut self) -> [(&'static str, &mut dyn Section); 8] {
        [
            ("data", &mut self.data),
            ("model", &mut self.model),
            ("train", &mut self.train),
            ("loss", &mut self.loss),
            ("reference", &mut self.reference),
            ("mask", &mut self.mask),
            ("interpret", &mut self.interpret),
            ("permute", &mut self.permute),
        ]
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sections: [(&str, &dyn Section); 8] = [
            ("data", &self.data),
            ("model", &self.model),
            ("train", &self.train),
            ("loss", &self.loss),
            ("reference", &self.reference),
            ("mask", &self.mask),
            ("interpret", &self.interpret),
            ("permute", &self.permute),
        ];
        for (i, (name, s)) in sections.into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            render(&mut out, name, s);
        }
        out
    }

    /// Overrides every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.reference.seed = seed;
        self.interpret.seed = seed;
        self.permute.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.window == 0 || self.data.horizon == 0 {
            return Err(Error::Config("data.window and data.horizon must be >= 1".into()));
        }
        self.model.validate(self.data.window)?;
        self.train.validate()?;
        self.reference.validate()?;
        self.interpret.validate()?;
        self.permute.validate()?;
        if self.loss.kind != LossKind::Mse {
            return Err(Error::Config(
                "loss.kind = mae is reserved and not implemented; use mse".into(),
            ));
        }
        Ok(())
    }
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut unknown = Vec::new();
        for (section, key, value, line) in tokenize(text)? {
            let mut known = false;
            for (name, s) in cfg.sections_mut() {
                if name == section {
                    known = s
                        .set(&key, &value)
                        .map_err(|e| Error::Config(format!("line {line}: {section}.{e}")))?;
                }
            }
            if !known {
                unknown.push(if section.is_empty() {
                    key
                } else {
                    format!("{section}.{key}")
                });
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Target::Truth),
            "self" => Ok(Target::OwnPrediction),
            _ => Err(Error::Config(format!("unknown interpretation target {s:?} (target, self)"))),
        }
    }
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            other => other
                .strip_prefix("sample:")
                .and_then(|id| id.parse().ok())
                .map(Aggregate::Sample)
                .ok_or_else(|| Error::Config(format!("unknown aggregate {s:?} (mean, sample:<id>)"))),
        }
    }
}
