//! Text checkpoint format, version `SSAL1`:
//!
//! ```text
//! SSAL1
//! window = 24
//! features = 3
//! config = 41
//! <41 lines of config text>
//! tensors = 4
//! ar.weights 2 3 8
//! <values, space separated>
//! ...
//! ```
//!
//! Each tensor entry is a header `name rank dim...` followed by one line of
//! values in shortest round-trip form, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Forecaster;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "SSAL1";

const MASK_KEY: &str = "mask.logits";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub forecaster: Forecaster,
    /// Shared training mask, when one was learned.
    pub mask: Option<Mask>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let config = self.config.to_text();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "window = {}", self.forecaster.window);
        let _ = writeln!(out, "features = {}", self.forecaster.features);
        let _ = writeln!(out, "config = {}", config.lines().count());
        out.push_str(&config);
        let mut tensors: Vec<(String, &Tensor)> = self
            .forecaster
            .params()
            .into_iter()
            .map(|p| (p.name, p.tensor))
            .collect();
        if let Some(m) = &self.mask {
            tensors.push((MASK_KEY.to_string(), &m.logits));
        }
        let _ = writeln!(out, "tensors = {}", tensors.len());
        for (name, t) in tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name} {} {}", t.rank(), dims.join(" "));
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("truncated before {what}")))
        };
        if next("magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("missing {CHECKPOINT_MAGIC} header")));
        }
        let window = header(next("window")?, "window")?;
        let features = header(next("features")?, "features")?;
        let config_lines = header(next("config")?, "config")?;
        let mut config_text = String::new();
        for _ in 0..config_lines {
            config_text.push_str(next("config text")?);
            config_text.push('\n');
        }
        let config: Config = config_text
            .parse()
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut forecaster = Forecaster::new(&config.model, window, features, 0)?;
        let count = header(next("tensors")?, "tensors")?;
        let mut mask = None;
        let mut seen = Vec::with_capacity(count);
        for _ in 0..count {
            let head = next("tensor header")?;
            let values = next("tensor values")?;
            let (name, tensor) = parse_tensor(head, values)?;
            if seen.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            if name == MASK_KEY {
                mask = Some(Mask::from_logits(tensor)?);
            } else {
                let mut params = forecaster.params_mut();
                let slot = params
                    .iter_mut()
                    .find(|p| p.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
                if slot.tensor.shape() != tensor.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{name}: shape {:?}, model expects {:?}",
                        tensor.shape(),
                        slot.tensor.shape()
                    )));
                }
                *slot.tensor = tensor;
            }
            seen.push(name);
        }
        if let Some(missing) = forecaster.params().iter().find(|p| !seen.contains(&p.name)) {
            return Err(Error::Checkpoint(format!("missing tensor {}", missing.name)));
        }
        Ok(Checkpoint {
            config,
            forecaster,
            mask,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text)
    }
}

fn header(line: &str, key: &str) -> Result<usize> {
    line.split_once('=')
        .filter(|(k, _)| k.trim() == key)
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key} = <n>`, got {line:?}")))
}

fn parse_tensor(head: &str, values: &str) -> Result<(String, Tensor)> {
    let bad = || Error::Checkpoint(format!("bad tensor header {head:?}"));
    let mut parts = head.split_whitespace();
    let name = parts.next().ok_or_else(bad)?.to_string();
    let rank: usize = parts.next().and_then(|r| r.parse().ok()).ok_or_else(bad)?;
    let dims: Vec<usize> = parts.map(|d| d.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if dims.len() != rank {
        return Err(bad());
    }
    let data: Vec<f64> = values
        .split_whitespace()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("{name}: bad value {v:?}")))
        })
        .collect::<Result<_>>()?;
    let tensor = Tensor::new(&dims, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    Ok((name, tensor))
}
