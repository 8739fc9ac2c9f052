//! Run directory layout:
//!
//! ```text
//! manifest.txt            one block per stage invocation, written first
//! config.cfg              effective configuration
//! prepared/series.csv     scaled series with feature names
//! prepared/scaler.csv     feature,min,max
//! prepared/split.csv      interval,start,end
//! prepared/windows.csv    interval,window_id,start_index,target_index
//! model.ckpt              checkpoint (SSAL1)
//! loss_history.csv        epoch,train_loss,val_rse,val_corr
//! train_mask.{csv,pgm}    shared training mask
//! metrics.csv, forecasts.csv
//! saliency/index.csv      sample_id,target_index,mean_mask,final_lp
//! saliency/saliency_<id>.{csv,trace.csv,pgm}
//! permutation.csv, permutation_objective.txt
//! feature_importance.csv, heatmaps/mean_saliency.pgm
//! ```

use std::error::Error as StdError;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use ssal_core::data::{load_csv, LoadOptions, Prepared, Scaler, Split};
use ssal_core::{Checkpoint, Config, Tensor};

pub const CONFIG: &str = "config.cfg";
pub const MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const SERIES: &str = "prepared/series.csv";
pub const SCALER: &str = "prepared/scaler.csv";
pub const SPLIT: &str = "prepared/split.csv";
pub const WINDOWS: &str = "prepared/windows.csv";
pub const SALIENCY_INDEX: &str = "saliency/index.csv";

/// Bad input from the user: exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl StdError for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

pub fn saliency_file(id: usize, ext: &str) -> String {
    format!("saliency/saliency_{id}.{ext}")
}

/// `[w, D]` mask as CSV, six decimals, no header.
pub fn mask_csv(mask: &Tensor) -> String {
    let (w, _) = mask.dims2();
    let mut out = String::new();
    for t in 0..w {
        let row: Vec<String> = mask.row(t).iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_mask_csv(text: &str, origin: &Path) -> Result<Tensor> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| invalid(format!("{}: row {}: {e}", origin.display(), i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows).with_context(|| format!("{}: ragged mask", origin.display()))
}

/// A saliency mask saved by `interpret`.
pub struct SavedMap {
    pub sample_id: usize,
    pub target_index: usize,
    pub mask: Tensor,
}

pub struct Run {
    dir: PathBuf,
}

impl Run {
    pub fn create(dir: &Path) -> Result<Run> {
        if dir.join(CONFIG).exists() {
            return Err(invalid(format!(
                "{} already holds a run; choose a new --out",
                dir.display()
            )));
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run { dir: dir.to_path_buf() })
    }

    pub fn open(dir: &Path) -> Result<Run> {
        if !dir.join(CONFIG).is_file() {
            return Err(invalid(format!(
                "{} is not a run directory (no {CONFIG}); run `ssal prepare` first",
                dir.display()
            )));
        }
        Ok(Run { dir: dir.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Path of an artifact an earlier stage must have written.
    pub fn require(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.is_file() {
            return Err(invalid(format!(
                "{} is missing; run `ssal {stage}` on this run first",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn read(&self, rel: &str, stage: &str) -> Result<String> {
        let p = self.require(rel, stage)?;
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn config(&self) -> Result<Config> {
        let text = self.read(CONFIG, "prepare")?;
        text.parse::<Config>()
            .with_context(|| format!("{}", self.path(CONFIG).display()))
    }

    pub fn save_config(&self, cfg: &Config) -> Result<()> {
        self.write(CONFIG, &cfg.to_text())
    }

    /// Appends this stage's block to the manifest before any artifact is
    /// written.
    pub fn begin(&self, stage: &str, cfg: &Config, outputs: &[&str]) -> Result<()> {
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut block = format!(
            "[{stage}]\nversion = {}\nseed = {}\nstarted_unix = {started}\noutputs = {}\n",
            env!("SSAL_VERSION"),
            cfg.train.seed,
            outputs.join(", "),
        );
        let mut section = String::new();
        for line in cfg.to_text().lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.to_string();
            } else if let Some((k, v)) = line.split_once(" = ") {
                block.push_str(&format!("config.{section}.{k} = {v}\n"));
            }
        }
        block.push('\n');
        let path = self.path(MANIFEST);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        file.write_all(block.as_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn prepared(&self, cfg: &Config) -> Result<Prepared> {
        let opts = LoadOptions {
            has_header: true,
            ..LoadOptions::default()
        };
        let frame = load_csv(&self.require(SERIES, "prepare")?, opts)?;
        let d = frame.features();

        let mut min = Vec::with_capacity(d);
        let mut max = Vec::with_capacity(d);
        for line in self.read(SCALER, "prepare")?.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let [_, lo, hi] = parts[..] else {
                return Err(invalid(format!("{SCALER}: bad line {line:?}")));
            };
            min.push(lo.parse::<f64>().with_context(|| format!("{SCALER}: {line:?}"))?);
            max.push(hi.parse::<f64>().with_context(|| format!("{SCALER}: {line:?}"))?);
        }
        if min.len() != d {
            return Err(invalid(format!("{SCALER} has {} features, series has {d}", min.len())));
        }

        let mut ranges = Vec::new();
        for line in self.read(SPLIT, "prepare")?.lines().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let [_, a, b] = parts[..] else {
                return Err(invalid(format!("{SPLIT}: bad line {line:?}")));
            };
            ranges.push(a.parse::<usize>()?..b.parse::<usize>()?);
        }
        let [train, val, test] = <[_; 3]>::try_from(ranges)
            .map_err(|_| invalid(format!("{SPLIT} needs train, val and test rows")))?;
        Ok(Prepared {
            frame,
            scaler: Scaler { min, max },
            split: Split { train, val, test },
            window: cfg.data.window,
            horizon: cfg.data.horizon,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let p = self.require(CHECKPOINT, "train")?;
        Ok(Checkpoint::load(&p)?)
    }

    /// Masks listed in the saliency index, in index order.
    pub fn saliency(&self) -> Result<Vec<SavedMap>> {
        let index = self.read(SALIENCY_INDEX, "interpret")?;
        let mut out = Vec::new();
        for line in index.lines().skip(1) {
            let mut parts = line.split(',');
            let (Some(id), Some(target)) = (parts.next(), parts.next()) else {
                return Err(invalid(format!("{SALIENCY_INDEX}: bad line {line:?}")));
            };
            let sample_id: usize = id.parse().with_context(|| format!("{SALIENCY_INDEX}: {line:?}"))?;
            let rel = saliency_file(sample_id, "csv");
            let text = self.read(&rel, "interpret")?;
            out.push(SavedMap {
                sample_id,
                target_index: target.parse().with_context(|| format!("{SALIENCY_INDEX}: {line:?}"))?,
                mask: parse_mask_csv(&text, &self.path(&rel))?,
            });
        }
        if out.is_empty() {
            return Err(invalid(format!("{SALIENCY_INDEX} lists no samples")));
        }
        Ok(out)
    }
}
