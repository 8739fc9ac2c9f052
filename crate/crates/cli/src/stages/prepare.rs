use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ssal_core::data::{load_csv, Prepared};
use ssal_core::Config;

use super::apply_overrides;
use crate::run::{invalid, Run, CONFIG, SCALER, SERIES, SPLIT, WINDOWS};
use crate::{Overrides, PrepareArgs};

pub fn run(args: &PrepareArgs) -> Result<Run> {
    prepare(&args.config, &args.out, &args.overrides)
}

fn number(v: f64) -> String {
    format!("{v}")
}

/// Creates `out` from the configuration file and the CSV it names. A
/// relative `data.path` is resolved against the configuration's directory.
pub fn prepare(config_path: &Path, out: &Path, overrides: &Overrides) -> Result<Run> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut cfg: Config = text
        .parse()
        .with_context(|| format!("config {}", config_path.display()))?;
    apply_overrides(&mut cfg, overrides);
    cfg.validate()?;
    if cfg.data.path.is_empty() {
        return Err(invalid("data.path is not set"));
    }
    let data_path = match Path::new(&cfg.data.path) {
        p if p.is_absolute() => p.to_path_buf(),
        p => config_path.parent().unwrap_or(Path::new(".")).join(p),
    };
    if !data_path.is_file() {
        return Err(invalid(format!("data file {} does not exist", data_path.display())));
    }
    let data_path = data_path
        .canonicalize()
        .with_context(|| format!("resolving {}", data_path.display()))?;
    cfg.data.path = data_path.display().to_string();

    let run = Run::create(out)?;
    run.begin("prepare", &cfg, &[CONFIG, SERIES, SCALER, SPLIT, WINDOWS])?;
    run.save_config(&cfg)?;

    let raw = load_csv(&data_path, cfg.data.load)?;
    if let Some(c) = cfg.data.target_col {
        if c >= raw.features() {
            return Err(invalid(format!(
                "target column {c} out of range: the series has {} features",
                raw.features()
            )));
        }
    }
    let prep = Prepared::new(&raw, cfg.data.split, cfg.data.window, cfg.data.horizon)?;

    let mut series = prep.frame.feature_names.join(",");
    series.push('\n');
    for t in 0..prep.frame.len() {
        let row: Vec<String> = prep.frame.values.row(t).iter().map(|&v| number(v)).collect();
        let _ = writeln!(series, "{}", row.join(","));
    }
    run.write(SERIES, &series)?;

    let mut scaler = String::from("feature,min,max\n");
    for (name, (lo, hi)) in prep
        .frame
        .feature_names
        .iter()
        .zip(prep.scaler.min.iter().zip(&prep.scaler.max))
    {
        let _ = writeln!(scaler, "{name},{},{}", number(*lo), number(*hi));
    }
    run.write(SCALER, &scaler)?;

    let intervals = [
        ("train", prep.split.train.clone()),
        ("val", prep.split.val.clone()),
        ("test", prep.split.test.clone()),
    ];
    let mut split = String::from("interval,start,end\n");
    let mut windows = String::from("interval,window_id,start_index,target_index\n");
    let mut counts = Vec::new();
    for (name, range) in intervals {
        let _ = writeln!(split, "{name},{},{}", range.start, range.end);
        let ws = prep.windows(range)?;
        for (i, w) in ws.iter().enumerate() {
            let _ = writeln!(windows, "{name},{i},{},{}", w.image.start_index, w.target_index());
        }
        counts.push(ws.len());
    }
    run.write(SPLIT, &split)?;
    run.write(WINDOWS, &windows)?;

    log::info!("prepared {} into {}", data_path.display(), out.display());
    println!(
        "rows={} features={} train_windows={} val_windows={} test_windows={}",
        prep.frame.len(),
        prep.frame.features(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(run)
}
