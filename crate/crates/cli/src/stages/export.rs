use std::fs;

use anyhow::{Context, Result};
use ssal_core::analysis::export_heatmap_pgm;
use ssal_core::permutation::mean_mask;

use crate::run::{invalid, parse_mask_csv, Run, SALIENCY_INDEX};
use crate::ExportArgs;

const TRAIN_MASK: &str = "train_mask.csv";

pub fn run(args: &ExportArgs) -> Result<()> {
    let run = Run::open(&args.run)?;
    let cfg = run.config()?;
    let out = args.out.clone().unwrap_or_else(|| run.path("export"));

    let mut masks = Vec::new();
    if run.path(TRAIN_MASK).is_file() {
        let text = run.read(TRAIN_MASK, "train")?;
        masks.push(("train_mask.pgm".to_string(), parse_mask_csv(&text, &run.path(TRAIN_MASK))?));
    }
    if run.path(SALIENCY_INDEX).is_file() {
        let maps = run.saliency()?;
        let mean = mean_mask(&maps.iter().map(|m| m.mask.clone()).collect::<Vec<_>>())?;
        for m in maps {
            masks.push((format!("saliency_{}.pgm", m.sample_id), m.mask));
        }
        masks.push(("mean_saliency.pgm".to_string(), mean));
    }
    if masks.is_empty() {
        return Err(invalid("nothing to export; run `ssal train` or `ssal interpret` first"));
    }
    let names: Vec<String> = masks.iter().map(|(n, _)| out.join(n).display().to_string()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    run.begin("export", &cfg, &refs)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, mask) in &masks {
        export_heatmap_pgm(mask, &out.join(name))?;
    }
    println!("exported {} heatmaps to {}", masks.len(), out.display());
    Ok(())
}
