use std::fmt::Write as _;

use anyhow::Result;
use rayon::prelude::*;
use ssal_core::analysis::{fft_magnitude, heatmap_pgm, mean_saliency_per_feature, periodicity_score};
use ssal_core::permutation::mean_mask;

use crate::run::{invalid, Run};
use crate::AnalyzeArgs;

const IMPORTANCE: &str = "feature_importance.csv";
const HEATMAP: &str = "heatmaps/mean_saliency.pgm";

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    if args.jobs == 0 {
        return Err(invalid("--jobs must be >= 1"));
    }
    let run = Run::open(&args.run)?;
    let cfg = run.config()?;
    let prep = run.prepared(&cfg)?;
    let maps = run.saliency()?;
    let te = prep.test_windows()?;
    for m in &maps {
        if te.get(m.sample_id).map(|w| w.target_index()) != Some(m.target_index) {
            return Err(invalid(format!(
                "saliency sample {} does not match the prepared test windows",
                m.sample_id
            )));
        }
    }
    run.begin("analyze", &cfg, &[IMPORTANCE, HEATMAP])?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
    let d = prep.frame.features();
    let per_sample = pool.install(|| {
        maps.par_iter()
            .map(|m| {
                let values = &te[m.sample_id].image.values;
                (0..d)
                    .map(|c| Ok(periodicity_score(&fft_magnitude(&values.column(c))?)))
                    .collect::<ssal_core::Result<Vec<f64>>>()
            })
            .collect::<ssal_core::Result<Vec<_>>>()
    })?;
    let periodicity: Vec<f64> = (0..d)
        .map(|c| per_sample.iter().map(|s| s[c]).sum::<f64>() / per_sample.len() as f64)
        .collect();
    let masks: Vec<_> = maps.iter().map(|m| &m.mask).collect();
    let saliency = mean_saliency_per_feature(&masks)?;

    let mut out = String::from("feature,mean_saliency,periodicity_score\n");
    for ((name, s), p) in prep.frame.feature_names.iter().zip(&saliency).zip(&periodicity) {
        let _ = writeln!(out, "{name},{s:.6},{p:.6}");
        println!("{name}: mean_saliency={s:.4} periodicity={p:.4}");
    }
    run.write(IMPORTANCE, &out)?;
    let owned: Vec<_> = maps.into_iter().map(|m| m.mask).collect();
    run.write(HEATMAP, &heatmap_pgm(&mean_mask(&owned)?)?)?;
    Ok(())
}
