use std::fmt::Write as _;

use anyhow::Result;
use ssal_core::analysis::heatmap_pgm;
use ssal_core::interpretation::InterpretContext;
use ssal_core::interpret_batch;

use crate::run::{invalid, mask_csv, saliency_file, Run, SALIENCY_INDEX};
use crate::InterpretArgs;

/// `count` window ids spread evenly over `0..available`.
pub fn pick_samples(available: usize, count: usize) -> Vec<usize> {
    let m = count.min(available);
    (0..m).map(|k| k * available / m).collect()
}

pub fn run(args: &InterpretArgs) -> Result<()> {
    if args.samples == 0 {
        return Err(invalid("--samples must be >= 1"));
    }
    if args.jobs == 0 {
        return Err(invalid("--jobs must be >= 1"));
    }
    let run = Run::open(&args.run)?;
    let mut cfg = run.config()?;
    if let Some(seed) = args.seed {
        cfg.interpret.seed = seed;
    }
    cfg.interpret.validate()?;
    let prep = run.prepared(&cfg)?;
    let ckpt = run.checkpoint()?;
    let te = prep.test_windows()?;
    let ids = pick_samples(te.len(), args.samples);
    if ids.len() < args.samples {
        log::warn!("only {} test windows; interpreting all of them", te.len());
    }
    let mut outputs = vec![SALIENCY_INDEX.to_string()];
    for &id in &ids {
        for ext in ["csv", "trace.csv", "pgm"] {
            outputs.push(saliency_file(id, ext));
        }
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    run.begin("interpret", &cfg, &refs)?;

    let ctx = InterpretContext {
        baseline: prep.baseline(),
        target_col: cfg.data.target_col,
    };
    let samples: Vec<_> = ids.iter().map(|&id| (id, &te[id])).collect();
    let results = interpret_batch(&ckpt.forecaster, &samples, &cfg.interpret, &ctx, args.jobs)?;

    let mut index = String::from("sample_id,target_index,mean_mask,final_lp\n");
    let mut failed = 0;
    for ((id, window), result) in samples.iter().zip(results) {
        match result {
            Ok(map) => {
                run.write(&saliency_file(*id, "csv"), &mask_csv(&map.mask_values))?;
                run.write(&saliency_file(*id, "trace.csv"), &map.trace_csv())?;
                run.write(&saliency_file(*id, "pgm"), &heatmap_pgm(&map.mask_values)?)?;
                let _ = writeln!(
                    index,
                    "{id},{},{:.6},{}",
                    window.target_index(),
                    map.mean(),
                    map.final_lp
                );
                println!("sample={id} target_index={} mean_mask={:.4}", window.target_index(), map.mean());
            }
            Err(e) => {
                failed += 1;
                log::error!("{e}");
            }
        }
    }
    run.write(SALIENCY_INDEX, &index)?;
    if failed > 0 {
        anyhow::bail!("{failed} of {} samples failed", samples.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::pick_samples;

    #[test]
    fn samples_are_spread_evenly() {
        assert_eq!(pick_samples(100, 5), vec![0, 20, 40, 60, 80]);
        assert_eq!(pick_samples(3, 5), vec![0, 1, 2]);
        assert_eq!(pick_samples(7, 1), vec![0]);
    }
}
