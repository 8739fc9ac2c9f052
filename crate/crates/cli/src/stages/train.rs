use anyhow::Result;
use ssal_core::analysis::heatmap_pgm;
use ssal_core::training::{train, TrainData};
use ssal_core::{Checkpoint, Forecaster, Mask};

use super::{apply_overrides, prepare::prepare};
use crate::run::{invalid, mask_csv, Run, CHECKPOINT};
use crate::TrainArgs;

const HISTORY: &str = "loss_history.csv";
const MASK_CSV: &str = "train_mask.csv";
const MASK_PGM: &str = "train_mask.pgm";

pub fn run(args: &TrainArgs) -> Result<()> {
    let run = match (&args.config, &args.out, &args.run) {
        (Some(config), Some(out), None) => prepare(config, out, &args.overrides)?,
        (None, None, Some(dir)) => {
            if args.overrides.timestamp_col {
                return Err(invalid("--timestamp-col only applies when preparing from --config"));
            }
            let run = Run::open(dir)?;
            let mut cfg = run.config()?;
            if apply_overrides(&mut cfg, &args.overrides) {
                cfg.validate()?;
                run.save_config(&cfg)?;
            }
            run
        }
        _ => return Err(invalid("give either --config with --out, or --run")),
    };
    let cfg = run.config()?;
    let prep = run.prepared(&cfg)?;
    let (w, d) = (prep.window, prep.frame.features());
    if let Some(c) = cfg.data.target_col.filter(|&c| c >= d) {
        return Err(invalid(format!("target column {c} out of range: the series has {d} features")));
    }
    run.begin("train", &cfg, &[CHECKPOINT, HISTORY, MASK_CSV, MASK_PGM])?;

    let tr = prep.train_windows()?;
    let va = prep.val_windows()?;
    let mut forecaster = Forecaster::new(&cfg.model, w, d, cfg.train.seed)?;
    let mut mask = Mask::new(w, d, cfg.mask.init_logit);
    let data = TrainData {
        train: &tr,
        val: &va,
        reference: cfg.reference.clone(),
        baseline: prep.baseline(),
        target_col: cfg.data.target_col,
    };
    log::info!(
        "training {} parameters on {} windows",
        forecaster.param_count(),
        tr.len()
    );
    let history = train(&mut forecaster, &mut mask, &data, &cfg.train)?;

    let learned = cfg.train.mask_enabled.then_some(mask);
    let ckpt = Checkpoint {
        config: cfg.clone(),
        forecaster,
        mask: learned.clone(),
    };
    ckpt.save(&run.path(CHECKPOINT))?;
    run.write(HISTORY, &history.to_csv())?;
    if let Some(m) = &learned {
        let values = m.values();
        run.write(MASK_CSV, &mask_csv(&values))?;
        run.write(MASK_PGM, &heatmap_pgm(&values)?)?;
    }
    let best = history
        .epochs
        .iter()
        .find(|r| r.epoch == history.best_epoch)
        .map_or(f64::NAN, |r| r.val_rse);
    println!(
        "epochs={} best_epoch={} val_rse={best:.6}",
        history.epochs.len(),
        history.best_epoch
    );
    Ok(())
}
