use std::fmt::Write as _;

use anyhow::Result;
use ssal_core::data::{invert_scaler, stack_batch};
use ssal_core::evaluate;

use crate::run::Run;
use crate::RunArgs;

const METRICS: &str = "metrics.csv";
const FORECASTS: &str = "forecasts.csv";

pub fn run(args: &RunArgs) -> Result<()> {
    let run = Run::open(&args.run)?;
    let cfg = run.config()?;
    let prep = run.prepared(&cfg)?;
    let ckpt = run.checkpoint()?;
    run.begin("evaluate", &cfg, &[METRICS, FORECASTS])?;

    let te = prep.test_windows()?;
    let e = evaluate(&ckpt.forecaster, &te, &prep.scaler, cfg.data.target_col)?;
    let mut metrics = String::from("space,rse,corr,excluded_features\n");
    for (space, m) in [("scaled", e.scaled), ("unscaled", e.unscaled)] {
        let _ = writeln!(metrics, "{space},{},{},{}", m.rse, m.corr, m.excluded_features);
    }
    run.write(METRICS, &metrics)?;

    let names = &prep.frame.feature_names;
    let (_, truth) = stack_batch(&te)?;
    let truth = invert_scaler(&truth, &prep.scaler)?;
    let preds = invert_scaler(&e.predictions, &prep.scaler)?;
    let mut header = vec!["target_index".to_string()];
    header.extend(names.iter().map(|n| format!("{n}_true")));
    header.extend(names.iter().map(|n| format!("{n}_pred")));
    let mut forecasts = header.join(",");
    forecasts.push('\n');
    for (i, w) in te.iter().enumerate() {
        let mut row = vec![w.target_index().to_string()];
        row.extend(truth.row(i).iter().map(f64::to_string));
        row.extend(preds.row(i).iter().map(f64::to_string));
        let _ = writeln!(forecasts, "{}", row.join(","));
    }
    run.write(FORECASTS, &forecasts)?;

    println!(
        "rse={:.6} corr={:.6} excluded_features={}",
        e.scaled.rse, e.scaled.corr, e.scaled.excluded_features
    );
    Ok(())
}
