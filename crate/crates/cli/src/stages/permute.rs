use std::fmt::Write as _;

use anyhow::Result;
use ssal_core::permutation::{mean_mask, permutation_objective, solve, Aggregate, DistanceMatrix};

use crate::run::{invalid, Run};
use crate::PermuteArgs;

const ORDER: &str = "permutation.csv";
const OBJECTIVE: &str = "permutation_objective.txt";

pub fn run(args: &PermuteArgs) -> Result<()> {
    let run = Run::open(&args.run)?;
    let mut cfg = run.config()?;
    if let Some(seed) = args.seed {
        cfg.permute.seed = seed;
    }
    cfg.permute.validate()?;
    let prep = run.prepared(&cfg)?;
    let maps = run.saliency()?;
    run.begin("permute", &cfg, &[ORDER, OBJECTIVE])?;

    let mask = match cfg.permute.aggregate {
        Aggregate::Mean => {
            let masks: Vec<_> = maps.iter().map(|m| m.mask.clone()).collect();
            mean_mask(&masks)?
        }
        Aggregate::Sample(id) => maps
            .iter()
            .find(|m| m.sample_id == id)
            .map(|m| m.mask.clone())
            .ok_or_else(|| invalid(format!("permute.aggregate names sample {id}, which was not interpreted")))?,
    };
    let names = &prep.frame.feature_names;
    if mask.dims2().1 != names.len() {
        return Err(invalid("saliency masks do not match the prepared series"));
    }
    let dist = DistanceMatrix::from_mask(&mask)?;
    let best = solve(&dist, &cfg.permute)?;
    let identity: Vec<usize> = (0..dist.len()).collect();
    let before = permutation_objective(&identity, &dist, cfg.permute.cycle)?;

    let mut order = String::from("rank,feature_index,feature_name\n");
    for (rank, &f) in best.permutation.iter().enumerate() {
        let _ = writeln!(order, "{rank},{f},{}", names[f]);
    }
    run.write(ORDER, &order)?;
    run.write(
        OBJECTIVE,
        &format!(
            "objective = {}\nidentity_objective = {before}\ncycle = {}\naggregate = {}\n",
            best.objective, cfg.permute.cycle, cfg.permute.aggregate
        ),
    )?;
    let ordered: Vec<&str> = best.permutation.iter().map(|&f| names[f].as_str()).collect();
    println!("objective={:.6} order={}", best.objective, ordered.join(","));
    Ok(())
}
