pub mod analyze;
pub mod evaluate;
pub mod export;
pub mod interpret;
pub mod permute;
pub mod prepare;
pub mod train;

use ssal_core::Config;

use crate::Overrides;

/// Applies `--seed` and `--target-col`; returns whether anything changed.
pub(crate) fn apply_overrides(cfg: &mut Config, ov: &Overrides) -> bool {
    let mut changed = false;
    if let Some(seed) = ov.seed {
        cfg.set_seed(seed);
        changed = true;
    }
    if let Some(col) = ov.target_col {
        cfg.data.target_col = Some(col);
        changed = true;
    }
    if ov.timestamp_col {
        cfg.data.load.timestamp_col = true;
        changed = true;
    }
    changed
}
