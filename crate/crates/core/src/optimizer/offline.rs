use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::RobustnessProfile;
use crate::costs::CostContext;
use crate::error::{Error, Result};
use crate::nn::{Dataset, LayerStats, Model};
use crate::optimizer::solve::{anchor_bitwidth, chain_solve, finalize_pattern, Validator, MAX_PATTERN_BITS, MIN_PATTERN_BITS};
use crate::optimizer::{fingerprint, PatternStore, QuantPattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineOptions {
    /// Accuracy levels to solve; each must be calibrated in the profile.
    pub levels: Vec<f64>,
    pub context: CostContext,
}

/// Solves one pattern per (accuracy level, partition point).
///
/// Levels are processed from the loosest to the tightest budget, and each cell
/// starts no lower than the pattern one level looser at the same `p`, so widths
/// never shrink as the budget tightens. Cells already present in `existing`
/// (with matching fingerprints) are kept. `checkpoint` runs after every level.
pub fn offline_quantize(
    model: &Model,
    validation: &Dataset,
    profile: &RobustnessProfile,
    opts: &OfflineOptions,
    existing: Option<PatternStore>,
    checkpoint: &mut dyn FnMut(&PatternStore) -> Result<()>,
) -> Result<PatternStore> {
    if profile.model_id != model.id() {
        return Err(Error::InvalidArgument(format!(
            "profile is for model '{}', not '{}'",
            profile.model_id,
            model.id()
        )));
    }
    profile.validate()?;
    let n = model.num_learnable();
    if profile.num_layers() != n {
        return Err(Error::Calibration(format!("profile has {} layers, model has {n}", profile.num_layers())));
    }
    for &a in &opts.levels {
        profile.level_index(a)?;
    }
    let stats = LayerStats::of(model);
    let coeffs = opts.context.coefficients()?;
    let config_fp = fingerprint(&(model.id(), opts));
    let profile_fp = fingerprint(profile);

    let mut store = match existing {
        Some(s) if s.model_id == model.id() && s.config_fingerprint == config_fp && s.profile_fingerprint == profile_fp => s,
        _ => PatternStore::new(model.id(), config_fp, profile_fp, opts.levels.clone(), n),
    };
    let validator = Validator::new(model, validation, profile)?;

    let mut levels = store.levels.clone();
    levels.reverse();
    let mut looser: Option<f64> = None;
    for a in levels {
        let missing: Vec<usize> = (1..=n).filter(|&p| store.get(a, p).is_none()).collect();
        let solved: Vec<QuantPattern> = missing
            .par_iter()
            .map(|&p| {
                let floor = looser.and_then(|l| store.get(l, p));
                solve_cell(p, a, &stats, &coeffs, profile, &validator, floor)
                    .map_err(|e| match e {
                        Error::Infeasible(m) => Error::Infeasible(format!("a={a}, {m}")),
                        other => other,
                    })
            })
            .collect::<Result<_>>()?;
        if !solved.is_empty() {
            for q in solved {
                store.insert(q)?;
            }
            checkpoint(&store)?;
        }
        looser = Some(a);
    }
    Ok(store)
}

fn solve_cell(
    p: usize,
    a: f64,
    stats: &LayerStats,
    coeffs: &crate::costs::Coefficients,
    profile: &RobustnessProfile,
    validator: &Validator<'_>,
    floor: Option<&QuantPattern>,
) -> Result<QuantPattern> {
    // The unclamped anchor can lie far outside the representable range; clamp it
    // before back-substitution so the remaining widths keep their relative offsets.
    let anchor = anchor_bitwidth(p, stats, coeffs)?.clamp(MIN_PATTERN_BITS as f64, MAX_PATTERN_BITS as f64);
    let sol = chain_solve(p, anchor, stats, profile, a)?;
    finalize_pattern(&sol, a, validator, floor)
}
