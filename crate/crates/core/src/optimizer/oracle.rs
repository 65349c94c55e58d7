use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::accuracy::{degradation_terms, RobustnessProfile};
use crate::costs::{payload_bits, CostContext};
use crate::error::{Error, Result};
use crate::nn::LayerStats;

/// Largest number of patterns the exhaustive search will evaluate.
pub const MAX_SEARCH_SPACE: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub p: usize,
    pub bits: Vec<u32>,
    pub bits_act: u32,
    pub psi_total: f64,
    pub objective: f64,
    /// Patterns enumerated, feasible or not.
    pub evaluated: u64,
}

/// Enumerates every integer pattern with `p` in `p_range` and each width in
/// `b_range`, returning the lowest-objective one whose total degradation
/// measure stays within `budget`. Ties keep the first pattern in enumeration order.
pub fn brute_force_oracle(
    stats: &LayerStats,
    profile: &RobustnessProfile,
    a: f64,
    budget: f64,
    p_range: RangeInclusive<usize>,
    b_range: RangeInclusive<u32>,
    ctx: &CostContext,
) -> Result<Option<OracleResult>> {
    let (p_lo, p_hi) = (*p_range.start(), *p_range.end());
    let (b_lo, b_hi) = (*b_range.start(), *b_range.end());
    if p_lo == 0 || p_hi > stats.num_layers() || p_lo > p_hi || b_lo == 0 || b_lo > b_hi || b_hi > 32 {
        return Err(Error::InvalidArgument(format!("empty or invalid search range p={p_lo}..={p_hi}, b={b_lo}..={b_hi}")));
    }
    let width = (b_hi - b_lo + 1) as u128;
    let space: u128 = (p_lo..=p_hi).map(|p| width.saturating_pow(p as u32 + 1)).fold(0u128, |s, x| s.saturating_add(x));
    if space > MAX_SEARCH_SPACE {
        return Err(Error::InvalidArgument(format!("search space of {space} patterns exceeds {MAX_SEARCH_SPACE}")));
    }

    let tol = budget.abs() * 1e-12;
    let mut best: Option<OracleResult> = None;
    let mut evaluated = 0u64;
    for p in p_lo..=p_hi {
        let (o1, o2) = stats.segment_macs(p)?;
        let mut widths = vec![b_lo; p + 1];
        loop {
            evaluated += 1;
            let bits_f: Vec<f64> = widths[..p].iter().map(|&b| b as f64).collect();
            let psi = degradation_terms(profile, a, &bits_f, widths[p] as f64)?.total;
            if psi <= budget + tol {
                let z = payload_bits(stats, &widths[..p], widths[p])?.total;
                let j = ctx.objective(o1, o2, z);
                if best.as_ref().is_none_or(|b| j < b.objective) {
                    best = Some(OracleResult {
                        p,
                        bits: widths[..p].to_vec(),
                        bits_act: widths[p],
                        psi_total: psi,
                        objective: j,
                        evaluated: 0,
                    });
                }
            }
            // Odometer increment over all p + 1 widths.
            let mut i = 0;
            while i <= p && widths[i] == b_hi {
                widths[i] = b_lo;
                i += 1;
            }
            if i > p {
                break;
            }
            widths[i] += 1;
        }
    }
    Ok(best.map(|mut b| {
        b.evaluated = evaluated;
        b
    }))
}
