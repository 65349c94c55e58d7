use serde::{Deserialize, Serialize};

use crate::accuracy::{degradation_terms, RobustnessProfile, LN4};
use crate::costs::Coefficients;
use crate::error::{Error, Result};
use crate::nn::{Dataset, LayerStats, Model};
use crate::optimizer::segment::segment_accuracy;
use crate::optimizer::QuantPattern;

pub const MIN_PATTERN_BITS: u32 = 2;
pub const MAX_PATTERN_BITS: u32 = 32;

/// Closed-form width of the activation sent at partition `p`:
/// `((xi - delta) o(p) - z / ln4) / (epsilon z)` with `z = z_x(p)`. Not clamped.
pub fn anchor_bitwidth(p: usize, stats: &LayerStats, coeffs: &Coefficients) -> Result<f64> {
    if p == 0 || p > stats.num_layers() {
        return Err(Error::OutOfRange { index: p, max: stats.num_layers() });
    }
    let z = stats.z_x(p) as f64;
    if !(coeffs.epsilon > 0.0) || z <= 0.0 {
        return Err(Error::InvalidArgument("anchor needs epsilon > 0 and a non-empty activation".into()));
    }
    let o = stats.o(p) as f64;
    Ok(((coeffs.xi - coeffs.delta) * o - z / LN4) / (coeffs.epsilon * z))
}

/// Real-valued widths before rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSolution {
    pub p: usize,
    /// Weights of layers `1..=p`.
    pub bits: Vec<f64>,
    /// Activation leaving layer `p`.
    pub bits_act: f64,
}

/// One quantized item's `(z, rho, s)`.
#[derive(Debug, Clone, Copy)]
struct Item {
    z: f64,
    rho: f64,
    s: f64,
}

impl Item {
    fn log_ratio(&self, bits: f64) -> f64 {
        (self.z * self.rho / self.s).ln() + LN4 * bits
    }
}

fn items(p: usize, stats: &LayerStats, profile: &RobustnessProfile, a: f64) -> Result<(Vec<Item>, Item)> {
    if p == 0 || p > stats.num_layers() {
        return Err(Error::OutOfRange { index: p, max: stats.num_layers() });
    }
    let k = profile.level_index(a)?;
    let mut weights = Vec::with_capacity(p);
    for l in 1..=p {
        let lp = profile.layer(l)?;
        weights.push(Item { z: stats.z_w(l) as f64, rho: lp.rho[k], s: lp.s_w });
    }
    let lp = profile.layer(p)?;
    let act = Item { z: stats.z_x(p) as f64, rho: lp.rho[k], s: lp.s_x };
    for it in weights.iter().chain(std::iter::once(&act)) {
        if !(it.s > 0.0 && it.rho > 0.0 && it.z > 0.0) {
            return Err(Error::InvalidArgument("chain solve needs positive s, rho and sizes".into()));
        }
    }
    Ok((weights, act))
}

/// Back-substitutes the equal-ratio condition `z rho e^(ln4 b) / s = const`
/// from the activation anchor through layers `p, p-1, ..., 1`.
pub fn chain_solve(p: usize, anchor: f64, stats: &LayerStats, profile: &RobustnessProfile, a: f64) -> Result<ContinuousSolution> {
    let (weights, act) = items(p, stats, profile, a)?;
    let mut bits = vec![0.0; p];
    let mut next = act;
    let mut b_next = anchor;
    for l in (1..=p).rev() {
        let cur = weights[l - 1];
        let b = b_next + ((next.z * next.rho * cur.s) / (cur.z * cur.rho * next.s)).ln() / LN4;
        bits[l - 1] = b;
        next = cur;
        b_next = b;
    }
    Ok(ContinuousSolution { p, bits, bits_act: anchor })
}

/// Relative spread `max/min - 1` of the equal-ratio terms, computed in log space.
pub fn ratio_spread(sol: &ContinuousSolution, stats: &LayerStats, profile: &RobustnessProfile, a: f64) -> Result<f64> {
    let (weights, act) = items(sol.p, stats, profile, a)?;
    let logs: Vec<f64> = weights
        .iter()
        .zip(&sol.bits)
        .map(|(it, &b)| it.log_ratio(b))
        .chain(std::iter::once(act.log_ratio(sol.bits_act)))
        .collect();
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((hi - lo).exp_m1())
}

/// Round half up, then clamp to `[2, 32]`.
pub fn round_and_clamp(bits: &[f64]) -> Vec<u32> {
    bits.iter().map(|&b| round_one(b)).collect()
}

fn round_one(b: f64) -> u32 {
    (b + 0.5).floor().clamp(MIN_PATTERN_BITS as f64, MAX_PATTERN_BITS as f64) as u32
}

/// Held-out split used to confirm a pattern meets its accuracy budget.
pub struct Validator<'a> {
    pub model: &'a Model,
    pub data: &'a Dataset,
    pub profile: &'a RobustnessProfile,
    pub clean_accuracy: f64,
}

impl<'a> Validator<'a> {
    pub fn new(model: &'a Model, data: &'a Dataset, profile: &'a RobustnessProfile) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("validation split is empty".into()));
        }
        let clean_accuracy = crate::accuracy::accuracy(model, data)?;
        Ok(Self { model, data, profile, clean_accuracy })
    }

    /// Measured accuracy drop of the quantized segment composed with the full-precision tail.
    pub fn degradation(&self, p: usize, bits: &[u32], bits_act: u32) -> Result<f64> {
        let acc = segment_accuracy(self.model, self.data, self.profile, p, bits, bits_act)?;
        Ok(self.clean_accuracy - acc)
    }
}

/// Rounds a continuous solution, then raises widths until the held-out
/// degradation is within `a`.
///
/// Each fallback step shifts the whole continuous vector up by one bit before
/// rounding, so unclamped widths all rise together; `floor` gives optional
/// elementwise lower bounds.
pub fn finalize_pattern(
    sol: &ContinuousSolution,
    a: f64,
    validator: &Validator<'_>,
    floor: Option<&QuantPattern>,
) -> Result<QuantPattern> {
    let p = sol.p;
    let mut all: Vec<f64> = sol.bits.clone();
    all.push(sol.bits_act);
    if let Some(f) = floor {
        if f.p != p {
            return Err(Error::InvalidArgument(format!("floor pattern is for p={}, not {p}", f.p)));
        }
    }
    let floor_bits: Vec<u32> = match floor {
        Some(f) => f.bits.iter().cloned().chain(std::iter::once(f.bits_act)).collect(),
        None => vec![MIN_PATTERN_BITS; p + 1],
    };
    let widths = |shift: f64| -> Vec<u32> {
        all.iter().zip(&floor_bits).map(|(&c, &lo)| round_one(c + shift).max(lo)).collect()
    };

    let mut shift = 0.0;
    let mut current = widths(shift);
    let mut steps = 0;
    loop {
        let deg = validator.degradation(p, &current[..p], current[p])?;
        if deg <= a {
            let bits: Vec<f64> = current[..p].iter().map(|&b| b as f64).collect();
            let est = degradation_terms(validator.profile, a, &bits, current[p] as f64)?;
            return Ok(QuantPattern {
                a_level: a,
                p,
                bits: current[..p].to_vec(),
                bits_act: current[p],
                psi_total: est.total,
                continuous_bits: sol.bits.clone(),
                continuous_act: sol.bits_act,
                validated_degradation: deg,
                fallback_steps: steps,
            });
        }
        if current.iter().all(|&b| b >= MAX_PATTERN_BITS) {
            return Err(Error::Infeasible(format!(
                "p={p}: degradation {deg:.4} exceeds budget {a} even at {MAX_PATTERN_BITS} bits"
            )));
        }
        shift += 1.0;
        let mut next = widths(shift);
        if next == current {
            // Everything below the cap sits on the floor; jump to the next width change.
            let top = all
                .iter()
                .zip(&current)
                .filter(|(_, &b)| b < MAX_PATTERN_BITS)
                .map(|(&c, _)| c)
                .fold(f64::NEG_INFINITY, f64::max);
            shift = shift.max((MIN_PATTERN_BITS as f64 + 0.5) - top);
            next = widths(shift);
            while next == current {
                shift += 1.0;
                next = widths(shift);
            }
        }
        current = next;
        steps += 1;
    }
}
