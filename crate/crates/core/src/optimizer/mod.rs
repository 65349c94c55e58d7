//! Joint bit-width and partition planning: closed-form solve, offline pattern
//! tables, online pattern selection and an exhaustive reference search.

mod offline;
mod oracle;
mod segment;
mod serve;
mod solve;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{payload_bits, CostBreakdown, CostContext, Payload};
use crate::error::{Error, Result};
use crate::nn::LayerStats;

pub use offline::{offline_quantize, OfflineOptions};
pub use oracle::{brute_force_oracle, OracleResult, MAX_SEARCH_SPACE};
pub use segment::{quantize_segment, read_segment, segment_accuracy, write_segment, QuantizedSegment};
pub use serve::{online_serve, select_pattern, Request, ServeOutcome, Selection};
pub use solve::{
    anchor_bitwidth, chain_solve, finalize_pattern, ratio_spread, round_and_clamp, ContinuousSolution, Validator,
    MAX_PATTERN_BITS, MIN_PATTERN_BITS,
};

/// Bit-widths for the device segment at one partition point and accuracy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantPattern {
    pub a_level: f64,
    pub p: usize,
    pub bits: Vec<u32>,
    pub bits_act: u32,
    pub psi_total: f64,
    pub continuous_bits: Vec<f64>,
    pub continuous_act: f64,
    pub validated_degradation: f64,
    pub fallback_steps: u32,
}

impl QuantPattern {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: u32| (MIN_PATTERN_BITS..=MAX_PATTERN_BITS).contains(&b);
        if self.p == 0 || self.bits.len() != self.p {
            return Err(Error::InvalidArgument(format!("pattern for p={} has {} widths", self.p, self.bits.len())));
        }
        if !self.bits.iter().all(|&b| ok(b)) || !ok(self.bits_act) {
            return Err(Error::InvalidArgument(format!("pattern for p={} has widths outside [2, 32]", self.p)));
        }
        if !(self.psi_total >= 0.0) {
            return Err(Error::InvalidArgument(format!("pattern for p={} has negative psi", self.p)));
        }
        Ok(())
    }

    pub fn payload(&self, stats: &LayerStats) -> Result<Payload> {
        payload_bits(stats, &self.bits, self.bits_act)
    }
}

/// Prices a pattern under `ctx`. Returns the breakdown, payload and objective.
pub fn pattern_objective(stats: &LayerStats, pattern: &QuantPattern, ctx: &CostContext) -> Result<(CostBreakdown, Payload, f64)> {
    let (o1, o2) = stats.segment_macs(pattern.p)?;
    let payload = pattern.payload(stats)?;
    let parts = ctx.breakdown(o1, o2, payload.total);
    Ok((parts, payload, crate::costs::objective(&parts, &ctx.weights)))
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Precomputed patterns for every (accuracy level, partition point) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStore {
    pub model_id: String,
    pub config_fingerprint: String,
    pub profile_fingerprint: String,
    pub levels: Vec<f64>,
    pub num_layers: usize,
    /// Sorted by `(a_level, p)`.
    pub patterns: Vec<QuantPattern>,
}

fn same_level(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12
}

impl PatternStore {
    pub fn new(model_id: &str, config_fingerprint: String, profile_fingerprint: String, mut levels: Vec<f64>, num_layers: usize) -> Self {
        levels.sort_by(f64::total_cmp);
        Self { model_id: model_id.to_string(), config_fingerprint, profile_fingerprint, levels, num_layers, patterns: Vec::new() }
    }

    pub fn get(&self, a: f64, p: usize) -> Option<&QuantPattern> {
        self.patterns.iter().find(|q| q.p == p && same_level(q.a_level, a))
    }

    pub fn insert(&mut self, pattern: QuantPattern) -> Result<()> {
        pattern.validate()?;
        if pattern.p > self.num_layers || !self.levels.iter().any(|&l| same_level(l, pattern.a_level)) {
            return Err(Error::InvalidArgument(format!(
                "pattern (a={}, p={}) does not fit the store",
                pattern.a_level, pattern.p
            )));
        }
        self.patterns.retain(|q| !(q.p == pattern.p && same_level(q.a_level, pattern.a_level)));
        self.patterns.push(pattern);
        self.patterns.sort_by(|x, y| x.a_level.total_cmp(&y.a_level).then(x.p.cmp(&y.p)));
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.patterns.len() == self.levels.len() * self.num_layers
            && self.levels.iter().all(|&a| (1..=self.num_layers).all(|p| self.get(a, p).is_some()))
    }

    /// Patterns stored for `a`, ordered by `p`.
    pub fn at_level(&self, a: f64) -> Vec<&QuantPattern> {
        self.patterns.iter().filter(|q| same_level(q.a_level, a)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let store: Self = serde_json::from_str(text).map_err(|e| Error::json("patterns.json", e))?;
        for q in &store.patterns {
            q.validate()?;
        }
        Ok(store)
    }
}
