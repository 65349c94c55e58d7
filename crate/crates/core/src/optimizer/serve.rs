use serde::{Deserialize, Serialize};

use crate::accuracy::RobustnessProfile;
use crate::costs::{ChannelProfile, CostBreakdown, CostContext, CostWeights, DeviceProfile, Payload, ServerProfile};
use crate::error::{Error, Result};
use crate::nn::{LayerStats, Model};
use crate::optimizer::segment::{quantize_segment, QuantizedSegment};
use crate::optimizer::{pattern_objective, PatternStore, QuantPattern};

/// An inference query: model, tolerated accuracy drop and the requester's conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub model_id: String,
    pub a: f64,
    pub device: DeviceProfile,
    pub channel: ChannelProfile,
    pub weights: CostWeights,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 0.5) {
            return Err(Error::InvalidArgument(format!("accuracy budget {} outside (0, 0.5)", self.a)));
        }
        self.device.validate()?;
        self.channel.validate()?;
        self.weights.validate()
    }

    pub fn context(&self, server: &ServerProfile) -> CostContext {
        CostContext { device: self.device, server: *server, weights: self.weights, rate: self.channel.capacity(self.device.pi) }
    }
}

/// The chosen cell plus the per-`p` sweep it was chosen from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub a_star: f64,
    pub pattern: QuantPattern,
    pub breakdown: CostBreakdown,
    pub payload: Payload,
    pub objective: f64,
    /// Objective per partition point; `None` where the memory budget excludes it.
    pub sweep: Vec<Option<f64>>,
}

/// Picks the tightest stored level not exceeding `req.a`, then the partition
/// point minimising the objective (ties go to the smaller `p`).
pub fn select_pattern(req: &Request, store: &PatternStore, stats: &LayerStats, server: &ServerProfile) -> Result<Selection> {
    req.validate()?;
    if req.model_id != store.model_id {
        return Err(Error::Missing(format!("no patterns for model '{}'", req.model_id)));
    }
    let a_star = store
        .levels
        .iter()
        .cloned()
        .filter(|&l| l <= req.a + 1e-12)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |m| m.max(l))))
        .ok_or_else(|| Error::Infeasible(format!("no stored accuracy level at or below {}", req.a)))?;
    let ctx = req.context(server);
    let mut sweep = Vec::with_capacity(store.num_layers);
    let mut best: Option<(QuantPattern, CostBreakdown, Payload, f64)> = None;
    for p in 1..=store.num_layers {
        let pattern = store.get(a_star, p).ok_or_else(|| Error::Missing(format!("pattern (a={a_star}, p={p}) not stored")))?;
        let (parts, payload, j) = pattern_objective(stats, pattern, &ctx)?;
        if req.device.mem_budget.is_some_and(|m| payload.weights as f64 > m) {
            sweep.push(None);
            continue;
        }
        sweep.push(Some(j));
        if best.as_ref().is_none_or(|b| j < b.3) {
            best = Some((pattern.clone(), parts, payload, j));
        }
    }
    let (pattern, breakdown, payload, objective) =
        best.ok_or_else(|| Error::Infeasible("every partition point exceeds the device memory budget".into()))?;
    Ok(Selection { a_star, pattern, breakdown, payload, objective, sweep })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOutcome {
    pub selection: Selection,
    pub segment: QuantizedSegment,
}

/// Selects a pattern and quantizes the device segment it describes.
pub fn online_serve(
    req: &Request,
    store: &PatternStore,
    model: &Model,
    profile: &RobustnessProfile,
    server: &ServerProfile,
) -> Result<ServeOutcome> {
    let stats = LayerStats::of(model);
    let selection = select_pattern(req, store, &stats, server)?;
    let q = &selection.pattern;
    let segment = quantize_segment(model, profile, q.p, &q.bits, q.bits_act)?;
    Ok(ServeOutcome { selection, segment })
}
