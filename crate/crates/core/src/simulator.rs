//! Sweeps partition points under a strategy and reports analytic time, energy,
//! cost and payload together with measured accuracy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::{accuracy, RobustnessProfile};
use crate::costs::{objective, CostContext};
use crate::error::{Error, Result};
use crate::nn::{Dataset, Layer, LayerStats, Model, Tensor};
use crate::optimizer::{segment_accuracy, PatternStore};

/// Width used for unquantized payloads.
pub const FULL_PRECISION_BITS: u64 = 32;

pub const CSV_HEADER: &str = "strategy,p,O1,O2,Zw,Zx,Z,T_local,T_server,T_tran,E_local,E_tran,C,J,accuracy,degradation";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Optimized,
    NoOptimization,
    /// Neuron pruning on the device segment. `None` picks the keep fraction per
    /// partition point so the degradation matches the optimized strategy.
    MagnitudePruning { keep_fraction: Option<f64> },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Optimized => "optimized",
            Strategy::NoOptimization => "no_optimization",
            Strategy::MagnitudePruning { .. } => "magnitude_pruning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model_id: String,
    pub context: CostContext,
    pub a_level: f64,
    /// Inclusive sweep; `p = 0` is the all-on-server row.
    pub p_min: usize,
    pub p_max: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub strategy: String,
    pub p: usize,
    pub o1: u64,
    pub o2: u64,
    pub zw: u64,
    pub zx: u64,
    pub z: u64,
    pub t_local: f64,
    pub t_server: f64,
    pub t_tran: f64,
    pub e_local: f64,
    pub e_tran: f64,
    pub c: f64,
    pub j: f64,
    pub accuracy: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
}

impl SimReport {
    /// Concatenates reports and sorts rows by `(strategy, p)`.
    pub fn combine(reports: impl IntoIterator<Item = SimReport>) -> SimReport {
        let mut rows: Vec<SimRow> = reports.into_iter().flat_map(|r| r.rows).collect();
        rows.sort_by(|x, y| x.strategy.cmp(&y.strategy).then(x.p.cmp(&y.p)));
        SimReport { rows }
    }

    pub fn strategy(&self, name: &str) -> Vec<&SimRow> {
        self.rows.iter().filter(|r| r.strategy == name).collect()
    }

    pub fn row(&self, name: &str, p: usize) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.strategy == name && r.p == p)
    }
}

/// Inputs shared by every row of a scenario.
pub struct SimInputs<'a> {
    pub model: &'a Model,
    /// Split on which accuracy is measured.
    pub data: &'a Dataset,
    pub profile: &'a RobustnessProfile,
    pub store: Option<&'a PatternStore>,
}

struct Row {
    o1: u64,
    o2: u64,
    zw: u64,
    zx: u64,
    accuracy: f64,
}

fn finish(s: &Scenario, strategy: Strategy, p: usize, clean: f64, r: Row) -> SimRow {
    let z = r.zw + r.zx;
    let parts = s.context.breakdown(r.o1, r.o2, z);
    SimRow {
        strategy: strategy.name().to_string(),
        p,
        o1: r.o1,
        o2: r.o2,
        zw: r.zw,
        zx: r.zx,
        z,
        t_local: parts.t_local,
        t_server: parts.t_server,
        t_tran: parts.t_tran,
        e_local: parts.e_local,
        e_tran: parts.e_tran,
        c: parts.cost,
        j: objective(&parts, &s.context.weights),
        accuracy: r.accuracy,
        degradation: clean - r.accuracy,
    }
}

/// Runs one strategy over the scenario's partition sweep.
///
/// Automatic pruning needs the optimized degradation per `p`; pass the
/// optimized report as `reference`.
pub fn run_scenario(s: &Scenario, strategy: Strategy, inputs: &SimInputs<'_>, reference: Option<&SimReport>) -> Result<SimReport> {
    let model = inputs.model;
    if s.model_id != model.id() {
        return Err(Error::InvalidArgument(format!("scenario is for model '{}', not '{}'", s.model_id, model.id())));
    }
    let n = model.num_learnable();
    if s.p_min > s.p_max || s.p_max > n {
        return Err(Error::InvalidArgument(format!("partition sweep {}..={} outside 0..={n}", s.p_min, s.p_max)));
    }
    s.context.device.validate()?;
    s.context.server.validate()?;
    s.context.weights.validate()?;
    let stats = LayerStats::of(model);
    let clean = accuracy(model, inputs.data)?;

    let mut rows = Vec::with_capacity(s.p_max - s.p_min + 1);
    for p in s.p_min..=s.p_max {
        let (o1, o2) = if p == 0 { (0, stats.total_macs()) } else { stats.segment_macs(p)? };
        if p == 0 {
            let zx = stats.input_size() * FULL_PRECISION_BITS;
            rows.push(finish(s, strategy, p, clean, Row { o1, o2, zw: 0, zx, accuracy: clean }));
            continue;
        }
        let full_zw: u64 = (1..=p).map(|l| stats.z_w(l)).sum::<u64>() * FULL_PRECISION_BITS;
        let full_zx = stats.z_x(p) * FULL_PRECISION_BITS;
        let row = match strategy {
            Strategy::NoOptimization => Row { o1, o2, zw: full_zw, zx: full_zx, accuracy: clean },
            Strategy::Optimized => {
                let store = inputs.store.ok_or_else(|| Error::Missing("optimized strategy needs a pattern store".into()))?;
                let q = store
                    .get(s.a_level, p)
                    .ok_or_else(|| Error::Missing(format!("pattern (a={}, p={p}) not stored", s.a_level)))?;
                let payload = q.payload(&stats)?;
                let acc = segment_accuracy(model, inputs.data, inputs.profile, p, &q.bits, q.bits_act)?;
                Row { o1, o2, zw: payload.weights, zx: payload.activation, accuracy: acc }
            }
            Strategy::MagnitudePruning { keep_fraction } => {
                let keep = match keep_fraction {
                    Some(k) if k > 0.0 && k <= 1.0 => k,
                    Some(k) => return Err(Error::InvalidArgument(format!("keep fraction {k} outside (0, 1]"))),
                    None => {
                        let target = reference
                            .and_then(|r| r.row(Strategy::Optimized.name(), p))
                            .ok_or_else(|| Error::Missing(format!("no optimized row at p={p} to match pruning against")))?
                            .degradation;
                        match_keep_fraction(model, inputs.data, p, clean, target)?
                    }
                };
                let pruned = Pruned::new(model, p, keep)?;
                let acc = accuracy(&pruned.model, inputs.data)?;
                let (o1, o2, zw, zx) = pruned.counts(&stats, p);
                Row { o1, o2, zw: zw * FULL_PRECISION_BITS, zx: zx * FULL_PRECISION_BITS, accuracy: acc }
            }
        };
        rows.push(finish(s, strategy, p, clean, row));
    }
    Ok(SimReport { rows })
}

/// Smallest keep fraction (to 1e-3) whose degradation does not exceed `target + 0.005`.
fn match_keep_fraction(model: &Model, data: &Dataset, p: usize, clean: f64, target: f64) -> Result<f64> {
    let limit = target + 0.005;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        let pruned = Pruned::new(model, p, mid)?;
        if clean - accuracy(&pruned.model, data)? <= limit {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Clears one output unit's weights in place.
type Zeroer = Box<dyn Fn(&mut [f64], usize)>;

/// A model with the weakest output neurons of layers `1..=p` removed.
///
/// The final layer's outputs are class scores and are never pruned.
struct Pruned {
    model: Model,
    /// Alive output units per learnable layer (all layers, not only the segment).
    alive: Vec<usize>,
    units: Vec<usize>,
}

fn output_units(layer: &Layer) -> usize {
    match layer {
        Layer::Dense(d) => d.out_features,
        Layer::Conv2d(c) => c.out_channels,
        _ => 0,
    }
}

impl Pruned {
    fn new(model: &Model, p: usize, keep: f64) -> Result<Self> {
        let n = model.num_learnable();
        let mut out = model.clone();
        let mut alive = Vec::with_capacity(n);
        let mut units = Vec::with_capacity(n);
        for l in 1..=n {
            let layer = model.learnable(l)?;
            let g = output_units(layer);
            units.push(g);
            if l > p || l == n {
                alive.push(g);
                continue;
            }
            let w = model.weights(l)?;
            let (norms, zero): (Vec<f64>, Zeroer) = match layer {
                Layer::Dense(d) => {
                    let (rows, cols) = (d.in_features, d.out_features);
                    let norms = (0..cols).map(|j| (0..rows).map(|i| w.data()[i * cols + j].powi(2)).sum()).collect();
                    (norms, Box::new(move |data: &mut [f64], j| (0..rows).for_each(|i| data[i * cols + j] = 0.0)))
                }
                Layer::Conv2d(c) => {
                    let per = c.in_channels * c.kernel.0 * c.kernel.1;
                    let norms = (0..c.out_channels).map(|k| w.data()[k * per..(k + 1) * per].iter().map(|v| v * v).sum()).collect();
                    (norms, Box::new(move |data: &mut [f64], k| data[k * per..(k + 1) * per].fill(0.0)))
                }
                _ => unreachable!("learnable layers are dense or conv"),
            };
            let kept = ((keep * g as f64).ceil() as usize).clamp(1, g);
            let mut order: Vec<usize> = (0..g).collect();
            // Weakest first; index breaks ties so the choice is deterministic.
            order.sort_by(|&x, &y| norms[x].total_cmp(&norms[y]).then(x.cmp(&y)));
            let mut data = w.data().to_vec();
            for &j in &order[..g - kept] {
                zero(&mut data, j);
            }
            out = out.with_weights(l, Tensor::new(w.shape().to_vec(), data)?)?;
            alive.push(kept);
        }
        Ok(Self { model: out, alive, units })
    }

    /// `(O1, O2, weight elements, activation elements)` counting live connections only.
    fn counts(&self, stats: &LayerStats, p: usize) -> (u64, u64, u64, u64) {
        let n = self.units.len();
        let scale = |l: usize, total: u64| -> u64 {
            // Input units of layer l are the outputs of layer l - 1.
            let (ai, ui) = if l == 1 { (1, 1) } else { (self.alive[l - 2] as u64, self.units[l - 2] as u64) };
            let (ao, uo) = (self.alive[l - 1] as u64, self.units[l - 1] as u64);
            total * ai * ao / (ui * uo)
        };
        let o1 = (1..=p).map(|l| scale(l, stats.o(l))).sum();
        let o2 = (p + 1..=n).map(|l| scale(l, stats.o(l))).sum();
        let zw = (1..=p).map(|l| scale(l, stats.z_w(l))).sum();
        let zx = stats.z_x(p) * self.alive[p - 1] as u64 / self.units[p - 1] as u64;
        (o1, o2, zw, zx)
    }
}

/// Per-`p` comparison of a candidate strategy against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub p: usize,
    pub payload_reduction: f64,
    pub j_ratio: f64,
    pub accuracy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub mean_payload_reduction: f64,
    pub mean_j_ratio: f64,
    pub mean_accuracy_gap: f64,
}

/// Compares `candidate` rows against `baseline` rows of `report` at matching `p`.
/// Rows with an empty baseline payload count as zero reduction.
pub fn compare_strategies(report: &SimReport, candidate: &str, baseline: &str) -> Result<Comparison> {
    let cand = report.strategy(candidate);
    let base = report.strategy(baseline);
    let cp: Vec<usize> = cand.iter().map(|r| r.p).collect();
    let bp: Vec<usize> = base.iter().map(|r| r.p).collect();
    if cp != bp || cp.is_empty() {
        return Err(Error::InvalidArgument(format!("strategies '{candidate}' and '{baseline}' cover different partition points")));
    }
    let rows: Vec<ComparisonRow> = cand
        .iter()
        .zip(&base)
        .map(|(c, b)| ComparisonRow {
            p: c.p,
            payload_reduction: if b.z == 0 { 0.0 } else { 1.0 - c.z as f64 / b.z as f64 },
            j_ratio: if b.j == 0.0 { 1.0 } else { c.j / b.j },
            accuracy_gap: b.accuracy - c.accuracy,
        })
        .collect();
    let mean = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(Comparison {
        candidate: candidate.to_string(),
        baseline: baseline.to_string(),
        mean_payload_reduction: mean(|r| r.payload_reduction),
        mean_j_ratio: mean(|r| r.j_ratio),
        mean_accuracy_gap: mean(|r| r.accuracy_gap),
        rows,
    })
}

/// Nine significant digits.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

fn write_records(path: &Path, header: &[&str], records: Vec<Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for r in records {
        w.write_record(&r).map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the report with rows sorted by `(strategy, p)`.
pub fn emit_csv(report: &SimReport, path: impl AsRef<Path>) -> Result<()> {
    let mut rows: Vec<&SimRow> = report.rows.iter().collect();
    rows.sort_by(|x, y| x.strategy.cmp(&y.strategy).then(x.p.cmp(&y.p)));
    let records = rows
        .into_iter()
        .map(|r| {
            let mut v = vec![r.strategy.clone()];
            v.extend([r.p as u64, r.o1, r.o2, r.zw, r.zx, r.z].iter().map(u64::to_string));
            v.extend([r.t_local, r.t_server, r.t_tran, r.e_local, r.e_tran, r.c, r.j, r.accuracy, r.degradation].into_iter().map(num));
            v
        })
        .collect();
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    write_records(path.as_ref(), &header, records)
}

pub fn emit_comparison_csv(comparisons: &[Comparison], path: impl AsRef<Path>) -> Result<()> {
    let mut records = Vec::new();
    for c in comparisons {
        for r in &c.rows {
            records.push(vec![
                c.candidate.clone(),
                c.baseline.clone(),
                r.p.to_string(),
                num(r.payload_reduction),
                num(r.j_ratio),
                num(r.accuracy_gap),
            ]);
        }
        records.push(vec![
            c.candidate.clone(),
            c.baseline.clone(),
            "mean".into(),
            num(c.mean_payload_reduction),
            num(c.mean_j_ratio),
            num(c.mean_accuracy_gap),
        ]);
    }
    write_records(path.as_ref(), &["candidate", "baseline", "p", "payload_reduction", "J_ratio", "accuracy_gap"], records)
}
