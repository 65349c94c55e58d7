use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::RobustnessProfile;
use crate::error::{Error, Result};
use crate::nn::{Dataset, Model, Tensor};
use crate::quant::{quantize_tensor, unpack_codes, QuantizedTensor, QuantizerConfig};

/// The device-side model segment: quantized weights of layers `1..=p` and the
/// grid used for the activation it sends back.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSegment {
    pub model_id: String,
    pub p: usize,
    pub weights: Vec<QuantizedTensor>,
    pub activation: QuantizerConfig,
}

impl QuantizedSegment {
    pub fn payload_bits(&self, activation_elements: u64) -> u64 {
        self.weights.iter().map(|w| w.payload_bits()).sum::<u64>() + self.activation.bits as u64 * activation_elements
    }

    /// Runs the segment on `x` and returns the quantized activation to transmit.
    pub fn run(&self, model: &Model, x: &Tensor) -> Result<Tensor> {
        let deq: Vec<Tensor> = self.weights.iter().map(|w| w.dequantize()).collect();
        let overrides: Vec<(usize, &[f64])> = deq.iter().enumerate().map(|(i, t)| (i + 1, t.data())).collect();
        let act = model.run_span(x, 1, self.p, &overrides)?;
        Ok(Tensor::from_parts(act.shape().to_vec(), self.activation.fake_quantize(act.data())))
    }
}

pub fn quantize_segment(
    model: &Model,
    profile: &RobustnessProfile,
    p: usize,
    bits: &[u32],
    bits_act: u32,
) -> Result<QuantizedSegment> {
    if bits.len() != p || p == 0 || p > model.num_learnable() {
        return Err(Error::InvalidArgument(format!("segment needs {p} widths within 1..={}", model.num_learnable())));
    }
    let weights = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| quantize_tensor(model.weights(i + 1)?, b))
        .collect::<Result<_>>()?;
    let (mu, phi) = profile.layer(p)?.act_range;
    Ok(QuantizedSegment {
        model_id: model.id().to_string(),
        p,
        weights,
        activation: QuantizerConfig::new(bits_act, mu, phi)?,
    })
}

/// Top-1 accuracy of the quantized segment followed by the full-precision tail.
pub fn segment_accuracy(
    model: &Model,
    data: &Dataset,
    profile: &RobustnessProfile,
    p: usize,
    bits: &[u32],
    bits_act: u32,
) -> Result<f64> {
    let seg = quantize_segment(model, profile, p, bits, bits_act)?;
    let deq: Vec<Tensor> = seg.weights.iter().map(|w| w.dequantize()).collect();
    let overrides: Vec<(usize, &[f64])> = deq.iter().enumerate().map(|(i, t)| (i + 1, t.data())).collect();
    let hits: Vec<bool> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let act = model.run_span(&data.sample(i), 1, p, &overrides)?;
            let q = Tensor::from_parts(act.shape().to_vec(), seg.activation.fake_quantize(act.data()));
            Ok(model.forward_from(&q, p)?.argmax() == data.label(i))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    shape: Vec<usize>,
    bits: u32,
    mu: f64,
    phi: f64,
    codes: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentManifest {
    model_id: String,
    p: usize,
    weights: Vec<TensorEntry>,
    activation: QuantizerConfig,
}

/// Writes `segment.json` plus one big-endian bit-packed `.qbin` code file per layer.
pub fn write_segment(seg: &QuantizedSegment, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(seg.weights.len());
    for (i, w) in seg.weights.iter().enumerate() {
        let name = format!("layer{}.qbin", i + 1);
        let path = dir.join(&name);
        fs::write(&path, w.packed_codes()).map_err(|e| Error::io(&path, e))?;
        entries.push(TensorEntry {
            layer: i + 1,
            shape: w.shape.clone(),
            bits: w.config.bits,
            mu: w.config.mu,
            phi: w.config.phi,
            codes: name,
        });
    }
    let manifest = SegmentManifest { model_id: seg.model_id.clone(), p: seg.p, weights: entries, activation: seg.activation };
    let path = dir.join("segment.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_segment(dir: impl AsRef<Path>) -> Result<QuantizedSegment> {
    let dir = dir.as_ref();
    let path = dir.join("segment.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SegmentManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let mut weights = Vec::with_capacity(manifest.weights.len());
    for entry in manifest.weights {
        let path = dir.join(&entry.codes);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let count = entry.shape.iter().product();
        weights.push(QuantizedTensor {
            codes: unpack_codes(&bytes, entry.bits, count)?,
            config: QuantizerConfig::new(entry.bits, entry.mu, entry.phi)?,
            shape: entry.shape,
        });
    }
    Ok(QuantizedSegment { model_id: manifest.model_id, p: manifest.p, weights, activation: manifest.activation })
}
