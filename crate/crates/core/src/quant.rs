//! Uniform asymmetric post-training quantizer.
//!
//! A `b`-bit grid holds `2^b` points evenly spaced over `[mu, phi]` and shifted
//! by the zero point. Values map to the nearest grid point, ties going to the
//! smaller value; values outside the range clamp to an endpoint.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, Model, Tensor};

pub const MIN_BITS: u32 = 1;
pub const MAX_BITS: u32 = 32;

/// Side information stored with each quantized tensor: `b` (32 bits) plus `mu` and `phi` as float32.
pub const SIDE_INFO_BITS: u64 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits: u32,
    pub mu: f64,
    pub phi: f64,
    #[serde(default)]
    pub zero_point: f64,
}

impl QuantizerConfig {
    pub fn new(bits: u32, mu: f64, phi: f64) -> Result<Self> {
        Self::with_zero_point(bits, mu, phi, 0.0)
    }

    pub fn with_zero_point(bits: u32, mu: f64, phi: f64, zero_point: f64) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidArgument(format!("bit-width {bits} outside [{MIN_BITS}, {MAX_BITS}]")));
        }
        if !(mu.is_finite() && phi.is_finite() && zero_point.is_finite()) || phi <= mu {
            return Err(Error::InvalidArgument(format!("invalid grid range [{mu}, {phi}]")));
        }
        Ok(Self { bits, mu, phi, zero_point })
    }

    /// Largest code, `2^b - 1`.
    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Spacing between adjacent grid points.
    pub fn step(&self) -> f64 {
        (self.phi - self.mu) / self.max_code() as f64
    }

    pub fn grid_value(&self, code: u32) -> f64 {
        self.mu + code as f64 * self.step() + self.zero_point
    }

    /// Code of the grid point nearest to `c`.
    pub fn code(&self, c: f64) -> Result<u32> {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("cannot quantize {c}")));
        }
        Ok(self.code_unchecked(c))
    }

    fn code_unchecked(&self, c: f64) -> u32 {
        let max = self.max_code() as u64;
        let t = ((c - self.zero_point - self.mu) / self.step()).clamp(0.0, max as f64);
        let k0 = t.floor() as u64;
        // The rounded position can be off by one near midpoints; settle it on actual distances.
        let mut best = k0.saturating_sub(1);
        let mut best_dist = (c - self.grid_value(best as u32)).abs();
        for k in best + 1..=(k0 + 2).min(max) {
            let d = (c - self.grid_value(k as u32)).abs();
            if d < best_dist {
                best = k;
                best_dist = d;
            }
        }
        best as u32
    }

    /// Nearest grid value to `c`.
    pub fn quantize(&self, c: f64) -> Result<f64> {
        Ok(self.grid_value(self.code(c)?))
    }

    /// Quantize-dequantize a slice of finite values.
    pub fn fake_quantize(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.grid_value(self.code_unchecked(v))).collect()
    }
}

/// Per-tensor range `(min, max)`, widened to `(v, v + 1)` for constant tensors.
pub fn fit_range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a range to an empty tensor".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("range input {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    Ok((lo, hi))
}

/// Nearest-grid quantization of a scalar.
pub fn quantize(c: f64, cfg: &QuantizerConfig) -> Result<f64> {
    cfg.quantize(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<u32>,
    pub config: QuantizerConfig,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Tensor {
        let data = self.codes.iter().map(|&k| self.config.grid_value(k)).collect();
        Tensor::from_parts(self.shape.clone(), data)
    }

    /// Bits occupied by the codes alone: `b * element_count`.
    pub fn payload_bits(&self) -> u64 {
        self.config.bits as u64 * self.codes.len() as u64
    }

    pub fn packed_codes(&self) -> Vec<u8> {
        pack_codes(&self.codes, self.config.bits)
    }
}

/// Quantizes a tensor on its own min/max range.
pub fn quantize_tensor(t: &Tensor, bits: u32) -> Result<QuantizedTensor> {
    let (mu, phi) = fit_range(t.data())?;
    quantize_tensor_with(t, QuantizerConfig::new(bits, mu, phi)?)
}

/// Quantizes a tensor on a fixed grid; out-of-range values clamp.
pub fn quantize_tensor_with(t: &Tensor, config: QuantizerConfig) -> Result<QuantizedTensor> {
    let codes = t.data().iter().map(|&v| config.code(v)).collect::<Result<_>>()?;
    Ok(QuantizedTensor { codes, config, shape: t.shape().to_vec() })
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor {
    qt.dequantize()
}

/// Packs `bits`-wide codes MSB-first into a big-endian bit stream, zero-padded to a byte.
pub fn pack_codes(codes: &[u32], bits: u32) -> Vec<u8> {
    let total = codes.len() as u64 * bits as u64;
    let mut out = vec![0u8; total.div_ceil(8) as usize];
    let mut pos = 0u64;
    for &code in codes {
        for i in (0..bits).rev() {
            if (code >> i) & 1 == 1 {
                out[(pos / 8) as usize] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<u32>> {
    let needed = (count as u64 * bits as u64).div_ceil(8) as usize;
    if bytes.len() < needed {
        return Err(Error::ShapeMismatch(format!("{} packed bytes, need {needed}", bytes.len())));
    }
    let mut pos = 0u64;
    let mut codes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut code = 0u32;
        for _ in 0..bits {
            let bit = (bytes[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
            code = (code << 1) | bit as u32;
            pos += 1;
        }
        codes.push(code);
    }
    Ok(codes)
}

/// What gets quantized when measuring output noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseTarget {
    /// Weights of learnable layer `l` on their own min/max range.
    Weights(usize),
    /// Activation leaving layer `layer`, on a calibrated range.
    Activation { layer: usize, range: (f64, f64) },
}

impl NoiseTarget {
    pub fn layer(&self) -> usize {
        match *self {
            NoiseTarget::Weights(l) => l,
            NoiseTarget::Activation { layer, .. } => layer,
        }
    }
}

/// Min/max of the activation leaving layer `p` over `samples`.
pub fn activation_range(model: &Model, samples: &Dataset, p: usize) -> Result<(f64, f64)> {
    let acts: Vec<Tensor> = (0..samples.len())
        .into_par_iter()
        .map(|i| model.forward_to(&samples.sample(i), p))
        .collect::<Result<_>>()?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in &acts {
        for &v in a.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if acts.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    if lo == hi {
        hi = lo + 1.0;
    }
    Ok((lo, hi))
}

/// Mean over samples of `||logits_quantized - logits_clean||^2` when only `target` is
/// quantized to `bits` and everything else stays at full precision.
pub fn measure_output_noise(model: &Model, samples: &Dataset, target: NoiseTarget, bits: u32) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("noise measurement needs at least one sample".into()));
    }
    let l = target.layer();
    let n_layers = model.num_learnable();
    if l == 0 || l > n_layers {
        return Err(Error::OutOfRange { index: l, max: n_layers });
    }
    let energies: Vec<f64> = match target {
        NoiseTarget::Weights(l) => {
            let w = quantize_tensor(model.weights(l)?, bits)?.dequantize();
            (0..samples.len())
                .into_par_iter()
                .map(|i| {
                    let head = model.run_span(&samples.sample(i), 1, l - 1, &[])?;
                    let clean = model.run_span(&head, l, n_layers, &[])?;
                    let noisy = model.run_span(&head, l, n_layers, &[(l, w.data())])?;
                    Ok(noisy.squared_distance(&clean))
                })
                .collect::<Result<_>>()?
        }
        NoiseTarget::Activation { layer, range } => {
            let cfg = QuantizerConfig::new(bits, range.0, range.1)?;
            (0..samples.len())
                .into_par_iter()
                .map(|i| {
                    let act = model.forward_to(&samples.sample(i), layer)?;
                    let clean = model.forward_from(&act, layer)?;
                    let q = Tensor::from_parts(act.shape().to_vec(), cfg.fake_quantize(act.data()));
                    let noisy = model.forward_from(&q, layer)?;
                    Ok(noisy.squared_distance(&clean))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(energies.iter().sum::<f64>() / energies.len() as f64)
}
