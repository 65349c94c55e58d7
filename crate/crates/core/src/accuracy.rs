//! Accuracy-degradation measurement.
//!
//! Each quantized item (a layer's weights, or the activation at the partition
//! point) is scored by `psi = s * 4^-b / rho`: `s` calibrates how much output
//! noise the item produces per grid step, and `rho` is the noise energy the
//! layer tolerates at accuracy budget `a`, normalised by the mean energy of
//! the smallest logit perturbation that flips a prediction.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, Model, Tensor};
use crate::optimizer::QuantPattern;
use crate::quant::{activation_range, measure_output_noise, NoiseTarget};
use crate::seed::derive_seed;

/// `ln 4`, the per-bit decay rate of quantization noise energy.
pub const LN4: f64 = 2.0 * LN_2;

/// Accuracy levels calibrated by default: 0.5 %, 1 %, 2 %, 5 %, 10 %.
pub const DEFAULT_LEVELS: [f64; 5] = [0.005, 0.01, 0.02, 0.05, 0.10];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialEnergy {
    pub energy: f64,
    /// Top logits tie, so the sample already sits on a decision boundary.
    pub degenerate: bool,
}

/// Squared norm of the smallest logit perturbation that changes the argmax:
/// `((y_top - y_runner_up) / sqrt 2)^2`.
pub fn adversarial_energy(logits: &[f64]) -> AdversarialEnergy {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &y in logits {
        if y > top {
            second = top;
            top = y;
        } else if y > second {
            second = y;
        }
    }
    if logits.len() < 2 || top == second {
        return AdversarialEnergy { energy: 0.0, degenerate: true };
    }
    let margin = top - second;
    AdversarialEnergy { energy: margin * margin / 2.0, degenerate: false }
}

pub fn adversarial_noise_energy(model: &Model, sample: &Tensor) -> Result<AdversarialEnergy> {
    Ok(adversarial_energy(model.forward(sample)?.data()))
}

/// Mean adversarial energy over `samples` and the number of degenerate samples.
pub fn mean_adversarial_energy(model: &Model, samples: &Dataset) -> Result<(f64, usize)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    let per: Vec<AdversarialEnergy> = (0..samples.len())
        .into_par_iter()
        .map(|i| adversarial_noise_energy(model, &samples.sample(i)))
        .collect::<Result<_>>()?;
    let total: f64 = per.iter().map(|e| e.energy).sum();
    Ok((total / per.len() as f64, per.iter().filter(|e| e.degenerate).count()))
}

/// Inverts the noise model at a reference width: `s = energy * e^(ln4 * b_ref)`.
pub fn noise_coefficient(measured_energy: f64, b_ref: f64) -> f64 {
    measured_energy * (LN4 * b_ref).exp()
}

/// Calibrates `s` for one target from a measurement at `b_ref` bits.
pub fn calibrate_noise_model(model: &Model, samples: &Dataset, target: NoiseTarget, b_ref: u32) -> Result<f64> {
    if !(4..=12).contains(&b_ref) {
        return Err(Error::InvalidArgument(format!("reference width {b_ref} outside [4, 12]")));
    }
    let measured = measure_output_noise(model, samples, target, b_ref)?;
    if !(measured > 0.0) {
        return Err(Error::Calibration(format!(
            "zero output noise for {target:?} at {b_ref} bits; use a smaller reference width"
        )));
    }
    Ok(noise_coefficient(measured, b_ref as f64))
}

/// Top-1 accuracy on a labeled set.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let hits: Vec<bool> =
        (0..data.len()).into_par_iter().map(|i| Ok(model.predict(&data.sample(i))? == data.label(i))).collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len().max(1) as f64)
}

/// Monte-Carlo protocol for the injected-noise threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSearch {
    pub trials: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once `hi / lo - 1` falls below this.
    pub rel_tol: f64,
    /// Initial noise standard deviation, relative to the weights' RMS.
    pub initial_scale: f64,
    pub max_scale: f64,
}

impl Default for NoiseSearch {
    fn default() -> Self {
        Self { trials: 5, seed: 1234, max_iters: 30, rel_tol: 0.01, initial_scale: 0.05, max_scale: 1e4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    /// Mean output-noise energy at the threshold scale.
    pub energy: f64,
    /// Noise std relative to weight RMS.
    pub scale: f64,
    /// Mean accuracy drop observed at `scale`.
    pub degradation: f64,
    /// Final bracket `(lo, hi)` on the scale.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

struct Probe {
    degradation: f64,
    energy: f64,
}

/// Fixed per-trial noise directions so every probe differs only in scale.
struct NoiseInjector<'a> {
    model: &'a Model,
    layer: usize,
    heads: Vec<Tensor>,
    clean: Vec<Tensor>,
    labels: Vec<usize>,
    clean_acc: f64,
    weights: Vec<f64>,
    rms: f64,
    directions: Vec<Vec<f64>>,
}

impl<'a> NoiseInjector<'a> {
    fn new(model: &'a Model, samples: &Dataset, layer: usize, trials: usize, seed: u64) -> Result<Self> {
        let n_layers = model.num_learnable();
        let heads: Vec<Tensor> = (0..samples.len())
            .into_par_iter()
            .map(|i| model.run_span(&samples.sample(i), 1, layer - 1, &[]))
            .collect::<Result<_>>()?;
        let clean: Vec<Tensor> =
            heads.par_iter().map(|h| model.run_span(h, layer, n_layers, &[])).collect::<Result<_>>()?;
        let labels: Vec<usize> = (0..samples.len()).map(|i| samples.label(i)).collect();
        let clean_acc =
            clean.iter().zip(&labels).filter(|(y, &t)| y.argmax() == t).count() as f64 / labels.len() as f64;
        let weights = model.weights(layer)?.data().to_vec();
        let rms = (weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64).sqrt();
        let directions = (0..trials)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
                (0..weights.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        Ok(Self { model, layer, heads, clean, labels, clean_acc, weights, rms, directions })
    }

    fn probe(&self, scale: f64) -> Result<Probe> {
        let n_layers = self.model.num_learnable();
        let sd = scale * if self.rms > 0.0 { self.rms } else { 1.0 };
        let mut acc_sum = 0.0;
        let mut energy_sum = 0.0;
        for dir in &self.directions {
            let noisy: Vec<f64> = self.weights.iter().zip(dir).map(|(w, z)| w + sd * z).collect();
            let per: Vec<(bool, f64)> = self
                .heads
                .par_iter()
                .zip(self.clean.par_iter())
                .zip(self.labels.par_iter())
                .map(|((h, c), &t)| {
                    let y = self.model.run_span(h, self.layer, n_layers, &[(self.layer, &noisy)])?;
                    Ok((y.argmax() == t, y.squared_distance(c)))
                })
                .collect::<Result<_>>()?;
            let n = per.len() as f64;
            acc_sum += per.iter().filter(|(hit, _)| *hit).count() as f64 / n;
            energy_sum += per.iter().map(|(_, e)| e).sum::<f64>() / n;
        }
        let trials = self.directions.len() as f64;
        Ok(Probe { degradation: self.clean_acc - acc_sum / trials, energy: energy_sum / trials })
    }
}

/// Output-noise energy at which Gaussian noise on layer `layer`'s weights
/// lowers accuracy on `samples` by `a`, found by geometric bisection over the
/// noise scale.
pub fn noise_threshold(model: &Model, samples: &Dataset, layer: usize, a: f64, search: &NoiseSearch) -> Result<Threshold> {
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::InvalidArgument(format!("accuracy budget {a} outside (0, 0.5)")));
    }
    if layer == 0 || layer > model.num_learnable() {
        return Err(Error::OutOfRange { index: layer, max: model.num_learnable() });
    }
    if samples.is_empty() || search.trials == 0 {
        return Err(Error::InvalidArgument("threshold search needs samples and at least one trial".into()));
    }
    // Directions depend on the layer only, so every accuracy level probes the same noise.
    let stream = derive_seed(search.seed, &[layer as u64]);
    let inj = NoiseInjector::new(model, samples, layer, search.trials, stream)?;

    // Bracket: lo never reaches the budget, hi does.
    let mut iterations = 0;
    let mut s = search.initial_scale;
    let mut probe = inj.probe(s)?;
    let (mut lo, mut hi, mut hi_probe);
    if probe.degradation >= a {
        hi = s;
        hi_probe = probe;
        loop {
            s /= 2.0;
            iterations += 1;
            if s < 1e-12 {
                lo = 0.0;
                break;
            }
            probe = inj.probe(s)?;
            if probe.degradation >= a {
                hi = s;
                hi_probe = probe;
            } else {
                lo = s;
                break;
            }
        }
    } else {
        lo = s;
        loop {
            s *= 2.0;
            iterations += 1;
            if s > search.max_scale {
                return Err(Error::Calibration(format!(
                    "layer {layer}: accuracy drop {a} unreachable with noise up to {} x weight RMS",
                    search.max_scale
                )));
            }
            probe = inj.probe(s)?;
            if probe.degradation >= a {
                hi = s;
                hi_probe = probe;
                break;
            }
            lo = s;
        }
    }

    let mut bisections = 0;
    while lo > 0.0 && hi / lo - 1.0 > search.rel_tol && bisections < search.max_iters {
        let mid = (lo * hi).sqrt();
        let p = inj.probe(mid)?;
        if p.degradation >= a {
            hi = mid;
            hi_probe = p;
        } else {
            lo = mid;
        }
        bisections += 1;
    }
    Ok(Threshold {
        energy: hi_probe.energy,
        scale: hi,
        degradation: hi_probe.degradation,
        bracket: (lo, hi),
        iterations: iterations + bisections,
    })
}

/// Tolerable noise energy normalised by the mean adversarial energy.
pub fn robustness(threshold_energy: f64, mean_adv: f64) -> Result<f64> {
    if !(mean_adv > 0.0) {
        return Err(Error::Calibration("mean adversarial energy is zero".into()));
    }
    Ok(threshold_energy / mean_adv)
}

/// Knobs for building a [`RobustnessProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub levels: Vec<f64>,
    pub samples: usize,
    pub b_ref: u32,
    pub search: NoiseSearch,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { levels: DEFAULT_LEVELS.to_vec(), samples: 512, b_ref: 8, search: NoiseSearch::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: usize,
    /// Noise coefficient for the layer's weights.
    pub s_w: f64,
    /// Noise coefficient for the activation leaving the layer.
    pub s_x: f64,
    /// Calibrated activation range `[mu, phi]`.
    pub act_range: (f64, f64),
    /// Robustness per accuracy level, aligned with `RobustnessProfile::levels`.
    pub rho: Vec<f64>,
    /// Threshold energies per accuracy level.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub samples: usize,
    pub seed: u64,
    pub trials: usize,
    pub b_ref: u32,
    pub clean_accuracy: f64,
    pub degenerate_samples: usize,
}

/// Calibrated state of the degradation model for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessProfile {
    pub model_id: String,
    pub levels: Vec<f64>,
    pub mean_adv: f64,
    pub layers: Vec<LayerProfile>,
    pub calib: CalibrationMeta,
}

impl RobustnessProfile {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn level_index(&self, a: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| (l - a).abs() <= 1e-12)
            .ok_or_else(|| Error::Missing(format!("accuracy level {a} not calibrated")))
    }

    pub fn layer(&self, l: usize) -> Result<&LayerProfile> {
        self.layers.get(l.wrapping_sub(1)).ok_or_else(|| Error::Missing(format!("layer {l} not calibrated")))
    }

    pub fn rho(&self, l: usize, a: f64) -> Result<f64> {
        let k = self.level_index(a)?;
        Ok(self.layer(l)?.rho[k])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.mean_adv) {
            return Err(Error::Calibration("mean adversarial energy must be positive".into()));
        }
        for lp in &self.layers {
            if !positive(lp.s_w) || !positive(lp.s_x) || lp.rho.len() != self.levels.len() || !lp.rho.iter().all(|&r| positive(r)) {
                return Err(Error::Calibration(format!("layer {} has non-positive s or rho", lp.layer)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::json("profile.json", e))?;
        p.validate()?;
        Ok(p)
    }
}

/// Calibrates noise coefficients, activation ranges and robustness for every
/// layer and accuracy level of `model` on `calib`.
pub fn calibrate_profile(model: &Model, calib: &Dataset, cfg: &CalibrationConfig) -> Result<RobustnessProfile> {
    if cfg.levels.is_empty() {
        return Err(Error::InvalidArgument("no accuracy levels requested".into()));
    }
    let n = model.num_learnable();
    let (mean_adv, degenerate) = mean_adversarial_energy(model, calib)?;
    if !(mean_adv > 0.0) {
        return Err(Error::Calibration("mean adversarial energy is zero".into()));
    }
    let clean_accuracy = accuracy(model, calib)?;

    let cells: Vec<(usize, usize)> = (1..=n).flat_map(|l| (0..cfg.levels.len()).map(move |k| (l, k))).collect();
    let thresholds: Vec<f64> = cells
        .iter()
        .map(|&(l, k)| {
            noise_threshold(model, calib, l, cfg.levels[k], &cfg.search)
                .map(|t| t.energy)
                .map_err(|e| Error::Calibration(format!("layer {l}, level {}: {e}", cfg.levels[k])))
        })
        .collect::<Result<_>>()?;

    let mut layers = Vec::with_capacity(n);
    for l in 1..=n {
        let act_range = activation_range(model, calib, l)?;
        let s_w = calibrate_noise_model(model, calib, NoiseTarget::Weights(l), cfg.b_ref)
            .map_err(|e| Error::Calibration(format!("layer {l} weights: {e}")))?;
        let s_x = calibrate_noise_model(model, calib, NoiseTarget::Activation { layer: l, range: act_range }, cfg.b_ref)
            .map_err(|e| Error::Calibration(format!("layer {l} activation: {e}")))?;
        let th: Vec<f64> = thresholds[(l - 1) * cfg.levels.len()..l * cfg.levels.len()].to_vec();
        let rho = th.iter().map(|&t| robustness(t, mean_adv)).collect::<Result<Vec<_>>>()?;
        layers.push(LayerProfile { layer: l, s_w, s_x, act_range, rho, thresholds: th });
    }
    let profile = RobustnessProfile {
        model_id: model.id().to_string(),
        levels: cfg.levels.clone(),
        mean_adv,
        layers,
        calib: CalibrationMeta {
            samples: calib.len(),
            seed: cfg.search.seed,
            trials: cfg.search.trials,
            b_ref: cfg.b_ref,
            clean_accuracy,
            degenerate_samples: degenerate,
        },
    };
    profile.validate()?;
    Ok(profile)
}

/// Per-item degradation measures for a pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationEstimate {
    pub psi_w: Vec<f64>,
    pub psi_x: f64,
    pub total: f64,
    /// Budget recorded when the pattern was solved.
    pub delta_budget: f64,
}

/// `s * e^(-ln4 b) / rho`.
pub fn psi(s: f64, bits: f64, rho: f64) -> f64 {
    s * (-LN4 * bits).exp() / rho
}

/// Degradation terms for weights `1..=bits.len()` plus the activation at `p = bits.len()`.
pub fn degradation_terms(profile: &RobustnessProfile, a: f64, bits: &[f64], bits_act: f64) -> Result<DegradationEstimate> {
    let k = profile.level_index(a)?;
    let p = bits.len();
    if p == 0 {
        return Err(Error::InvalidArgument("pattern has no layers".into()));
    }
    let mut psi_w = Vec::with_capacity(p);
    for (i, &b) in bits.iter().enumerate() {
        let lp = profile.layer(i + 1)?;
        psi_w.push(psi(lp.s_w, b, lp.rho[k]));
    }
    let lp = profile.layer(p)?;
    let psi_x = psi(lp.s_x, bits_act, lp.rho[k]);
    let total = psi_w.iter().sum::<f64>() + psi_x;
    Ok(DegradationEstimate { psi_w, psi_x, total, delta_budget: total })
}

pub fn degradation_measure(profile: &RobustnessProfile, pattern: &QuantPattern) -> Result<DegradationEstimate> {
    let bits: Vec<f64> = pattern.bits.iter().map(|&b| b as f64).collect();
    let mut est = degradation_terms(profile, pattern.a_level, &bits, pattern.bits_act as f64)?;
    est.delta_budget = pattern.psi_total;
    Ok(est)
}
