//! Latency, energy and monetary cost model for split inference.
//!
//! The device runs layers `1..=p`, sends the layer-`p` activation to the
//! server over a wireless link, and the server runs the rest. Defaults
//! reproduce the reference simulation settings (200 MHz device at 5 cycles
//! per MAC, 3 GHz server at 5/4 cycles per MAC, 1 W radio, 200 Mbps link).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Clock rate in Hz.
    pub f_local: f64,
    /// Cycles per MAC.
    pub gamma_local: f64,
    /// Energy-efficiency coefficient (J s^2).
    pub kappa: f64,
    /// Transmit power in W.
    pub pi: f64,
    /// Optional memory bound in bits for the device-side weights.
    #[serde(default)]
    pub mem_budget: Option<f64>,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self { f_local: 200e6, gamma_local: 5.0, kappa: 3e-27, pi: 1.0, mem_budget: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    pub f_server: f64,
    pub gamma_server: f64,
    /// Price per second of server compute.
    pub zeta: f64,
    pub eta_m: f64,
}

impl Default for ServerProfile {
    fn default() -> Self {
        Self { f_server: 3e9, gamma_server: 1.25, zeta: 1e-2, eta_m: 3.75e-27 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChannelProfile {
    FixedRate {
        rate: f64,
    },
    /// Rayleigh-style link: `g = alpha * h` with `h ~ Exp(1)`, capacity `B log2(1 + pi g / sigma_n)`.
    Shannon {
        bandwidth: f64,
        alpha: f64,
        sigma_n: f64,
        fading_seed: u64,
    },
}

impl Default for ChannelProfile {
    fn default() -> Self {
        ChannelProfile::FixedRate { rate: 200e6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub omega: f64,
    pub tau: f64,
    pub eta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { omega: 1.0, tau: 1.0, eta: 0.0 }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.f_local, self.gamma_local, self.kappa, self.pi].iter().all(|v| v.is_finite() && *v > 0.0)
            && self.mem_budget.is_none_or(|m| m > 0.0);
        ok.then_some(()).ok_or_else(|| Error::InvalidArgument(format!("device profile must be positive: {self:?}")))
    }
}

impl ServerProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.f_server, self.gamma_server, self.zeta, self.eta_m].iter().all(|v| v.is_finite() && *v > 0.0);
        ok.then_some(()).ok_or_else(|| Error::InvalidArgument(format!("server profile must be positive: {self:?}")))
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.omega, self.tau, self.eta].iter().all(|v| v.is_finite() && *v >= 0.0);
        ok.then_some(()).ok_or_else(|| Error::InvalidArgument(format!("cost weights must be non-negative: {self:?}")))
    }
}

/// Shannon capacity for a known channel gain.
pub fn shannon_capacity(bandwidth: f64, pi: f64, gain: f64, sigma_n: f64) -> f64 {
    bandwidth * (1.0 + pi * gain / sigma_n).log2()
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ChannelProfile::FixedRate { rate } => rate.is_finite() && rate > 0.0,
            ChannelProfile::Shannon { bandwidth, alpha, sigma_n, .. } => {
                bandwidth > 0.0 && alpha >= 0.0 && sigma_n > 0.0 && bandwidth.is_finite() && alpha.is_finite()
            }
        };
        ok.then_some(()).ok_or_else(|| Error::InvalidArgument(format!("invalid channel profile: {self:?}")))
    }

    /// Capacity in bits/s, drawing the small-scale fading from `rng` in Shannon mode.
    pub fn capacity_with<R: Rng + ?Sized>(&self, pi: f64, rng: &mut R) -> f64 {
        match *self {
            ChannelProfile::FixedRate { rate } => rate,
            ChannelProfile::Shannon { bandwidth, alpha, sigma_n, .. } => {
                let h: f64 = rng.sample(Exp1);
                shannon_capacity(bandwidth, pi, alpha * h, sigma_n)
            }
        }
    }

    /// Capacity with the fading drawn from the profile's own seed.
    pub fn capacity(&self, pi: f64) -> f64 {
        match *self {
            ChannelProfile::FixedRate { rate } => rate,
            ChannelProfile::Shannon { fading_seed, .. } => {
                self.capacity_with(pi, &mut ChaCha8Rng::seed_from_u64(fading_seed))
            }
        }
    }
}

/// Transmitted bits: quantized weights of layers `1..=p` plus the layer-`p` activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub weights: u64,
    pub activation: u64,
    pub total: u64,
}

pub fn payload_bits(stats: &LayerStats, bits: &[u32], bits_act: u32) -> Result<Payload> {
    let p = bits.len();
    if p == 0 || p > stats.num_layers() {
        return Err(Error::OutOfRange { index: p, max: stats.num_layers() });
    }
    let weights: u64 = bits.iter().enumerate().map(|(i, &b)| b as u64 * stats.z_w(i + 1)).sum();
    let activation = bits_act as u64 * stats.z_x(p);
    Ok(Payload { weights, activation, total: weights + activation })
}

/// All per-request cost components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_local: f64,
    pub e_local: f64,
    pub t_server: f64,
    pub t_tran: f64,
    pub e_tran: f64,
    pub cost: f64,
}

impl CostBreakdown {
    pub fn total_time(&self) -> f64 {
        self.t_local + self.t_tran + self.t_server
    }

    pub fn total_energy(&self) -> f64 {
        self.e_local + self.e_tran
    }
}

pub fn time_energy(o1: u64, o2: u64, dev: &DeviceProfile, srv: &ServerProfile, rate: f64, payload: u64) -> CostBreakdown {
    let (o1, o2, z) = (o1 as f64, o2 as f64, payload as f64);
    CostBreakdown {
        t_local: o1 * dev.gamma_local / dev.f_local,
        e_local: dev.kappa * dev.f_local * dev.f_local * o1 * dev.gamma_local,
        t_server: o2 * srv.gamma_server / srv.f_server,
        t_tran: z / rate,
        e_tran: dev.pi * z / rate,
        cost: o2 * srv.gamma_server * srv.zeta / srv.f_server,
    }
}

/// Weighted objective `omega * time + tau * device energy + eta * server cost`.
pub fn objective(parts: &CostBreakdown, w: &CostWeights) -> f64 {
    w.omega * parts.total_time() + w.tau * parts.total_energy() + w.eta * parts.cost
}

/// Per-unit costs of device MACs, server MACs and transmitted bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub xi: f64,
    pub delta: f64,
    pub epsilon: f64,
}

pub fn coefficients(dev: &DeviceProfile, srv: &ServerProfile, w: &CostWeights, rate: f64) -> Result<Coefficients> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("channel rate must be positive, got {rate}")));
    }
    Ok(Coefficients {
        xi: w.omega * dev.gamma_local / dev.f_local + w.tau * dev.gamma_local * dev.kappa * dev.f_local.powi(2),
        delta: (w.omega + w.eta * srv.zeta) * srv.gamma_server / srv.f_server
            + w.tau * srv.gamma_server * srv.eta_m * srv.f_server.powi(2),
        epsilon: (w.omega + dev.pi * w.tau) / rate,
    })
}

/// The server-energy contribution carried by `delta` but absent from the objective.
pub fn server_energy_term(o2: u64, srv: &ServerProfile, w: &CostWeights) -> f64 {
    w.tau * srv.gamma_server * srv.eta_m * srv.f_server.powi(2) * o2 as f64
}

/// Everything needed to price a (partition, payload) choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostContext {
    pub device: DeviceProfile,
    pub server: ServerProfile,
    pub weights: CostWeights,
    pub rate: f64,
}

impl Default for CostContext {
    fn default() -> Self {
        Self {
            device: DeviceProfile::default(),
            server: ServerProfile::default(),
            weights: CostWeights::default(),
            rate: 200e6,
        }
    }
}

impl CostContext {
    pub fn breakdown(&self, o1: u64, o2: u64, payload: u64) -> CostBreakdown {
        time_energy(o1, o2, &self.device, &self.server, self.rate, payload)
    }

    pub fn objective(&self, o1: u64, o2: u64, payload: u64) -> f64 {
        objective(&self.breakdown(o1, o2, payload), &self.weights)
    }

    pub fn coefficients(&self) -> Result<Coefficients> {
        coefficients(&self.device, &self.server, &self.weights, self.rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shannon_examples() {
        assert_relative_eq!(shannon_capacity(1e6, 1.0, 3.0, 1.0), 2e6);
        assert_eq!(shannon_capacity(1e6, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(ChannelProfile::default().capacity(1.0), 200e6);
    }

    #[test]
    fn shannon_mode_is_reproducible_and_uses_fading() {
        let ch = ChannelProfile::Shannon { bandwidth: 1e6, alpha: 1.0, sigma_n: 1.0, fading_seed: 9 };
        let a = ch.capacity(1.0);
        assert_eq!(a.to_bits(), ch.capacity(1.0).to_bits());
        assert!(a > 0.0);
        let other = ChannelProfile::Shannon { bandwidth: 1e6, alpha: 1.0, sigma_n: 1.0, fading_seed: 10 };
        assert_ne!(a, other.capacity(1.0));
    }

    #[test]
    fn payload_examples() {
        let stats = LayerStats::from_counts(vec![100, 200], vec![10, 50], vec![1, 1], 4).unwrap();
        assert_eq!(payload_bits(&stats, &[8, 4], 4).unwrap().total, 1800);
        let full = payload_bits(&stats, &[32, 32], 32).unwrap();
        assert_eq!(full.total, 32 * (100 + 200 + 50));
        let half = payload_bits(&stats, &[16, 16], 16).unwrap();
        assert_eq!(half.total * 2, full.total);
        assert!(payload_bits(&stats, &[8, 8, 8], 8).is_err());
    }

    #[test]
    fn time_energy_examples() {
        let dev = DeviceProfile::default();
        let srv = ServerProfile::default();
        let parts = time_energy(1_000_000, 0, &dev, &srv, 2e8, 1800);
        assert_relative_eq!(parts.t_local, 0.025);
        assert_relative_eq!(parts.e_local, 6e-4, max_relative = 1e-12);
        assert_relative_eq!(parts.t_tran, 9e-6);
        assert_relative_eq!(parts.e_tran, 9e-6);
        assert_eq!(parts.t_server, 0.0);
        assert_eq!(parts.cost, 0.0);
    }

    #[test]
    fn objective_weights() {
        let parts = time_energy(1_000_000, 500, &DeviceProfile::default(), &ServerProfile::default(), 2e8, 1800);
        assert_eq!(objective(&parts, &CostWeights { omega: 0.0, tau: 0.0, eta: 0.0 }), 0.0);
        let t = objective(&parts, &CostWeights { omega: 1.0, tau: 0.0, eta: 0.0 });
        assert_eq!(t, parts.total_time());
        let j = objective(&parts, &CostWeights::default());
        assert_eq!(j, parts.total_time() + parts.total_energy());
    }

    #[test]
    fn coefficient_examples() {
        let c = coefficients(&DeviceProfile::default(), &ServerProfile::default(), &CostWeights::default(), 2e8).unwrap();
        assert_relative_eq!(c.xi, 2.56e-8, max_relative = 1e-12);
        assert_relative_eq!(c.epsilon, 1e-8, max_relative = 1e-12);
        let w = CostWeights { omega: 1.0, tau: 0.0, eta: 0.0 };
        let c = coefficients(&DeviceProfile::default(), &ServerProfile::default(), &w, 2e8).unwrap();
        assert_relative_eq!(c.delta, 1.25 / 3e9, max_relative = 1e-12);
        assert!(coefficients(&DeviceProfile::default(), &ServerProfile::default(), &w, 0.0).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(DeviceProfile::default().validate().is_ok());
        assert!(DeviceProfile { f_local: 0.0, ..Default::default() }.validate().is_err());
        assert!(CostWeights { omega: -1.0, tau: 0.0, eta: 0.0 }.validate().is_err());
        assert!(ChannelProfile::FixedRate { rate: 0.0 }.validate().is_err());
    }
}
