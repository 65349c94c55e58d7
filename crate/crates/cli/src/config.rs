use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splitquant::accuracy::DEFAULT_LEVELS;
use splitquant::costs::{ChannelProfile, CostContext, CostWeights, DeviceProfile, ServerProfile};

use crate::CliError;

pub const SEED_ENV: &str = "SPLITQUANT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    FixedRate,
    Shannon,
}

/// Every tunable, with defaults matching the reference simulation settings.
/// A `--config` file overrides any subset of fields; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model_dir: Option<PathBuf>,
    /// Dataset root holding `train/`, `val/` and `test/`.
    pub data_dir: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,

    pub seed: u64,
    pub levels: Vec<f64>,
    pub calib_samples: usize,
    pub b_ref: u32,
    pub noise_trials: usize,

    pub gamma_local: f64,
    pub gamma_server: f64,
    pub f_local: f64,
    pub f_server: f64,
    pub pi: f64,
    pub kappa: f64,
    pub eta_m: f64,
    pub zeta: f64,
    pub omega: f64,
    pub tau: f64,
    pub eta: f64,
    /// Device memory budget for quantized weights, in bits.
    pub mem_budget: Option<f64>,

    pub channel: ChannelMode,
    pub rate: f64,
    pub bandwidth: f64,
    pub alpha: f64,
    pub sigma_n: f64,

    pub a_level: f64,
    pub p_min: usize,
    pub p_max: Option<usize>,
    pub strategies: Vec<String>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let dev = DeviceProfile::default();
        let srv = ServerProfile::default();
        let w = CostWeights::default();
        Self {
            model_dir: None,
            data_dir: None,
            profile: None,
            patterns: None,
            output_dir: None,
            seed: 1234,
            levels: DEFAULT_LEVELS.to_vec(),
            calib_samples: 512,
            b_ref: 8,
            noise_trials: 5,
            gamma_local: dev.gamma_local,
            gamma_server: srv.gamma_server,
            f_local: dev.f_local,
            f_server: srv.f_server,
            pi: dev.pi,
            kappa: dev.kappa,
            eta_m: srv.eta_m,
            zeta: srv.zeta,
            omega: w.omega,
            tau: w.tau,
            eta: w.eta,
            mem_budget: None,
            channel: ChannelMode::FixedRate,
            rate: 200e6,
            bandwidth: 20e6,
            alpha: 1.0,
            sigma_n: 1e-9,
            a_level: 0.01,
            p_min: 1,
            p_max: None,
            strategies: vec!["optimized".into(), "no_optimization".into(), "magnitude_pruning".into()],
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'")))?;
        }
        Ok(cfg)
    }

    pub fn device(&self) -> DeviceProfile {
        DeviceProfile {
            f_local: self.f_local,
            gamma_local: self.gamma_local,
            kappa: self.kappa,
            pi: self.pi,
            mem_budget: self.mem_budget,
        }
    }

    pub fn server(&self) -> ServerProfile {
        ServerProfile { f_server: self.f_server, gamma_server: self.gamma_server, zeta: self.zeta, eta_m: self.eta_m }
    }

    pub fn weights(&self) -> CostWeights {
        CostWeights { omega: self.omega, tau: self.tau, eta: self.eta }
    }

    pub fn channel_profile(&self) -> ChannelProfile {
        match self.channel {
            ChannelMode::FixedRate => ChannelProfile::FixedRate { rate: self.rate },
            ChannelMode::Shannon => ChannelProfile::Shannon {
                bandwidth: self.bandwidth,
                alpha: self.alpha,
                sigma_n: self.sigma_n,
                fading_seed: self.seed,
            },
        }
    }

    pub fn context(&self) -> CostContext {
        let device = self.device();
        CostContext {
            device,
            server: self.server(),
            weights: self.weights(),
            rate: self.channel_profile().capacity(device.pi),
        }
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field.as_deref().ok_or_else(|| CliError::Usage(format!("missing --{name} (or '{}' in the config)", name.replace('-', "_"))))
    }
}
