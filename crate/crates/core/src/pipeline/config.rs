//! Run configuration (TOML).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linsys::{KalmanState, NoiseSpec};
use crate::rcie::{AieOptions, Hyperparameters, InnovationSign, DEFAULT_DIVERGENCE_BOUND};
use crate::sim::{InputProfile, Scenario, SensorNoise, DEFAULT_SUBSTEPS};
use crate::sysid::{FitOptions, DEFAULT_MAX_ITERATIONS};
use crate::vehicle::{ReconstructionMode, DEFAULT_SAMPLE_PERIOD};

pub const DEFAULT_PROCESS_VAR: f64 = 1e-4;
pub const DEFAULT_MEASUREMENT_VAR: f64 = 1e-2;
pub const DEFAULT_INITIAL_COV: f64 = 1.0;

/// Tuning of one estimation channel: retrospective-cost hyperparameters plus
/// the Kalman noise model and prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_e: usize,
    pub n_f: usize,
    pub r_z: f64,
    pub r_d: f64,
    pub r_theta_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "default_process_var")]
    pub process_var: f64,
    #[serde(default = "default_measurement_var")]
    pub measurement_var: f64,
    #[serde(default = "default_initial_cov")]
    pub initial_cov: f64,
}

fn default_process_var() -> f64 {
    DEFAULT_PROCESS_VAR
}

fn default_measurement_var() -> f64 {
    DEFAULT_MEASUREMENT_VAR
}

fn default_initial_cov() -> f64 {
    DEFAULT_INITIAL_COV
}

impl ChannelConfig {
    fn from_hyperparameters(hp: Hyperparameters) -> Self {
        Self {
            n_e: hp.n_e,
            n_f: hp.n_f,
            r_z: hp.r_z,
            r_d: hp.r_d,
            r_theta_scale: hp.r_theta_scale,
            theta0: hp.theta0,
            process_var: DEFAULT_PROCESS_VAR,
            measurement_var: DEFAULT_MEASUREMENT_VAR,
            initial_cov: DEFAULT_INITIAL_COV,
        }
    }

    pub fn surge() -> Self {
        Self::from_hyperparameters(Hyperparameters::surge())
    }

    pub fn heading() -> Self {
        Self::from_hyperparameters(Hyperparameters::heading())
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            n_e: self.n_e,
            n_f: self.n_f,
            r_z: self.r_z,
            r_d: self.r_d,
            r_theta_scale: self.r_theta_scale,
            theta0: self.theta0.clone(),
        }
    }

    pub fn noise(&self, state_dim: usize) -> Result<NoiseSpec> {
        NoiseSpec::isotropic(state_dim, self.process_var, self.measurement_var)
    }

    pub fn prior(&self, state_dim: usize) -> KalmanState {
        KalmanState::with_isotropic_prior(state_dim, self.initial_cov)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let wrap = |e: Error| Error::Validation(format!("[{name}] {e}"));
        self.hyperparameters().validate().map_err(wrap)?;
        for (key, v) in [
            ("process_var", self.process_var),
            ("measurement_var", self.measurement_var),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("[{name}] {key} must be >= 0")));
            }
        }
        if !(self.initial_cov.is_finite() && self.initial_cov > 0.0) {
            return Err(Error::Validation(format!("[{name}] initial_cov must be > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub horizon: f64,
    pub gps_sigma: f64,
    pub compass_sigma: f64,
    pub substeps: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub initial_heading: f64,
    pub initial_speed: f64,
    pub initial_yaw_rate: f64,
    pub dropout_prob: f64,
    pub surge: InputProfile,
    pub yaw: InputProfile,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        let noise = SensorNoise::default();
        Self {
            horizon: 1000.0 * DEFAULT_SAMPLE_PERIOD,
            gps_sigma: noise.gps_sigma,
            compass_sigma: noise.compass_sigma,
            substeps: DEFAULT_SUBSTEPS,
            origin_lat: 0.0,
            origin_lon: 0.0,
            initial_heading: 0.0,
            initial_speed: 0.0,
            initial_yaw_rate: 0.0,
            dropout_prob: 0.0,
            surge: InputProfile::constant(0.6),
            yaw: InputProfile::constant(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysidConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_inertia: Option<f64>,
    pub free_input_scale: bool,
    pub max_iterations: usize,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self {
            fixed_inertia: None,
            free_input_scale: false,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl SysidConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            fixed_inertia: self.fixed_inertia,
            free_input_scale: self.free_input_scale,
            max_iterations: self.max_iterations,
        }
    }
}

/// Complete configuration of a run. Every field has a default, so an empty
/// document is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sample_period: f64,
    pub seed: u64,
    /// Input assumed by the fixed-input Kalman baseline.
    pub baseline_input: f64,
    pub reconstruction: ReconstructionMode,
    pub innovation_sign: InnovationSign,
    pub divergence_bound: f64,
    pub surge: ChannelConfig,
    pub heading: ChannelConfig,
    pub simulator: SimulatorConfig,
    pub sysid: SysidConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_period: DEFAULT_SAMPLE_PERIOD,
            seed: 0,
            baseline_input: 1.0,
            reconstruction: ReconstructionMode::default(),
            innovation_sign: InnovationSign::default(),
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            surge: ChannelConfig::surge(),
            heading: ChannelConfig::heading(),
            simulator: SimulatorConfig::default(),
            sysid: SysidConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Validation(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period.is_finite() && self.sample_period > 0.0) {
            return Err(Error::Validation("sample_period must be > 0".into()));
        }
        if !self.baseline_input.is_finite() {
            return Err(Error::Validation("baseline_input must be finite".into()));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::Validation("divergence_bound must be > 0".into()));
        }
        self.surge.validate("surge")?;
        self.heading.validate("heading")?;
        let sim = &self.simulator;
        if !(0.0..1.0).contains(&sim.dropout_prob) {
            return Err(Error::Validation(
                "[simulator] dropout_prob must lie in [0, 1)".into(),
            ));
        }
        self.scenario()
            .validate()
            .map_err(|e| Error::Validation(format!("[simulator] {e}")))?;
        if let Some(m) = self.sysid.fixed_inertia {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Validation("[sysid] fixed_inertia must be > 0".into()));
            }
        } else if self.sysid.free_input_scale {
            return Err(Error::Validation(
                "[sysid] free_input_scale requires fixed_inertia".into(),
            ));
        }
        if self.sysid.max_iterations == 0 {
            return Err(Error::Validation("[sysid] max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn aie_options(&self) -> AieOptions {
        AieOptions {
            innovation_sign: self.innovation_sign,
            divergence_bound: self.divergence_bound,
        }
    }

    pub fn scenario(&self) -> Scenario {
        let s = &self.simulator;
        let mut sc = Scenario::new(s.surge.clone(), s.yaw.clone(), s.horizon);
        sc.sample_period = self.sample_period;
        sc.noise = SensorNoise {
            gps_sigma: s.gps_sigma,
            compass_sigma: s.compass_sigma,
        };
        sc.substeps = s.substeps;
        sc.origin_lat = s.origin_lat;
        sc.origin_lon = s.origin_lon;
        sc.initial_heading = s.initial_heading;
        sc.initial_speed = s.initial_speed;
        sc.initial_yaw_rate = s.initial_yaw_rate;
        sc
    }
}
