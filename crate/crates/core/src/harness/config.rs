//! Experiment configuration: one JSON document with sections
//! `geometry`, `spectrum`, `dmc`, `scenario`, `estimator` and `metrics`.
//! Angles are degrees in the file and radians everywhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, ModelContext};
use crate::model::{
    ArrayGeometry, DispersionDomain, GeometrySpec, PulseSpectrum, SpectrumSpec, SteeringModel,
    SPEED_OF_LIGHT,
};
use crate::noise::DmcParams;
use crate::simulator::{ScenarioSpec, Simulator};

/// Shape of the delay power spectrum used to generate dense multipath, and
/// the delay extent of the dispersion domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmcShape {
    pub beta_s: f64,
    pub theta_s: f64,
    pub xi: f64,
    /// Delay extent `T`; `None` means the unambiguous range `1/delta`.
    pub max_delay_s: Option<f64>,
}

impl Default for DmcShape {
    fn default() -> Self {
        Self {
            beta_s: 1.0 / SPEED_OF_LIGHT,
            theta_s: 5e-9,
            xi: 1.8,
            max_delay_s: None,
        }
    }
}

impl DmcShape {
    /// Shape as noise parameters; the powers are placeholders that the
    /// simulator replaces per trial.
    pub fn params(&self) -> DmcParams {
        DmcParams {
            sigma2: 1.0,
            dmc_power: 1.0,
            beta: self.beta_s,
            theta: self.theta_s,
            xi: self.xi,
        }
    }
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub trials: usize,
    /// Half-side of the classification region in units of the root CRB.
    pub region_multiplier: f64,
    pub ospa_cutoff: f64,
    pub ospa_order: f64,
    /// Resolution limits used to normalize OSPA coordinates.
    pub rrl_distance_m: f64,
    #[serde(rename = "rrl_angle_deg", with = "crate::degrees")]
    pub rrl_angle: f64,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            region_multiplier: 5.0,
            ospa_cutoff: 2.0,
            ospa_order: 2.0,
            rrl_distance_m: 0.3,
            rrl_angle: 56f64.to_radians(),
            threads: None,
        }
    }
}

/// Trial count used by `--full`.
pub const FULL_SCALE_TRIALS: usize = 1000;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometrySpec,
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub dmc: DmcShape,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.metrics;
        if m.trials == 0 {
            return Err(Error::Config("metrics.trials must be at least 1".into()));
        }
        if !(m.region_multiplier > 0.0) {
            return Err(Error::Config("metrics.region_multiplier must be positive".into()));
        }
        if !(m.ospa_cutoff > 0.0) || !(m.ospa_order >= 1.0) {
            return Err(Error::Config("OSPA needs cutoff > 0 and order >= 1".into()));
        }
        if !(m.rrl_distance_m > 0.0) || !(m.rrl_angle > 0.0) {
            return Err(Error::Config("resolution limits must be positive".into()));
        }
        if m.threads == Some(0) {
            return Err(Error::Config("metrics.threads must be at least 1".into()));
        }
        self.scenario.validate()?;
        // eta_known without eta means the true parameters of each trial
        let mut est = self.estimator.clone();
        if est.eta_known && est.eta.is_none() {
            est.eta = Some(self.dmc.params());
        }
        est.validate()?;
        self.dmc.params().validate()?;
        self.context()?;
        Ok(())
    }

    /// Wideband model context on the configured domain.
    pub fn context(&self) -> Result<ModelContext> {
        let geometry = ArrayGeometry::try_from(self.geometry.clone())?;
        let spectrum = PulseSpectrum::try_from(self.spectrum.clone())?;
        let domain = match self.dmc.max_delay_s {
            Some(t) => DispersionDomain::new(t, &spectrum)?,
            None => DispersionDomain::unambiguous(&spectrum),
        };
        Ok(ModelContext::new(SteeringModel::new(geometry, spectrum, true), domain))
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.scenario.clone(), self.context()?, &self.dmc.params())
    }
}
