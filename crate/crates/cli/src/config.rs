//! Configuration files: the plant parameter set, synthesis and deload
//! settings, and the bundled scenarios.

use std::path::Path;

use ppm_control::control_model::WeightConfig;
use ppm_control::hinf::SynthesisOptions;
use ppm_control::network::StarNetwork;
use ppm_control::params::{BaseQuantities, GridEquivalentParams, PlantParams, PmsgParams};
use ppm_control::services::TurbineAeroModel;
use ppm_control::sim::{Scenario, SimModel};
use ppm_control::{reference, Error};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The reference parameter set as shipped.
pub const REFERENCE_PARAMETERS: &str = include_str!("../data/ref-8mw-v1.toml");

/// A complete, versioned plant and turbine description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterFile {
    pub version: String,
    pub deload_fraction: f64,
    pub base: BaseQuantities,
    pub network: StarNetwork,
    pub gde: GridEquivalentParams,
    pub aero: TurbineAeroModel,
    pub pmsg: [PmsgParams; 2],
}

impl ParameterFile {
    /// The set compiled into the library.
    pub fn reference() -> Self {
        let p = reference::plant_params();
        Self {
            version: reference::PARAMETER_SET_VERSION.into(),
            deload_fraction: reference::DELOAD_FRACTION,
            base: p.base,
            network: p.network.topology,
            gde: p.gde,
            aero: reference::aero(),
            pmsg: p.pmsg,
        }
    }

    /// The shipped data file.
    pub fn bundled() -> Result<Self, CliError> {
        parse_toml(REFERENCE_PARAMETERS, "bundled parameter set")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        parse_toml(&read(path)?, &path.display().to_string())
    }

    /// Validated simulation model.
    pub fn to_model(&self) -> Result<SimModel, CliError> {
        self.aero.validate()?;
        if !(self.deload_fraction > 0.0 && self.deload_fraction < 0.5) {
            return Err(Error::InvalidParameter(format!("deload fraction {} outside (0, 0.5)", self.deload_fraction)).into());
        }
        let params = PlantParams::new(self.base, self.pmsg, self.network, self.gde)?;
        Ok(SimModel { params, aero: self.aero, deload_fraction: self.deload_fraction })
    }
}

fn default_vdc() -> [f64; 2] {
    [reference::VDC_REF; 2]
}

/// Input of `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Plant to design for; the bundled reference set when absent.
    #[serde(default)]
    pub plant: Option<ParameterFile>,
    /// Wind speed of the operating point (m/s); reference wind when absent.
    #[serde(default)]
    pub wind_speed: Option<f64>,
    #[serde(default)]
    pub q_ref: [f64; 2],
    #[serde(default = "default_vdc")]
    pub vdc_ref: [f64; 2],
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            plant: None,
            wind_speed: None,
            q_ref: [0.0; 2],
            vdc_ref: default_vdc(),
            weight: WeightConfig::default(),
            synthesis: SynthesisOptions::default(),
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        parse_toml(&read(path)?, &path.display().to_string())
    }

    pub fn plant(&self) -> Result<ParameterFile, CliError> {
        match &self.plant {
            Some(p) => Ok(p.clone()),
            None => ParameterFile::bundled(),
        }
    }

    /// Everything that can be checked without solving anything.
    pub fn validate(&self) -> Result<SimModel, CliError> {
        let model = self.plant()?.to_model()?;
        if let Some(v) = self.wind_speed {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("wind speed {v} must be > 0")));
            }
        }
        self.weight.build()?;
        let s = &self.synthesis;
        if !(s.gamma_tol > 0.0 && s.epsilon > 0.0 && s.x_max > 0.0 && s.w_max > 0.0 && s.gamma_cap > 0.0) {
            return Err(CliError::Config("synthesis tolerances and radii must be > 0".into()));
        }
        if !(s.decay_rate >= 0.0) {
            return Err(CliError::Config("decay_rate must be >= 0".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl WindRange {
    pub fn speeds(&self) -> Result<Vec<f64>, CliError> {
        if !(self.step > 0.0 && self.start > 0.0 && self.stop >= self.start) {
            return Err(CliError::Config(format!(
                "empty wind range [{}, {}] with step {}",
                self.start, self.stop, self.step
            )));
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

/// Input of `deload`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeloadConfig {
    /// Turbine model; the reference rotor when absent.
    #[serde(default)]
    pub aero: Option<TurbineAeroModel>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Power base (VA); the reference machine rating when absent.
    #[serde(default)]
    pub s_b: Option<f64>,
    #[serde(default = "default_wind")]
    pub wind: WindRange,
}

fn default_fraction() -> f64 {
    reference::DELOAD_FRACTION
}

fn default_wind() -> WindRange {
    WindRange { start: 1.0, stop: 30.0, step: 0.5 }
}

impl Default for DeloadConfig {
    fn default() -> Self {
        Self { aero: None, fraction: default_fraction(), s_b: None, wind: default_wind() }
    }
}

impl DeloadConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        parse_toml(&read(path)?, &path.display().to_string())
    }
}

/// Scenarios shipped with the tool, by name.
pub const BUNDLED_SCENARIOS: [(&str, &str); 4] = [
    ("scenario1_local_services", include_str!("../scenarios/scenario1_local_services.toml")),
    ("scenario2_short_circuit", include_str!("../scenarios/scenario2_short_circuit.toml")),
    ("scenario3_frequency_services", include_str!("../scenarios/scenario3_frequency_services.toml")),
    ("scenario4_baseline_comparison", include_str!("../scenarios/scenario4_baseline_comparison.toml")),
];

pub fn bundled_scenario(name: &str) -> Option<Result<Scenario, CliError>> {
    BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(n, s)| parse_scenario(s, n))
}

/// Scenario from a file path, or a bundled scenario by name.
pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return parse_scenario(&read(path)?, arg);
    }
    bundled_scenario(arg).unwrap_or_else(|| Err(CliError::Config(format!("no scenario file or bundled scenario `{arg}`"))))
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let sc: Scenario = parse_toml(text, origin)?;
    sc.validate()?;
    Ok(sc)
}

pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Runtime(format!("cannot serialize configuration: {e}")))
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
