//! Controller files and run manifests.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use ppm_control::control_model::WeightConfig;
use ppm_control::hinf::{CertificateReport, SynthesisOptions};
use ppm_control::sim::{CoordinatedGains, SimModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{read, ParameterFile};
use crate::CliError;

pub const CONTROLLER_FORMAT: &str = "ppm-controller";
pub const CONTROLLER_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form of `value`.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("configuration types serialize to JSON"))
}

/// Row-major gain matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl GainMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, CliError> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(CliError::Config(format!("gain matrix is not {}x{}", self.rows, self.cols)));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
    }
}

/// Everything the hash covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerBody {
    pub format: String,
    pub version: u32,
    pub plant: ParameterFile,
    pub wind_speed: f64,
    pub weight: WeightConfig,
    pub synthesis: SynthesisOptions,
    pub gamma: f64,
    pub certificate: CertificateReport,
    pub gain: GainMatrix,
}

/// A certified state-feedback controller bound to the plant it was
/// designed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    #[serde(flatten)]
    pub body: ControllerBody,
    pub sha256: String,
}

impl ControllerFile {
    pub fn new(body: ControllerBody) -> Self {
        let sha256 = canonical_hash(&body);
        Self { body, sha256 }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller file serializes")
    }

    /// Parses and checks format, version and integrity.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let f: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("controller file: {e}")))?;
        if f.body.format != CONTROLLER_FORMAT || f.body.version != CONTROLLER_VERSION {
            return Err(CliError::Config(format!(
                "unsupported controller file {} v{}",
                f.body.format, f.body.version
            )));
        }
        let h = canonical_hash(&f.body);
        if h != f.sha256 {
            return Err(CliError::Config(format!("controller file hash mismatch: stored {}, content {h}", f.sha256)));
        }
        f.body.gain.to_matrix()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read(path)?).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn gains(&self) -> Result<CoordinatedGains, CliError> {
        Ok(CoordinatedGains { k: self.body.gain.to_matrix()?, weight: self.body.weight })
    }

    pub fn model(&self) -> Result<SimModel, CliError> {
        self.body.plant.to_model()
    }
}

/// Provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub parameter_set: String,
    pub parameter_sha256: String,
    pub controller_sha256: Option<String>,
    pub scheme: Option<String>,
    pub dt: Option<f64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, plant: &ParameterFile) -> Self {
        Self {
            command: command.into(),
            config_sha256: canonical_hash(config),
            parameter_set: plant.version.clone(),
            parameter_sha256: canonical_hash(plant),
            controller_sha256: None,
            scheme: None,
            dt: None,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            toolkit_version: TOOLKIT_VERSION.into(),
        }
    }

    /// Equal in everything but the timestamp.
    pub fn same_run(&self, other: &Self) -> bool {
        Self { timestamp: 0, ..self.clone() } == Self { timestamp: 0, ..other.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
