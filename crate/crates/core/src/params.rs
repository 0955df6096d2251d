//! Physical parameters of the two-PMSG control model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkCoupling, StarNetwork};

/// Per-unit bases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseQuantities {
    /// Electrical base speed (rad/s).
    pub omega_fb: f64,
    /// Mechanical base speed of the generator (rad/s).
    pub omega_b: f64,
    /// Base power (VA).
    pub s_b: f64,
}

impl BaseQuantities {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega_fb", self.omega_fb), ("omega_b", self.omega_b), ("s_b", self.s_b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("base quantity {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Parameters of one PMSG with its back-to-back converter and LCL filter
/// (per unit unless noted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmsgParams {
    pub r1f: f64,
    pub l1f: f64,
    pub r2f: f64,
    pub l2f: f64,
    pub cf: f64,
    pub rs: f64,
    pub ls: f64,
    pub cdc: f64,
    /// Turbine + generator inertia constant (s).
    pub h_t: f64,
    /// Friction damping, `Omega_b^2 * f / S_b`.
    pub d_l: f64,
    pub pole_pairs: u32,
    pub psi_f: f64,
    /// Transformer ratio (converter side / grid side).
    pub n: f64,
    /// Pitch servo time constant (s).
    pub tau_c: f64,
    /// Pitch limits (deg).
    pub beta_min: f64,
    pub beta_max: f64,
    /// Pitch rate limits (deg/s).
    pub dbeta_min: f64,
    pub dbeta_max: f64,
}

impl PmsgParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r1f", self.r1f),
            ("l1f", self.l1f),
            ("r2f", self.r2f),
            ("l2f", self.l2f),
            ("cf", self.cf),
            ("rs", self.rs),
            ("ls", self.ls),
            ("cdc", self.cdc),
            ("h_t", self.h_t),
            ("psi_f", self.psi_f),
            ("n", self.n),
            ("tau_c", self.tau_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("PMSG parameter {name} must be > 0")));
            }
        }
        if self.d_l < 0.0 {
            return Err(Error::InvalidParameter("PMSG damping d_l must be >= 0".into()));
        }
        if self.pole_pairs == 0 {
            return Err(Error::InvalidParameter("pole_pairs must be >= 1".into()));
        }
        if self.beta_min >= self.beta_max {
            return Err(Error::InvalidParameter("pitch limits need beta_min < beta_max".into()));
        }
        if !(self.dbeta_min < 0.0 && self.dbeta_max > 0.0) {
            return Err(Error::InvalidParameter("pitch rate limits need dbeta_min < 0 < dbeta_max".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn p(&self) -> f64 {
        f64::from(self.pole_pairs)
    }
}

/// Single-inertia equivalent of the rest of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEquivalentParams {
    /// Equivalent inertia constant on the PMSG power base (s).
    pub h: f64,
    /// Damping factor `D_u = omega_b^2 D / S_b` (pu).
    pub d_u: f64,
    /// Constant generation of the rest of the system (pu).
    pub p_m_rest: f64,
    #[serde(default)]
    pub secondary_enabled: bool,
    /// Frequency-restoring integrator gain (pu/s).
    #[serde(default)]
    pub k_sec: f64,
}

impl GridEquivalentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter("grid inertia H must be > 0".into()));
        }
        if !(self.d_u >= 0.0) {
            return Err(Error::InvalidParameter("grid damping D_u must be >= 0".into()));
        }
        if self.secondary_enabled && !(self.k_sec > 0.0) {
            return Err(Error::InvalidParameter("k_sec must be > 0 when the secondary integrator is enabled".into()));
        }
        Ok(())
    }
}

/// Everything the nonlinear derivative map needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    pub base: BaseQuantities,
    pub pmsg: [PmsgParams; 2],
    pub network: NetworkCoupling,
    pub gde: GridEquivalentParams,
}

impl PlantParams {
    pub fn new(
        base: BaseQuantities,
        pmsg: [PmsgParams; 2],
        topology: StarNetwork,
        gde: GridEquivalentParams,
    ) -> Result<Self> {
        let network = NetworkCoupling::from_topology(topology, [pmsg[0].n, pmsg[1].n])?;
        let p = Self { base, pmsg, network, gde };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        for pm in &self.pmsg {
            pm.validate()?;
        }
        self.gde.validate()?;
        self.network.topology.validate()?;
        if self.network.turns != [self.pmsg[0].n, self.pmsg[1].n] {
            return Err(Error::InvalidParameter(
                "network turns ratios differ from the PMSG transformer ratios".into(),
            ));
        }
        self.network.check_consistency(1e-9)
    }
}
