//! The frozen reference parameter set: an 8 MW PMSG pair on a 55 GW grid.
//!
//! Values are typical per-unit figures for multi-megawatt direct-drive
//! machines; they are what the bundled scenarios and the acceptance suite
//! run against. Bump [`PARAMETER_SET_VERSION`] whenever anything changes.

use crate::network::StarNetwork;
use crate::params::{BaseQuantities, GridEquivalentParams, PlantParams, PmsgParams};
use crate::plant::PmsgSetpoint;
use crate::services::{deload_point, DeloadPoint, TurbineAeroModel};

pub const PARAMETER_SET_VERSION: &str = "ref-8mw-v1";

/// Rated power of one machine (W); also the per-unit power base.
pub const RATED_POWER_W: f64 = 8.0e6;
/// Total grid load represented by the grid equivalent (W).
pub const GRID_LOAD_W: f64 = 55.0e9;
/// Load step of the frequency scenario (W).
pub const LOAD_STEP_W: f64 = 10.0e6;

/// Electrical setpoint of each machine at the deloaded operating point.
pub const P_REF: f64 = 0.6527;
pub const Q_REF: f64 = 0.0;
pub const VDC_REF: f64 = 2.5;

pub fn base() -> BaseQuantities {
    let omega_fb = 2.0 * std::f64::consts::PI * 50.0;
    BaseQuantities { omega_fb, omega_b: omega_fb / 4.0, s_b: RATED_POWER_W }
}

pub fn pmsg() -> PmsgParams {
    PmsgParams {
        r1f: 0.005,
        l1f: 0.15,
        r2f: 0.005,
        l2f: 0.05,
        cf: 0.1,
        rs: 0.01,
        ls: 0.4,
        cdc: 4.0,
        h_t: 6.0,
        d_l: 0.005,
        pole_pairs: 4,
        psi_f: 1.0,
        n: 1.0,
        tau_c: 0.2,
        beta_min: 0.0,
        beta_max: 20.0,
        dbeta_min: -10.0,
        dbeta_max: 10.0,
    }
}

pub fn network() -> StarNetwork {
    StarNetwork { v: 1.0, x_inf: 0.02, x_1: 0.3, x_2: 0.3 }
}

pub fn gde() -> GridEquivalentParams {
    let p_l = GRID_LOAD_W / RATED_POWER_W;
    GridEquivalentParams {
        h: 1000.0,
        d_u: 200.0,
        p_m_rest: p_l - 2.0 * P_REF,
        secondary_enabled: false,
        k_sec: 0.0,
    }
}

pub fn plant_params() -> PlantParams {
    PlantParams::new(base(), [pmsg(); 2], network(), gde()).expect("reference parameter set is valid")
}

/// Fraction of the available power held in reserve.
pub const DELOAD_FRACTION: f64 = 0.10;

pub fn aero() -> TurbineAeroModel {
    TurbineAeroModel {
        rho: 1.225,
        radius: 82.0,
        rotor_base_speed: 1.2,
        c: [0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068],
        lambda_min: 2.0,
        lambda_max: 16.0,
        beta_min: 0.0,
        beta_max: 30.0,
    }
}

/// Wind speed (m/s) at which the over-speed deloaded point delivers
/// `P_REF` plus the rotor friction loss.
pub fn reference_wind_speed() -> f64 {
    let a = aero();
    let (s_b, d_l) = (base().s_b, pmsg().d_l);
    let excess = |v: f64| {
        let p = deload_point(&a, v, DELOAD_FRACTION, s_b).expect("reference deload point exists");
        p.p_mdel - P_REF - d_l * p.omega_del * p.omega_del
    };
    let (mut lo, mut hi) = (4.0, 20.0);
    for _ in 0..100 {
        let m = 0.5 * (lo + hi);
        if excess(m) > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
    }
    0.5 * (lo + hi)
}

/// Deloaded operating point at the reference wind speed.
pub fn deload() -> DeloadPoint {
    deload_point(&aero(), reference_wind_speed(), DELOAD_FRACTION, base().s_b).expect("reference deload point exists")
}

/// Electrical setpoints at the deloaded over-speed rotor speed.
pub fn setpoints() -> [PmsgSetpoint; 2] {
    let w = deload().omega_del;
    [PmsgSetpoint { p_ref: P_REF, q_ref: Q_REF, vdc_ref: VDC_REF, rotor_speed: w }; 2]
}
