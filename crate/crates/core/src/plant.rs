//! Nonlinear averaged model of two grid-connected PMSGs, their LCL filters
//! and DC links, coupled through the reduced network to a single-inertia
//! grid equivalent.
//!
//! Note: in the PMSG2 converter-current rows the resistive term uses the
//! PMSG2 current `i_12d`/`i_12q` (the symmetric counterpart of PMSG1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PlantParams, PmsgParams};

/// Number of physical states (10 per PMSG plus the grid frequency).
pub const N_STATES: usize = 21;
/// Duty-ratio inputs (4 per PMSG).
pub const N_INPUTS: usize = 8;
/// Disturbances `P_m1, P_m2, P_L`.
pub const N_DISTURBANCES: usize = 3;
/// Outputs `Q_1, P_1, v_DC1, Q_2, P_2, v_DC2`.
pub const N_OUTPUTS: usize = 6;
pub const STATES_PER_PMSG: usize = 10;

/// Offsets inside a PMSG block of the state vector.
pub mod idx {
    pub const I1D: usize = 0;
    pub const I1Q: usize = 1;
    pub const I2D: usize = 2;
    pub const I2Q: usize = 3;
    pub const VCFD: usize = 4;
    pub const VCFQ: usize = 5;
    pub const ISD: usize = 6;
    pub const ISQ: usize = 7;
    pub const VDC: usize = 8;
    pub const OMEGA: usize = 9;
    /// Grid frequency (absolute index).
    pub const OMEGA_F: usize = 20;

    /// Absolute index of `field` for PMSG `k` (0-based).
    #[inline]
    pub const fn at(k: usize, field: usize) -> usize {
        k * super::STATES_PER_PMSG + field
    }

    /// Offsets inside a PMSG block of the input vector.
    pub const B1D: usize = 0;
    pub const B1Q: usize = 1;
    pub const BSD: usize = 2;
    pub const BSQ: usize = 3;

    #[inline]
    pub const fn input(k: usize, field: usize) -> usize {
        k * 4 + field
    }
}

/// Names of the 21 physical states in vector order.
pub const STATE_NAMES: [&str; N_STATES] = [
    "i11d", "i11q", "i21d", "i21q", "vcf1d", "vcf1q", "is1d", "is1q", "vdc1", "Omega1",
    "i12d", "i12q", "i22d", "i22q", "vcf2d", "vcf2q", "is2d", "is2q", "vdc2", "Omega2",
    "omega_f",
];
pub const INPUT_NAMES: [&str; N_INPUTS] =
    ["beta11d", "beta11q", "betas1d", "betas1q", "beta12d", "beta12q", "betas2d", "betas2q"];
pub const OUTPUT_NAMES: [&str; N_OUTPUTS] = ["Q1", "P1", "vdc1", "Q2", "P2", "vdc2"];

/// Physical state plus the optional grid-equivalent phase and secondary
/// integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: [f64; N_STATES],
    #[serde(default)]
    pub theta_f: f64,
    #[serde(default)]
    pub zeta_sec: f64,
}

impl Default for PlantState {
    fn default() -> Self {
        Self { x: [0.0; N_STATES], theta_f: 0.0, zeta_sec: 0.0 }
    }
}

impl PlantState {
    pub fn from_vector(x: [f64; N_STATES]) -> Self {
        Self { x, ..Default::default() }
    }

    #[inline]
    pub fn get(&self, k: usize, field: usize) -> f64 {
        self.x[idx::at(k, field)]
    }

    #[inline]
    pub fn omega_f(&self) -> f64 {
        self.x[idx::OMEGA_F]
    }

    /// Grid-side currents `(i_21d, i_21q, i_22d, i_22q)`.
    #[inline]
    pub fn grid_currents(&self) -> [f64; 4] {
        [
            self.x[idx::at(0, idx::I2D)],
            self.x[idx::at(0, idx::I2Q)],
            self.x[idx::at(1, idx::I2D)],
            self.x[idx::at(1, idx::I2Q)],
        ]
    }
}

/// Converter duty-ratio components, `[beta_11d, beta_11q, beta_s1d, beta_s1q,
/// beta_12d, beta_12q, beta_s2d, beta_s2q]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput(pub [f64; N_INPUTS]);

impl ControlInput {
    /// Clamps every component to the modulation limit `[-1, 1]`; returns
    /// `true` when anything was clipped.
    pub fn saturate(&mut self) -> bool {
        let mut hit = false;
        for b in self.0.iter_mut() {
            if *b > 1.0 {
                *b = 1.0;
                hit = true;
            } else if *b < -1.0 {
                *b = -1.0;
                hit = true;
            }
        }
        hit
    }
}

/// Mechanical powers of the turbines and total grid load (pu).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceInput {
    pub p_m: [f64; 2],
    pub p_l: f64,
}

impl DisturbanceInput {
    pub fn to_array(&self) -> [f64; N_DISTURBANCES] {
        [self.p_m[0], self.p_m[1], self.p_l]
    }

    pub fn from_array(w: [f64; N_DISTURBANCES]) -> Self {
        Self { p_m: [w[0], w[1]], p_l: w[2] }
    }
}

/// `[Q_1, P_1, v_DC1, Q_2, P_2, v_DC2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputVector(pub [f64; N_OUTPUTS]);

/// Blade pitch angles (deg).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PitchState(pub [f64; 2]);

/// Time derivative of the full plant state.
pub fn pmsg_derivatives(
    params: &PlantParams,
    s: &PlantState,
    u: &ControlInput,
    w: &DisturbanceInput,
) -> Result<PlantState> {
    let wb = params.base.omega_fb;
    let ob = params.base.omega_b;
    let x = &s.x;
    let wf = x[idx::OMEGA_F];
    let i2 = s.grid_currents();
    let mut d = [0.0; N_STATES];

    for k in 0..2 {
        let pm: &PmsgParams = &params.pmsg[k];
        let o = k * STATES_PER_PMSG;
        let i1d = x[o + idx::I1D];
        let i1q = x[o + idx::I1Q];
        let i2d = x[o + idx::I2D];
        let i2q = x[o + idx::I2Q];
        let vcd = x[o + idx::VCFD];
        let vcq = x[o + idx::VCFQ];
        let isd = x[o + idx::ISD];
        let isq = x[o + idx::ISQ];
        let vdc = x[o + idx::VDC];
        let om = x[o + idx::OMEGA];
        if !(om > 0.0) {
            return Err(Error::NonPhysicalState(format!("rotor speed of PMSG{} is {om}", k + 1)));
        }
        if !(vdc > 0.0) {
            return Err(Error::NonPhysicalState(format!("DC-link voltage of PMSG{} is {vdc}", k + 1)));
        }
        let ui = idx::input(k, 0);
        let (b1d, b1q, bsd, bsq) = (u.0[ui], u.0[ui + 1], u.0[ui + 2], u.0[ui + 3]);
        let (vrd, vrq) = params.network.terminal_voltage(k, i2);
        let p = pm.p();
        let g = wb * 3.0 / (4.0 * pm.cdc);

        d[o + idx::I1D] = -wb * pm.r1f * i1d / pm.l1f + wb * wf * i1q - wb * vcd / pm.l1f
            + 0.5 * wb * b1d * vdc / pm.l1f;
        d[o + idx::I1Q] = -wb * pm.r1f * i1q / pm.l1f - wb * wf * i1d - wb * vcq / pm.l1f
            + 0.5 * wb * b1q * vdc / pm.l1f;
        d[o + idx::I2D] = -wb * pm.r2f * i2d / pm.l2f + wb * wf * i2q + wb * vcd / pm.l2f
            - wb / pm.l2f / pm.n * vrd;
        d[o + idx::I2Q] = -wb * pm.r2f * i2q / pm.l2f - wb * wf * i2d + wb * vcq / pm.l2f
            - wb / pm.l2f / pm.n * vrq;
        d[o + idx::VCFD] = wb * i1d / pm.cf - wb * i2d / pm.cf + wb * wf * vcq;
        d[o + idx::VCFQ] = wb * i1q / pm.cf - wb * i2q / pm.cf - wb * wf * vcd;
        d[o + idx::ISD] = -wb * pm.rs * isd / pm.ls + ob * p * om * isq - 0.5 * wb * bsd * vdc / pm.ls;
        d[o + idx::ISQ] = -wb * pm.rs * isq / pm.ls - ob * p * om * isd + ob * p * pm.psi_f * om / pm.ls
            - 0.5 * wb * bsq * vdc / pm.ls;
        d[o + idx::VDC] = -g * b1d * i1d - g * b1q * i1q + g * bsd * isd + g * bsq * isq;
        d[o + idx::OMEGA] = w.p_m[k] / (2.0 * pm.h_t * om)
            - (ob / wb) * 1.5 * p * pm.psi_f * isq / (2.0 * pm.h_t)
            - pm.d_l * om / (2.0 * pm.h_t);
    }

    let gde = &params.gde;
    let p_e = params.network.injected_power(i2);
    let zeta = if gde.secondary_enabled { s.zeta_sec } else { 0.0 };
    let dw = wf - 1.0;
    d[idx::OMEGA_F] = ((gde.p_m_rest - w.p_l) + zeta + p_e - gde.d_u * dw) / (2.0 * gde.h);

    Ok(PlantState {
        x: d,
        theta_f: wb * wf,
        zeta_sec: if gde.secondary_enabled { -gde.k_sec * dw } else { 0.0 },
    })
}

/// Power delivered by both PMSGs to the grid equivalent bus.
pub fn injected_power(state: &PlantState, net: &crate::network::NetworkCoupling) -> f64 {
    net.injected_power(state.grid_currents())
}

/// Active power at each generator.
pub fn active_power(state: &PlantState, params: &PlantParams) -> [f64; 2] {
    let ratio = params.base.omega_b / params.base.omega_fb;
    let mut out = [0.0; 2];
    for (k, slot) in out.iter_mut().enumerate() {
        let pm = &params.pmsg[k];
        *slot = 1.5 * ratio * pm.p() * pm.psi_f * state.get(k, idx::ISQ) * state.get(k, idx::OMEGA);
    }
    out
}

/// Reactive power from the converter-side current and filter-capacitor voltage.
pub fn reactive_power(state: &PlantState) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = state.get(k, idx::I1D) * state.get(k, idx::VCFQ)
            - state.get(k, idx::I1Q) * state.get(k, idx::VCFD);
    }
    out
}

pub fn outputs(state: &PlantState, params: &PlantParams) -> OutputVector {
    let p = active_power(state, params);
    let q = reactive_power(state);
    OutputVector([
        q[0],
        p[0],
        state.get(0, idx::VDC),
        q[1],
        p[1],
        state.get(1, idx::VDC),
    ])
}

/// Saturated pitch servo rates (deg/s). A rate that would push an angle
/// already at a position limit further out is zeroed.
pub fn pitch_dynamics(pitch: &PitchState, beta_ref: [f64; 2], params: &[PmsgParams; 2]) -> [f64; 2] {
    let mut rate = [0.0; 2];
    for k in 0..2 {
        let pm = &params[k];
        let beta = pitch.0[k];
        let mut r = ((beta_ref[k] - beta) / pm.tau_c).clamp(pm.dbeta_min, pm.dbeta_max);
        if (beta >= pm.beta_max && r > 0.0) || (beta <= pm.beta_min && r < 0.0) {
            r = 0.0;
        }
        rate[k] = r;
    }
    rate
}

impl PitchState {
    /// Explicit step of the servo with position clamping.
    pub fn step(&mut self, beta_ref: [f64; 2], params: &[PmsgParams; 2], dt: f64) {
        let rate = pitch_dynamics(self, beta_ref, params);
        for k in 0..2 {
            self.0[k] = (self.0[k] + dt * rate[k]).clamp(params[k].beta_min, params[k].beta_max);
        }
    }
}

/// Instantaneous three-phase voltages of the grid equivalent bus.
pub fn gde_bus_voltage(theta_f: f64, v: f64) -> [f64; 3] {
    use std::f64::consts::PI;
    [
        v * theta_f.sin(),
        v * (theta_f - 2.0 * PI / 3.0).sin(),
        v * (theta_f + 2.0 * PI / 3.0).sin(),
    ]
}

/// Analytic Jacobians `(df/dx, df/du, df/dw)` of the 21 physical states.
pub fn jacobians(
    params: &PlantParams,
    s: &PlantState,
    u: &ControlInput,
    w: &DisturbanceInput,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let wb = params.base.omega_fb;
    let ob = params.base.omega_b;
    let x = &s.x;
    let wf = x[idx::OMEGA_F];
    let mut a = DMatrix::zeros(N_STATES, N_STATES);
    let mut b1 = DMatrix::zeros(N_STATES, N_INPUTS);
    let mut b2 = DMatrix::zeros(N_STATES, N_DISTURBANCES);
    let net = &params.network;
    let i2_cols = [idx::at(0, idx::I2D), idx::at(0, idx::I2Q), idx::at(1, idx::I2D), idx::at(1, idx::I2Q)];

    for k in 0..2 {
        let pm = &params.pmsg[k];
        let o = k * STATES_PER_PMSG;
        let r = |f: usize| o + f;
        let i1d = x[r(idx::I1D)];
        let i1q = x[r(idx::I1Q)];
        let i2d = x[r(idx::I2D)];
        let i2q = x[r(idx::I2Q)];
        let vcd = x[r(idx::VCFD)];
        let vcq = x[r(idx::VCFQ)];
        let isd = x[r(idx::ISD)];
        let isq = x[r(idx::ISQ)];
        let vdc = x[r(idx::VDC)];
        let om = x[r(idx::OMEGA)];
        let ui = idx::input(k, 0);
        let (b1d, b1q, bsd, bsq) = (u.0[ui], u.0[ui + 1], u.0[ui + 2], u.0[ui + 3]);
        let p = pm.p();
        let g = wb * 3.0 / (4.0 * pm.cdc);

        // converter-side currents
        let row = r(idx::I1D);
        a[(row, r(idx::I1D))] = -wb * pm.r1f / pm.l1f;
        a[(row, r(idx::I1Q))] = wb * wf;
        a[(row, r(idx::VCFD))] = -wb / pm.l1f;
        a[(row, r(idx::VDC))] = 0.5 * wb * b1d / pm.l1f;
        a[(row, idx::OMEGA_F)] = wb * i1q;
        b1[(row, ui + idx::B1D)] = 0.5 * wb * vdc / pm.l1f;

        let row = r(idx::I1Q);
        a[(row, r(idx::I1Q))] = -wb * pm.r1f / pm.l1f;
        a[(row, r(idx::I1D))] = -wb * wf;
        a[(row, r(idx::VCFQ))] = -wb / pm.l1f;
        a[(row, r(idx::VDC))] = 0.5 * wb * b1q / pm.l1f;
        a[(row, idx::OMEGA_F)] = -wb * i1d;
        b1[(row, ui + idx::B1Q)] = 0.5 * wb * vdc / pm.l1f;

        // grid-side currents, including the network coupling
        let kn = wb / pm.l2f / pm.n;
        for (axis, field) in [(0, idx::I2D), (1, idx::I2Q)] {
            let row = r(field);
            let coeff = &net.terminal[2 * k + axis];
            for (j, &col) in i2_cols.iter().enumerate() {
                a[(row, col)] -= kn * coeff[j];
            }
        }
        let row = r(idx::I2D);
        a[(row, r(idx::I2D))] += -wb * pm.r2f / pm.l2f;
        a[(row, r(idx::I2Q))] += wb * wf;
        a[(row, r(idx::VCFD))] = wb / pm.l2f;
        a[(row, idx::OMEGA_F)] = wb * i2q;
        let row = r(idx::I2Q);
        a[(row, r(idx::I2Q))] += -wb * pm.r2f / pm.l2f;
        a[(row, r(idx::I2D))] += -wb * wf;
        a[(row, r(idx::VCFQ))] = wb / pm.l2f;
        a[(row, idx::OMEGA_F)] = -wb * i2d;

        // filter capacitor
        let row = r(idx::VCFD);
        a[(row, r(idx::I1D))] = wb / pm.cf;
        a[(row, r(idx::I2D))] = -wb / pm.cf;
        a[(row, r(idx::VCFQ))] = wb * wf;
        a[(row, idx::OMEGA_F)] = wb * vcq;
        let row = r(idx::VCFQ);
        a[(row, r(idx::I1Q))] = wb / pm.cf;
        a[(row, r(idx::I2Q))] = -wb / pm.cf;
        a[(row, r(idx::VCFD))] = -wb * wf;
        a[(row, idx::OMEGA_F)] = -wb * vcd;

        // stator
        let row = r(idx::ISD);
        a[(row, r(idx::ISD))] = -wb * pm.rs / pm.ls;
        a[(row, r(idx::ISQ))] = ob * p * om;
        a[(row, r(idx::OMEGA))] = ob * p * isq;
        a[(row, r(idx::VDC))] = -0.5 * wb * bsd / pm.ls;
        b1[(row, ui + idx::BSD)] = -0.5 * wb * vdc / pm.ls;
        let row = r(idx::ISQ);
        a[(row, r(idx::ISQ))] = -wb * pm.rs / pm.ls;
        a[(row, r(idx::ISD))] = -ob * p * om;
        a[(row, r(idx::OMEGA))] = -ob * p * isd + ob * p * pm.psi_f / pm.ls;
        a[(row, r(idx::VDC))] = -0.5 * wb * bsq / pm.ls;
        b1[(row, ui + idx::BSQ)] = -0.5 * wb * vdc / pm.ls;

        // DC link
        let row = r(idx::VDC);
        a[(row, r(idx::I1D))] = -g * b1d;
        a[(row, r(idx::I1Q))] = -g * b1q;
        a[(row, r(idx::ISD))] = g * bsd;
        a[(row, r(idx::ISQ))] = g * bsq;
        b1[(row, ui + idx::B1D)] = -g * i1d;
        b1[(row, ui + idx::B1Q)] = -g * i1q;
        b1[(row, ui + idx::BSD)] = g * isd;
        b1[(row, ui + idx::BSQ)] = g * isq;

        // rotor
        let row = r(idx::OMEGA);
        let h2 = 2.0 * pm.h_t;
        a[(row, r(idx::OMEGA))] = -w.p_m[k] / (h2 * om * om) - pm.d_l / h2;
        a[(row, r(idx::ISQ))] = -(ob / wb) * 1.5 * p * pm.psi_f / h2;
        b2[(row, k)] = 1.0 / (h2 * om);
    }

    let h2 = 2.0 * params.gde.h;
    a[(idx::OMEGA_F, idx::OMEGA_F)] = -params.gde.d_u / h2;
    for (j, &col) in i2_cols.iter().enumerate() {
        a[(idx::OMEGA_F, col)] = net.power[j] / h2;
    }
    b2[(idx::OMEGA_F, 2)] = -1.0 / h2;
    (a, b1, b2)
}

/// Jacobian of the output vector with respect to the 21 physical states.
pub fn output_jacobian(params: &PlantParams, s: &PlantState) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(N_OUTPUTS, N_STATES);
    let ratio = params.base.omega_b / params.base.omega_fb;
    for k in 0..2 {
        let pm = &params.pmsg[k];
        let row_q = 3 * k;
        c[(row_q, idx::at(k, idx::I1D))] = s.get(k, idx::VCFQ);
        c[(row_q, idx::at(k, idx::VCFQ))] = s.get(k, idx::I1D);
        c[(row_q, idx::at(k, idx::I1Q))] = -s.get(k, idx::VCFD);
        c[(row_q, idx::at(k, idx::VCFD))] = -s.get(k, idx::I1Q);
        let kp = 1.5 * ratio * pm.p() * pm.psi_f;
        c[(row_q + 1, idx::at(k, idx::ISQ))] = kp * s.get(k, idx::OMEGA);
        c[(row_q + 1, idx::at(k, idx::OMEGA))] = kp * s.get(k, idx::ISQ);
        c[(row_q + 2, idx::at(k, idx::VDC))] = 1.0;
    }
    c
}

/// Per-PMSG steady-state targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmsgSetpoint {
    pub p_ref: f64,
    pub q_ref: f64,
    pub vdc_ref: f64,
    /// Rotor speed (pu) fixed by the turbine operating mode.
    pub rotor_speed: f64,
}

/// A consistent `(state, input, disturbance)` triple with zero derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub state: PlantState,
    pub input: ControlInput,
    pub disturbance: DisturbanceInput,
}

impl OperatingPoint {
    pub fn residual(&self, params: &PlantParams) -> Result<f64> {
        let d = pmsg_derivatives(params, &self.state, &self.input, &self.disturbance)?;
        Ok(d.x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    pub fn outputs(&self, params: &PlantParams) -> OutputVector {
        outputs(&self.state, params)
    }
}

const N_UNKNOWNS: usize = N_STATES + N_INPUTS + N_DISTURBANCES;

/// Solves for the equilibrium meeting `setpoints` with `i_sd = 0`,
/// `omega_f = 1` and the grid load balancing the generation.
pub fn find_equilibrium(setpoints: &[PmsgSetpoint; 2], params: &PlantParams) -> Result<OperatingPoint> {
    for (k, sp) in setpoints.iter().enumerate() {
        if !(sp.vdc_ref > 0.0 && sp.rotor_speed > 0.0) {
            return Err(Error::InfeasibleSetpoint(format!(
                "PMSG{} needs positive v_DC and rotor speed setpoints",
                k + 1
            )));
        }
    }
    let mut z = initial_guess(setpoints, params);
    let mut f = residual_vector(&z, setpoints, params)?;
    let mut norm = f.amax();
    let mut iters = 0;
    while norm > 1e-13 {
        iters += 1;
        if iters > 60 {
            return Err(Error::NoConvergence(format!("residual {norm:.3e} after 60 Newton steps")));
        }
        let jac = residual_jacobian(&z, setpoints, params);
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::NoConvergence("singular equilibrium Jacobian".into()))?;
        let mut alpha = 1.0;
        loop {
            let trial = &z + alpha * &step;
            if let Ok(ft) = residual_vector(&trial, setpoints, params) {
                let nt = ft.amax();
                if nt < norm || (nt <= 1e-13) {
                    z = trial;
                    f = ft;
                    norm = nt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-8 {
                if norm < 1e-10 {
                    // Stalled at round-off level.
                    return finish(z);
                }
                return Err(Error::NoConvergence(format!("line search stalled at residual {norm:.3e}")));
            }
        }
    }
    finish(z)
}

fn finish(z: DVector<f64>) -> Result<OperatingPoint> {
    let op = unpack(&z);
    if let Some((i, b)) = op.input.0.iter().enumerate().find(|(_, b)| b.abs() > 1.0) {
        return Err(Error::InfeasibleSetpoint(format!(
            "duty ratio {} = {b:.4} exceeds the modulation limit",
            INPUT_NAMES[i]
        )));
    }
    Ok(op)
}

fn unpack(z: &DVector<f64>) -> OperatingPoint {
    let mut x = [0.0; N_STATES];
    x.copy_from_slice(&z.as_slice()[..N_STATES]);
    let mut u = [0.0; N_INPUTS];
    u.copy_from_slice(&z.as_slice()[N_STATES..N_STATES + N_INPUTS]);
    let w = &z.as_slice()[N_STATES + N_INPUTS..];
    OperatingPoint {
        state: PlantState::from_vector(x),
        input: ControlInput(u),
        disturbance: DisturbanceInput { p_m: [w[0], w[1]], p_l: w[2] },
    }
}

fn residual_vector(z: &DVector<f64>, sp: &[PmsgSetpoint; 2], params: &PlantParams) -> Result<DVector<f64>> {
    let op = unpack(z);
    let d = pmsg_derivatives(params, &op.state, &op.input, &op.disturbance)?;
    let y = outputs(&op.state, params).0;
    let mut f = DVector::zeros(N_UNKNOWNS);
    for i in 0..N_STATES {
        f[i] = d.x[i];
    }
    let mut r = N_STATES;
    for k in 0..2 {
        f[r] = y[3 * k] - sp[k].q_ref;
        f[r + 1] = y[3 * k + 1] - sp[k].p_ref;
        f[r + 2] = y[3 * k + 2] - sp[k].vdc_ref;
        f[r + 3] = op.state.get(k, idx::OMEGA) - sp[k].rotor_speed;
        f[r + 4] = op.state.get(k, idx::ISD);
        r += 5;
    }
    f[r] = op.state.omega_f() - 1.0;
    Ok(f)
}

fn residual_jacobian(z: &DVector<f64>, _sp: &[PmsgSetpoint; 2], params: &PlantParams) -> DMatrix<f64> {
    let op = unpack(z);
    let (a, b1, b2) = jacobians(params, &op.state, &op.input, &op.disturbance);
    let c = output_jacobian(params, &op.state);
    let mut j = DMatrix::zeros(N_UNKNOWNS, N_UNKNOWNS);
    j.view_mut((0, 0), (N_STATES, N_STATES)).copy_from(&a);
    j.view_mut((0, N_STATES), (N_STATES, N_INPUTS)).copy_from(&b1);
    j.view_mut((0, N_STATES + N_INPUTS), (N_STATES, N_DISTURBANCES)).copy_from(&b2);
    let mut r = N_STATES;
    for k in 0..2 {
        for m in 0..3 {
            for col in 0..N_STATES {
                j[(r + m, col)] = c[(3 * k + m, col)];
            }
        }
        j[(r + 3, idx::at(k, idx::OMEGA))] = 1.0;
        j[(r + 4, idx::at(k, idx::ISD))] = 1.0;
        r += 5;
    }
    j[(r, idx::OMEGA_F)] = 1.0;
    j
}

fn initial_guess(sp: &[PmsgSetpoint; 2], params: &PlantParams) -> DVector<f64> {
    let mut z = DVector::zeros(N_UNKNOWNS);
    let v = params.network.topology.v;
    let ratio = params.base.omega_b / params.base.omega_fb;
    let mut p_e = 0.0;
    for k in 0..2 {
        let pm = &params.pmsg[k];
        let o = k * STATES_PER_PMSG;
        let om = sp[k].rotor_speed;
        let vdc = sp[k].vdc_ref;
        let kp = 1.5 * ratio * pm.p() * pm.psi_f;
        let isq = sp[k].p_ref / (kp * om);
        let i2d = pm.n * sp[k].p_ref / (1.5 * v);
        let i2q = -pm.n * sp[k].q_ref / v;
        z[o + idx::I1D] = i2d;
        z[o + idx::I1Q] = i2q;
        z[o + idx::I2D] = i2d;
        z[o + idx::I2Q] = i2q;
        z[o + idx::VCFD] = pm.n * v;
        z[o + idx::VCFQ] = 0.0;
        z[o + idx::ISQ] = isq;
        z[o + idx::VDC] = vdc;
        z[o + idx::OMEGA] = om;
        let ui = N_STATES + idx::input(k, 0);
        // converter voltage ~ capacitor voltage + j*L1*i1
        z[ui + idx::B1D] = 2.0 * (pm.n * v - pm.l1f * i2q) / vdc;
        z[ui + idx::B1Q] = 2.0 * (pm.l1f * i2d) / vdc;
        let we = params.base.omega_b * pm.p() * om / params.base.omega_fb;
        z[ui + idx::BSD] = 2.0 * (we * pm.ls * isq) / vdc;
        z[ui + idx::BSQ] = 2.0 * (we * pm.psi_f - pm.rs * isq) / vdc;
        z[N_STATES + N_INPUTS + k] = sp[k].p_ref + pm.d_l * om * om;
        p_e += sp[k].p_ref;
    }
    z[idx::OMEGA_F] = 1.0;
    z[N_STATES + N_INPUTS + 2] = params.gde.p_m_rest + p_e;
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn balanced_grid_has_zero_frequency_derivative() {
        let params = reference::plant_params();
        let mut s = PlantState::default();
        for k in 0..2 {
            s.x[idx::at(k, idx::VDC)] = 1.0;
            s.x[idx::at(k, idx::OMEGA)] = 1.0;
        }
        s.x[idx::OMEGA_F] = 1.0;
        let w = DisturbanceInput { p_m: [0.0; 2], p_l: params.gde.p_m_rest };
        let d = pmsg_derivatives(&params, &s, &ControlInput::default(), &w).unwrap();
        assert_eq!(d.x[idx::OMEGA_F], 0.0);
    }

    #[test]
    fn only_capacitor_term_survives_with_zero_currents() {
        let params = reference::plant_params();
        let mut s = PlantState::default();
        for k in 0..2 {
            s.x[idx::at(k, idx::VDC)] = 1.0;
            s.x[idx::at(k, idx::OMEGA)] = 1.0;
            s.x[idx::at(k, idx::VCFD)] = 0.7 + 0.1 * k as f64;
        }
        s.x[idx::OMEGA_F] = 1.0;
        let d = pmsg_derivatives(&params, &s, &ControlInput::default(), &DisturbanceInput::default()).unwrap();
        for k in 0..2 {
            let pm = &params.pmsg[k];
            let expect = -params.base.omega_fb * s.get(k, idx::VCFD) / pm.l1f;
            assert_eq!(d.x[idx::at(k, idx::I1D)], expect);
        }
    }

    #[test]
    fn non_physical_states_are_rejected() {
        let params = reference::plant_params();
        let mut s = PlantState::default();
        s.x[idx::at(0, idx::VDC)] = 1.0;
        s.x[idx::at(1, idx::VDC)] = 1.0;
        s.x[idx::at(1, idx::OMEGA)] = 1.0;
        let r = pmsg_derivatives(&params, &s, &ControlInput::default(), &DisturbanceInput::default());
        assert!(matches!(r, Err(Error::NonPhysicalState(_))));
        s.x[idx::at(0, idx::OMEGA)] = 1.0;
        s.x[idx::at(1, idx::VDC)] = -0.1;
        let r = pmsg_derivatives(&params, &s, &ControlInput::default(), &DisturbanceInput::default());
        assert!(matches!(r, Err(Error::NonPhysicalState(_))));
    }

    #[test]
    fn output_formulas() {
        let params = reference::plant_params();
        let mut s = PlantState::default();
        assert_eq!(active_power(&s, &params), [0.0, 0.0]);
        assert_eq!(injected_power(&s, &params.network), 0.0);
        s.x[idx::at(0, idx::I1D)] = 1.0;
        s.x[idx::at(0, idx::VCFQ)] = 0.5;
        assert_eq!(reactive_power(&s)[0], 0.5);
        s.x[idx::at(1, idx::I1D)] = 0.3;
        s.x[idx::at(1, idx::I1Q)] = 0.3;
        s.x[idx::at(1, idx::VCFD)] = 0.9;
        s.x[idx::at(1, idx::VCFQ)] = 0.9;
        assert_eq!(reactive_power(&s)[1], 0.0);
        let mut i = PlantState::default();
        i.x[idx::at(0, idx::I2D)] = 1.0;
        assert_eq!(injected_power(&i, &params.network), params.network.power[0]);
    }

    #[test]
    fn unit_active_power_substitution() {
        let mut params = reference::plant_params();
        params.base.omega_b = params.base.omega_fb;
        params.pmsg[0].pole_pairs = 1;
        params.pmsg[0].psi_f = 1.0;
        let mut s = PlantState::default();
        s.x[idx::at(0, idx::ISQ)] = 1.0;
        s.x[idx::at(0, idx::OMEGA)] = 1.0;
        assert!((active_power(&s, &params)[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn pitch_servo_limits() {
        let params = reference::plant_params().pmsg;
        let p = PitchState([5.0, 0.0]);
        assert_eq!(pitch_dynamics(&p, [5.0, 0.0], &params), [0.0, 0.0]);
        let p = PitchState([0.0, 0.0]);
        assert_eq!(pitch_dynamics(&p, [20.0, 0.0], &params)[0], 10.0);
        let mut p = PitchState([20.0, 20.0]);
        for _ in 0..100 {
            p.step([25.0, 25.0], &params, 0.01);
        }
        assert_eq!(p.0, [20.0, 20.0]);
    }

    #[test]
    fn three_phase_voltages() {
        let v = gde_bus_voltage(std::f64::consts::FRAC_PI_2, 1.0);
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] + 0.5).abs() < 1e-15);
        assert!((v[2] + 0.5).abs() < 1e-15);
        let v0 = gde_bus_voltage(0.0, 2.0);
        let s = (2.0 * std::f64::consts::PI / 3.0).sin();
        assert_eq!(v0[0], 0.0);
        assert!((v0[1] + 2.0 * s).abs() < 1e-15);
        assert!((v0[2] - 2.0 * s).abs() < 1e-15);
    }

    #[test]
    fn reference_equilibrium() {
        let params = reference::plant_params();
        let sp = reference::setpoints();
        let op = find_equilibrium(&sp, &params).unwrap();
        assert!(op.residual(&params).unwrap() < 1e-9);
        let y = op.outputs(&params).0;
        for k in 0..2 {
            assert!((y[3 * k] - sp[k].q_ref).abs() < 1e-6);
            assert!((y[3 * k + 1] - 0.6527).abs() < 1e-6);
            assert!((y[3 * k + 2] - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_power_equilibrium_has_small_currents() {
        let params = reference::plant_params();
        let mut sp = reference::setpoints();
        for s in sp.iter_mut() {
            s.p_ref = 0.0;
            s.q_ref = 0.0;
        }
        let op = find_equilibrium(&sp, &params).unwrap();
        assert!(op.residual(&params).unwrap() < 1e-9);
        for k in 0..2 {
            assert!(op.state.get(k, idx::I2D).abs() < 0.05);
            assert!(op.state.get(k, idx::ISQ).abs() < 0.05);
        }
    }

    #[test]
    fn saturation_clamps_and_reports() {
        let mut u = ControlInput([0.5, -1.5, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(u.saturate());
        assert_eq!(u.0[1], -1.0);
        assert_eq!(u.0[2], 1.0);
        assert!(!u.saturate());
    }
}
