//! Two-layer vector control of the grid-side (GSC) and machine-side (MSC)
//! converters: outer DC-voltage/Q and power loops feeding inner dq current
//! loops with cross-coupling and back-EMF feedforward.
//!
//! The GSC outer loops work in the frame aligned with the filter-capacitor
//! voltage (an ideal angle, no PLL); the current loops run in the common dq
//! frame of the plant model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BaseQuantities, PmsgParams};
use crate::plant::{idx, PlantState};

/// Discrete PI `u = K_p (e + (1/T_i) ∫e)` with trapezoidal integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiController {
    pub kp: f64,
    pub ti: f64,
    /// Accumulated `∫e`.
    pub integral: f64,
    pub out_min: f64,
    pub out_max: f64,
    pub anti_windup: bool,
    #[serde(skip)]
    prev_err: Option<f64>,
}

impl PiController {
    pub fn new(kp: f64, ti: f64, out_min: f64, out_max: f64) -> Result<Self> {
        if !(ti > 0.0) {
            return Err(Error::InvalidParameter(format!("PI integral time must be > 0, got {ti}")));
        }
        if out_min > out_max {
            return Err(Error::InvalidParameter("PI output limits inverted".into()));
        }
        Ok(Self { kp, ti, integral: 0.0, out_min, out_max, anti_windup: true, prev_err: None })
    }

    /// Sets the integral so that a zero error yields `u`.
    pub fn preload(&mut self, u: f64) {
        self.integral = if self.kp != 0.0 { u * self.ti / self.kp } else { 0.0 };
    }

    pub fn output_for(&self, e: f64, integral: f64) -> f64 {
        self.kp * (e + integral / self.ti)
    }

    /// Advances by `dt` with error `e` and returns the clamped output.
    pub fn step(&mut self, e: f64, dt: f64) -> f64 {
        let prev = self.prev_err.unwrap_or(e);
        self.prev_err = Some(e);
        let cand = self.integral + 0.5 * dt * (e + prev);
        let raw = self.output_for(e, cand);
        let clamped = raw.clamp(self.out_min, self.out_max);
        let pushing_out = (raw > self.out_max && self.kp * e > 0.0) || (raw < self.out_min && self.kp * e < 0.0);
        if !(self.anti_windup && raw != clamped && pushing_out) {
            self.integral = cand;
        }
        clamped
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_err = None;
    }
}

/// First-order reference filter `1/(1 + T s)`, exact discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefFilter {
    pub t: f64,
    pub y: f64,
}

impl RefFilter {
    pub fn new(t: f64, y0: f64) -> Self {
        Self { t, y: y0 }
    }

    pub fn step(&mut self, u: f64, dt: f64) -> f64 {
        if self.t <= 0.0 {
            self.y = u;
        } else {
            let a = (-dt / self.t).exp();
            self.y = a * self.y + (1.0 - a) * u;
        }
        self.y
    }
}

/// Damping ratio and envelope time constant `τ = 1/(ζ ω_n)` of a loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopTuning {
    pub zeta: f64,
    pub tau: f64,
}

impl LoopTuning {
    pub fn omega_n(&self) -> f64 {
        1.0 / (self.zeta * self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorControlConfig {
    pub gsc_inner: LoopTuning,
    /// DC-voltage loop.
    pub gsc_outer: LoopTuning,
    /// Time constant of the reactive-power loop (s).
    pub q_tau: f64,
    pub msc_inner: LoopTuning,
    /// Time constant of the active-power loop (s).
    pub p_tau: f64,
    /// Current reference limit (pu).
    pub current_limit: f64,
    /// Inner-loop voltage correction limit (pu).
    pub voltage_limit: f64,
    /// Apply the zero-cancelling reference filters.
    #[serde(default = "yes")]
    pub reference_filters: bool,
}

fn yes() -> bool {
    true
}

impl Default for VectorControlConfig {
    fn default() -> Self {
        Self {
            gsc_inner: LoopTuning { zeta: 0.707, tau: 2e-3 },
            gsc_outer: LoopTuning { zeta: 0.707, tau: 40e-3 },
            q_tau: 40e-3,
            msc_inner: LoopTuning { zeta: 0.707, tau: 2e-3 },
            p_tau: 40e-3,
            current_limit: 1.5,
            voltage_limit: 1.0,
            reference_filters: true,
        }
    }
}

impl VectorControlConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("gsc_inner", self.gsc_inner), ("gsc_outer", self.gsc_outer), ("msc_inner", self.msc_inner)] {
            if !(t.tau > 0.0 && t.zeta > 0.0 && t.zeta <= 2.0) {
                return Err(Error::InvalidParameter(format!("{name} needs tau > 0 and zeta in (0, 2]")));
            }
        }
        if !(self.q_tau > 0.0 && self.p_tau > 0.0) {
            return Err(Error::InvalidParameter("power loop time constants must be > 0".into()));
        }
        let inner = self.gsc_inner.tau.max(self.msc_inner.tau);
        for (name, t) in [("DC-voltage", self.gsc_outer.tau), ("Q", self.q_tau), ("P", self.p_tau)] {
            if t < 10.0 * inner {
                return Err(Error::InvalidParameter(format!(
                    "{name} loop time constant {t} s is below 10x the inner loop ({inner} s)"
                )));
            }
        }
        if !(self.current_limit > 0.0 && self.voltage_limit > 0.0) {
            return Err(Error::InvalidParameter("vector control limits must be > 0".into()));
        }
        Ok(())
    }
}

/// PI gains `(K_p, T_i)` placing the poles of the loop around the RL plant
/// `1/(R + L' s)` at `s² + 2ζω_n s + ω_n²`, with `L' = L/ω_b` in seconds.
pub fn tune_inner_loop(r: f64, l: f64, zeta: f64, tau: f64) -> Result<(f64, f64)> {
    if !(r >= 0.0 && l > 0.0 && tau > 0.0 && zeta > 0.0 && zeta <= 2.0) {
        return Err(Error::InvalidParameter("inner-loop tuning needs R >= 0, L, tau > 0, zeta in (0, 2]".into()));
    }
    let wn = 1.0 / (zeta * tau);
    let kp = 2.0 * zeta * wn * l - r;
    if kp <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tau = {tau} s is slower than the open RL loop; no positive gain"
        )));
    }
    Ok((kp, kp / (l * wn * wn)))
}

/// PI gains for an integrating plant `k/s` (pole pair as above).
pub fn tune_integrating_loop(k: f64, zeta: f64, tau: f64) -> Result<(f64, f64)> {
    if !(k > 0.0 && tau > 0.0 && zeta > 0.0) {
        return Err(Error::InvalidParameter("integrating loop tuning needs k, tau, zeta > 0".into()));
    }
    let wn = 1.0 / (zeta * tau);
    let kp = 2.0 * zeta * wn / k;
    Ok((kp, kp * k / (wn * wn)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GscMeasurements {
    pub i1: [f64; 2],
    pub vc: [f64; 2],
    pub vdc: f64,
    pub q: f64,
    /// Grid frequency (pu).
    pub omega_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MscMeasurements {
    pub is: [f64; 2],
    pub vdc: f64,
    pub omega: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorRefs {
    pub vdc: f64,
    pub q: f64,
    pub p: f64,
}

/// Controller state of one GSC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GscController {
    pub vdc_pi: PiController,
    pub q_pi: PiController,
    pub id_pi: PiController,
    pub iq_pi: PiController,
    pub vdc_filter: RefFilter,
    pub id_filter: RefFilter,
    pub iq_filter: RefFilter,
    /// `L_1f` (pu) and `ω_b` for the feedforward terms.
    l: f64,
    current_limit: f64,
    /// Last current references after filtering.
    pub i_ref: [f64; 2],
}

/// Controller state of one MSC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MscController {
    pub p_pi: PiController,
    pub id_pi: PiController,
    pub iq_pi: PiController,
    pub iq_filter: RefFilter,
    l: f64,
    psi_f: f64,
    /// `p · ω_b,mech / ω_b,el`.
    speed_gain: f64,
    /// `P = power_gain · Ω · i_sq`.
    power_gain: f64,
    current_limit: f64,
    pub i_ref: [f64; 2],
}

impl GscController {
    /// Gains for machine `pm` at DC voltage `vdc0` and capacitor-voltage
    /// magnitude `vc0`.
    pub fn new(cfg: &VectorControlConfig, pm: &PmsgParams, base: &BaseQuantities, vdc0: f64, vc0: f64) -> Result<Self> {
        cfg.validate()?;
        let wb = base.omega_fb;
        let (kp, ti) = tune_inner_loop(pm.r1f, pm.l1f / wb, cfg.gsc_inner.zeta, cfg.gsc_inner.tau)?;
        let id_pi = PiController::new(kp, ti, -cfg.voltage_limit, cfg.voltage_limit)?;
        // d(vdc)/dt = −k_dc · i_d (capacitor-voltage frame)
        let k_dc = 3.0 * wb * vc0 / (2.0 * pm.cdc * vdc0);
        let (kv, tv) = tune_integrating_loop(k_dc, cfg.gsc_outer.zeta, cfg.gsc_outer.tau)?;
        let lim = cfg.current_limit;
        let vdc_pi = PiController::new(kv, tv, -lim, lim)?;
        // Q = Q* + K_p(e + ∫e/T_i) closes with τ = T_i (1 + K_p)/K_p.
        let q_pi = PiController::new(1.0, 0.5 * cfg.q_tau, -2.0 * lim, 2.0 * lim)?;
        let rf = cfg.reference_filters;
        Ok(Self {
            vdc_pi,
            q_pi,
            id_pi,
            iq_pi: id_pi,
            vdc_filter: RefFilter::new(if rf { tv } else { 0.0 }, vdc0),
            id_filter: RefFilter::new(if rf { ti } else { 0.0 }, 0.0),
            iq_filter: RefFilter::new(if rf { ti } else { 0.0 }, 0.0),
            l: pm.l1f,
            current_limit: lim,
            i_ref: [0.0; 2],
        })
    }

    /// Duty ratios `(β_1d, β_1q)`.
    pub fn step(&mut self, m: &GscMeasurements, refs: &VectorRefs, dt: f64) -> [f64; 2] {
        let vdc_ref = self.vdc_filter.step(refs.vdc, dt);
        let vmag = (m.vc[0] * m.vc[0] + m.vc[1] * m.vc[1]).sqrt().max(1e-6);
        let (c, s) = (m.vc[0] / vmag, m.vc[1] / vmag);
        let i_dv = self.vdc_pi.step(m.vdc - vdc_ref, dt);
        let q_corr = self.q_pi.step(refs.q - m.q, dt);
        let i_qv = (-(refs.q + q_corr) / vmag).clamp(-self.current_limit, self.current_limit);
        // back to the common frame
        let id_ref = self.id_filter.step(c * i_dv - s * i_qv, dt);
        let iq_ref = self.iq_filter.step(s * i_dv + c * i_qv, dt);
        self.i_ref = [id_ref, iq_ref];
        gsc_control_step(self, m, dt)
    }
}

/// Inner current loops of the GSC for the stored references.
pub fn gsc_control_step(ctl: &mut GscController, m: &GscMeasurements, dt: f64) -> [f64; 2] {
    let ed = ctl.id_pi.step(ctl.i_ref[0] - m.i1[0], dt);
    let eq = ctl.iq_pi.step(ctl.i_ref[1] - m.i1[1], dt);
    let v1d = ed + m.vc[0] - m.omega_f * ctl.l * m.i1[1];
    let v1q = eq + m.vc[1] + m.omega_f * ctl.l * m.i1[0];
    [2.0 * v1d / m.vdc, 2.0 * v1q / m.vdc]
}

impl MscController {
    pub fn new(cfg: &VectorControlConfig, pm: &PmsgParams, base: &BaseQuantities) -> Result<Self> {
        cfg.validate()?;
        let wb = base.omega_fb;
        let (kp, ti) = tune_inner_loop(pm.rs, pm.ls / wb, cfg.msc_inner.zeta, cfg.msc_inner.tau)?;
        let id_pi = PiController::new(kp, ti, -cfg.voltage_limit, cfg.voltage_limit)?;
        let lim = cfg.current_limit;
        let ratio = base.omega_b / base.omega_fb;
        Ok(Self {
            p_pi: PiController::new(1.0, 0.5 * cfg.p_tau, -2.0 * lim, 2.0 * lim)?,
            id_pi,
            iq_pi: id_pi,
            iq_filter: RefFilter::new(if cfg.reference_filters { ti } else { 0.0 }, 0.0),
            l: pm.ls,
            psi_f: pm.psi_f,
            speed_gain: pm.p() * ratio,
            power_gain: 1.5 * ratio * pm.p() * pm.psi_f,
            current_limit: lim,
            i_ref: [0.0; 2],
        })
    }

    /// Duty ratios `(β_sd, β_sq)`.
    pub fn step(&mut self, m: &MscMeasurements, refs: &VectorRefs, dt: f64) -> [f64; 2] {
        let corr = self.p_pi.step(refs.p - m.p, dt);
        let den = self.power_gain * m.omega.max(1e-3);
        let iq = ((refs.p + corr) / den).clamp(-self.current_limit, self.current_limit);
        self.i_ref = [0.0, self.iq_filter.step(iq, dt)];
        msc_control_step(self, m, dt)
    }
}

/// Inner current loops of the MSC (`i_sd* = 0`).
pub fn msc_control_step(ctl: &mut MscController, m: &MscMeasurements, dt: f64) -> [f64; 2] {
    let we = ctl.speed_gain * m.omega;
    let ed = ctl.id_pi.step(ctl.i_ref[0] - m.is[0], dt);
    let eq = ctl.iq_pi.step(ctl.i_ref[1] - m.is[1], dt);
    // generator convention: the converter voltage opposes the current
    let vsd = -ed + we * ctl.l * m.is[1];
    let vsq = -eq + we * (ctl.psi_f - ctl.l * m.is[0]);
    [2.0 * vsd / m.vdc, 2.0 * vsq / m.vdc]
}

/// Both converters of one PMSG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorController {
    pub gsc: GscController,
    pub msc: MscController,
}

impl VectorController {
    pub fn new(cfg: &VectorControlConfig, pm: &PmsgParams, base: &BaseQuantities, vdc0: f64, vc0: f64) -> Result<Self> {
        Ok(Self { gsc: GscController::new(cfg, pm, base, vdc0, vc0)?, msc: MscController::new(cfg, pm, base)? })
    }

    /// Preloads integrators and filters so that machine `k` of `state` is a
    /// fixed point under `refs` (the duty ratios reproduce `u0`).
    pub fn initialize(&mut self, state: &PlantState, k: usize, refs: &VectorRefs, u0: [f64; 4], params: &crate::params::PlantParams) {
        let g = gsc_measurements(state, k);
        let m = msc_measurements(state, k, params);
        self.gsc.vdc_filter.y = refs.vdc;
        let vmag = (g.vc[0] * g.vc[0] + g.vc[1] * g.vc[1]).sqrt();
        let (c, s) = (g.vc[0] / vmag, g.vc[1] / vmag);
        let i_dv = c * g.i1[0] + s * g.i1[1];
        self.gsc.vdc_pi.preload(i_dv);
        self.gsc.q_pi.preload(0.0);
        self.gsc.id_filter.y = g.i1[0];
        self.gsc.iq_filter.y = g.i1[1];
        self.gsc.i_ref = g.i1;
        let v1d = 0.5 * u0[0] * g.vdc - (g.vc[0] - g.omega_f * self.gsc.l * g.i1[1]);
        let v1q = 0.5 * u0[1] * g.vdc - (g.vc[1] + g.omega_f * self.gsc.l * g.i1[0]);
        self.gsc.id_pi.preload(v1d);
        self.gsc.iq_pi.preload(v1q);
        self.msc.p_pi.preload(0.0);
        self.msc.iq_filter.y = m.is[1];
        self.msc.i_ref = [0.0, m.is[1]];
        let we = self.msc.speed_gain * m.omega;
        let vsd = 0.5 * u0[2] * m.vdc;
        let vsq = 0.5 * u0[3] * m.vdc;
        self.msc.id_pi.preload(we * self.msc.l * m.is[1] - vsd);
        self.msc.iq_pi.preload(we * (self.msc.psi_f - self.msc.l * m.is[0]) - vsq);
    }

    /// `[β_1d, β_1q, β_sd, β_sq]` for machine `k`.
    pub fn step(&mut self, state: &PlantState, k: usize, refs: &VectorRefs, params: &crate::params::PlantParams, dt: f64) -> [f64; 4] {
        let g = self.gsc.step(&gsc_measurements(state, k), refs, dt);
        let m = self.msc.step(&msc_measurements(state, k, params), refs, dt);
        [g[0], g[1], m[0], m[1]]
    }
}

pub fn gsc_measurements(state: &PlantState, k: usize) -> GscMeasurements {
    let g = |f| state.get(k, f);
    let (i1, vc) = ([g(idx::I1D), g(idx::I1Q)], [g(idx::VCFD), g(idx::VCFQ)]);
    GscMeasurements { i1, vc, vdc: g(idx::VDC), q: i1[0] * vc[1] - i1[1] * vc[0], omega_f: state.omega_f() }
}

pub fn msc_measurements(state: &PlantState, k: usize, params: &crate::params::PlantParams) -> MscMeasurements {
    let g = |f| state.get(k, f);
    MscMeasurements {
        is: [g(idx::ISD), g(idx::ISQ)],
        vdc: g(idx::VDC),
        omega: g(idx::OMEGA),
        p: crate::plant::active_power(state, params)[k],
    }
}
