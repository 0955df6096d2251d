//! Fixed-step closed-loop simulation with timed events and channel recording.
//!
//! The state integrated by RK4 stacks the plant, the grid phase and
//! secondary integrator, the pitch servos, the RoCoF washout and, for the
//! coordinated controller, the weight-filter and tracking-integrator states.
//! Vector-control commands are computed once per step and held.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control_model::{WeightConfig, N_INT};
use crate::error::{Error, Result};
use crate::network::{apply_short_circuit, clear_short_circuit, Line, NetworkCoupling};
use crate::params::PlantParams;
use crate::plant::{self, idx, ControlInput, DisturbanceInput, OperatingPoint, PitchState, PlantState, PmsgSetpoint};
use crate::plant::{INPUT_NAMES, N_INPUTS, N_OUTPUTS, N_STATES};
use crate::services::{self, DeloadPoint, DroopConfig, InertiaConfig, TurbineAeroModel};
use crate::vector_control::{VectorControlConfig, VectorController, VectorRefs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Coordinated,
    Vector,
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeloadMode {
    /// Over-speed operation at zero pitch.
    #[default]
    Speed,
    /// MPPT speed with the reserve shed by pitch.
    Pitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub droop: bool,
    pub inertia: bool,
    pub deload_mode: DeloadMode,
    pub droop_r: f64,
    pub droop_deadband: f64,
    /// Inertia gain is `−2·inertia_h`; `None` takes the turbine `H_t`.
    pub inertia_h: Option<f64>,
    /// Feed the inertia law with df/dt in Hz/s instead of pu/s.
    pub rocof_hz: bool,
    pub inertia_limit: f64,
    pub washout_tf: f64,
    /// Power per pu of rotor-speed error from the speed (or MPPT) reference.
    pub k_speed: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            droop: false,
            inertia: false,
            deload_mode: DeloadMode::Speed,
            droop_r: 0.05,
            droop_deadband: 5e-4,
            inertia_h: None,
            rocof_hz: true,
            inertia_limit: 0.15,
            washout_tf: 0.1,
            k_speed: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// New absolute value of a reference channel (`Q1`, `P1`, `vdc1`, ...).
    /// For `P` channels the value replaces the deloaded power setpoint.
    ReferenceStep { channel: String, value: f64 },
    /// Added to the grid load (pu on the machine base).
    LoadStep { dp_l: f64 },
    /// Metallic fault on `line`, cleared at absolute time `t_clear`.
    ShortCircuit { line: Line, fraction: f64, t_clear: f64 },
    /// Returns the grid load to its initial value.
    RestoreLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

fn default_stride() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    /// Record every `stride` steps.
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub controller: ControllerKind,
    /// Wind speed (m/s); `None` takes the reference wind.
    #[serde(default)]
    pub wind_speed: Option<f64>,
    #[serde(default)]
    pub q_ref: [f64; 2],
    #[serde(default = "default_vdc")]
    pub vdc_ref: [f64; 2],
    #[serde(default)]
    pub services: ServiceConfig,
    #[serde(default)]
    pub vector: VectorControlConfig,
    #[serde(default)]
    pub events: Vec<Event>,
}

fn default_vdc() -> [f64; 2] {
    [crate::reference::VDC_REF; 2]
}

/// Reference-channel names accepted by `ReferenceStep`.
pub const REFERENCE_CHANNELS: [&str; N_OUTPUTS] = plant::OUTPUT_NAMES;

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.duration > 0.0 && self.dt <= self.duration) {
            return Err(Error::InvalidParameter("scenario needs 0 < dt <= duration".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        let mut last = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time >= 0.0 && e.time <= self.duration) {
                return Err(Error::EventOutOfRange(format!("event at {} s outside [0, {}]", e.time, self.duration)));
            }
            if e.time < last {
                return Err(Error::EventOutOfRange(format!("events not time-sorted at {} s", e.time)));
            }
            last = e.time;
            match &e.kind {
                EventKind::ReferenceStep { channel, .. } if !REFERENCE_CHANNELS.contains(&channel.as_str()) => {
                    return Err(Error::MissingChannel(channel.clone()));
                }
                EventKind::ShortCircuit { fraction, t_clear, .. } => {
                    if !(*fraction > 0.0 && *fraction < 1.0) {
                        return Err(Error::InvalidParameter(format!("fault fraction {fraction} outside (0, 1)")));
                    }
                    if !(*t_clear > e.time && *t_clear <= self.duration) {
                        return Err(Error::EventOutOfRange(format!("fault clearing time {t_clear} s")));
                    }
                }
                _ => {}
            }
        }
        let s = &self.services;
        if !(s.droop_r > 0.0 && s.washout_tf > 0.0 && s.inertia_limit >= 0.0 && s.droop_deadband >= 0.0) {
            return Err(Error::InvalidParameter("services need R > 0, T_f > 0 and non-negative limits".into()));
        }
        if s.washout_tf < 5.0 * self.dt {
            return Err(Error::InvalidParameter("washout T_f must be at least 5 steps".into()));
        }
        if self.controller == ControllerKind::Vector {
            self.vector.validate()?;
            let tau = self.vector.gsc_inner.tau.min(self.vector.msc_inner.tau);
            if self.dt > tau / 10.0 {
                return Err(Error::InvalidParameter(format!("dt {} s exceeds a tenth of the inner loop tau", self.dt)));
            }
        }
        Ok(())
    }

    /// Nearest step index of time `t`.
    pub fn snap(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if !(t >= 0.0 && t <= self.duration + 0.5 * self.dt) {
            return Err(Error::EventOutOfRange(format!("time {t} s outside the run")));
        }
        Ok(k as usize)
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Plant and turbine data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimModel {
    pub params: PlantParams,
    pub aero: TurbineAeroModel,
    pub deload_fraction: f64,
}

impl SimModel {
    pub fn reference() -> Self {
        Self {
            params: crate::reference::plant_params(),
            aero: crate::reference::aero(),
            deload_fraction: crate::reference::DELOAD_FRACTION,
        }
    }
}

/// State-feedback gain of the coordinated controller with its weight filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatedGains {
    pub k: DMatrix<f64>,
    pub weight: WeightConfig,
}

/// Recorded channels on a common time base.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub names: Vec<String>,
    pub data: Vec<Vec<f64>>,
    pub stride: usize,
    /// The 21 plant states at the end of the run.
    pub terminal_state: Vec<f64>,
}

impl TimeSeries {
    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::MissingChannel(name.into()))
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.time.partition_point(|x| *x < t - 1e-12)
    }

    /// Value of `name` at the first sample at or after `t`.
    pub fn value_at(&self, name: &str, t: f64) -> Result<f64> {
        let y = self.channel(name)?;
        let i = self.index_at(t).min(y.len().saturating_sub(1));
        Ok(y[i])
    }

    /// Last recorded value of every channel.
    pub fn last_row(&self) -> Vec<f64> {
        self.data.iter().map(|c| *c.last().unwrap_or(&f64::NAN)).collect()
    }
}

/// Channel names, with unit suffixes, in recording order.
pub fn channel_names() -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for k in 1..=2 {
        for (n, u) in [
            ("P", "pu"),
            ("Q", "pu"),
            ("vdc", "pu"),
            ("Omega", "pu"),
            ("pitch", "deg"),
            ("Pm", "pu"),
            ("Pref", "pu"),
            ("Vr", "pu"),
        ] {
            v.push(format!("{n}{k}_{u}"));
        }
    }
    v.push("omega_f_pu".into());
    v.push("rocof_pu_per_s".into());
    v.push("PL_pu".into());
    v.push("Pe_pu".into());
    for n in INPUT_NAMES {
        v.push(format!("{n}_pu"));
    }
    v
}

// Fixed offsets into the integrated vector.
const O_THETA: usize = N_STATES;
const O_ZETA: usize = N_STATES + 1;
const O_PITCH: usize = N_STATES + 2;
const O_WASH: usize = N_STATES + 4;
const O_CTRL: usize = N_STATES + 5;

struct Coord {
    k: Vec<f64>,
    ncol: usize,
    aw: Vec<f64>,
    bw: Vec<f64>,
    n_w: usize,
    q_rows: Vec<usize>,
}

/// Per-machine operating data fixed at start.
#[derive(Clone, Copy)]
struct MachineOp {
    point: DeloadPoint,
    /// Electrical power setpoint without services.
    p_set: f64,
    omega_hold: f64,
    beta0: f64,
}

struct Engine<'a> {
    model: &'a SimModel,
    params: PlantParams,
    healthy: NetworkCoupling,
    sc: &'a Scenario,
    wind: f64,
    machines: [MachineOp; 2],
    droop: DroopConfig,
    inertia: InertiaConfig,
    rocof_scale: f64,
    x_eq: [f64; N_STATES],
    u_eq: [f64; N_INPUTS],
    y_eq: [f64; N_OUTPUTS],
    y_ref: [f64; N_OUTPUTS],
    p_l: f64,
    p_l0: f64,
    coord: Option<Coord>,
    vector: Option<[VectorController; 2]>,
    held_u: [f64; N_INPUTS],
}

/// Scalars derived at one state.
#[derive(Clone, Copy, Default)]
struct Aux {
    p_ref: [f64; 2],
    beta_ref: [f64; 2],
    rocof: f64,
    p_m: [f64; 2],
}

impl<'a> Engine<'a> {
    fn services(&self, x: &[f64]) -> Aux {
        let s = &self.sc.services;
        let wf = x[idx::OMEGA_F];
        let df = wf - 1.0;
        let rocof = (wf - x[O_WASH]) / s.washout_tf;
        let dp_droop = if s.droop { services::droop_power(df, &self.droop) } else { 0.0 };
        let dp_in = if s.inertia { services::inertia_power(rocof * self.rocof_scale, &self.inertia) } else { 0.0 };
        let df_eff = -s.droop_r * dp_droop;
        let mut aux = Aux { rocof, ..Default::default() };
        for k in 0..2 {
            let m = &self.machines[k];
            let om = x[idx::at(k, idx::OMEGA)];
            let beta = x[O_PITCH + k];
            let (omega_ref, beta_ref) = match s.deload_mode {
                DeloadMode::Speed => (
                    services::speed_reference(df_eff, &m.point, s.droop_r).unwrap_or(m.point.omega_del),
                    0.0,
                ),
                DeloadMode::Pitch => (
                    m.omega_hold,
                    services::pitch_reference(df_eff, &m.point, s.droop_r).unwrap_or(m.beta0),
                ),
            };
            aux.p_ref[k] = m.p_set + dp_droop + dp_in + s.k_speed * (om - omega_ref);
            aux.beta_ref[k] = beta_ref;
            aux.p_m[k] = self.model.aero.power(self.wind, om.max(1e-6), beta, self.params.base.s_b);
        }
        aux
    }

    fn plant_state(x: &[f64]) -> PlantState {
        let mut s = PlantState { x: [0.0; N_STATES], theta_f: x[O_THETA], zeta_sec: x[O_ZETA] };
        s.x.copy_from_slice(&x[..N_STATES]);
        s
    }

    fn coordinated_input(&self, c: &Coord, x: &[f64]) -> ControlInput {
        let mut u = self.u_eq;
        let z = &x[O_CTRL..O_CTRL + c.n_w + N_INT];
        for (i, ui) in u.iter_mut().enumerate() {
            let row = &c.k[i * c.ncol..(i + 1) * c.ncol];
            let mut acc = 0.0;
            for j in 0..N_STATES {
                acc += row[j] * (x[j] - self.x_eq[j]);
            }
            for (j, zj) in z.iter().enumerate() {
                acc += row[N_STATES + j] * zj;
            }
            *ui += acc;
        }
        let mut u = ControlInput(u);
        u.saturate();
        u
    }

    fn deriv(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let ps = Self::plant_state(x);
        let aux = self.services(x);
        let y = plant::outputs(&ps, &self.params).0;
        let u = match (&self.coord, self.sc.controller) {
            (Some(c), ControllerKind::Coordinated) => {
                let mut y_ref = self.y_ref;
                y_ref[1] = aux.p_ref[0];
                y_ref[4] = aux.p_ref[1];
                let o = O_CTRL;
                // weight filter on the selected outputs
                for i in 0..c.n_w {
                    let mut acc = 0.0;
                    for j in 0..c.n_w {
                        acc += c.aw[i * c.n_w + j] * x[o + j];
                    }
                    for (j, &r) in c.q_rows.iter().enumerate() {
                        acc += c.bw[i * c.q_rows.len() + j] * (y[r] - self.y_eq[r]);
                    }
                    out[o + i] = acc;
                }
                for i in 0..N_INT {
                    out[o + c.n_w + i] = y_ref[i] - y[i];
                }
                self.coordinated_input(c, x)
            }
            _ => ControlInput(self.held_u),
        };
        let w = DisturbanceInput { p_m: aux.p_m, p_l: self.p_l };
        let d = plant::pmsg_derivatives(&self.params, &ps, &u, &w)?;
        out[..N_STATES].copy_from_slice(&d.x);
        out[O_THETA] = d.theta_f;
        out[O_ZETA] = d.zeta_sec;
        let rates = plant::pitch_dynamics(&PitchState([x[O_PITCH], x[O_PITCH + 1]]), aux.beta_ref, &self.params.pmsg);
        out[O_PITCH] = rates[0];
        out[O_PITCH + 1] = rates[1];
        out[O_WASH] = aux.rocof;
        Ok(())
    }

    fn vector_refs(&self, aux: &Aux, k: usize) -> VectorRefs {
        VectorRefs { vdc: self.y_ref[3 * k + 2], q: self.y_ref[3 * k], p: aux.p_ref[k] }
    }

    fn record(&self, x: &[f64], ts: &mut TimeSeries, t: f64) {
        let ps = Self::plant_state(x);
        let aux = self.services(x);
        let y = plant::outputs(&ps, &self.params).0;
        let u = match (&self.coord, self.sc.controller) {
            (Some(c), ControllerKind::Coordinated) => self.coordinated_input(c, x).0,
            _ => self.held_u,
        };
        let i2 = ps.grid_currents();
        let mut col = 0;
        let mut push = |v: f64| {
            ts.data[col].push(v);
            col += 1;
        };
        for k in 0..2 {
            let (vd, vq) = self.params.network.terminal_voltage(k, i2);
            push(y[3 * k + 1]);
            push(y[3 * k]);
            push(y[3 * k + 2]);
            push(x[idx::at(k, idx::OMEGA)]);
            push(x[O_PITCH + k]);
            push(aux.p_m[k]);
            push(aux.p_ref[k]);
            push(vd.hypot(vq));
        }
        push(x[idx::OMEGA_F]);
        push(aux.rocof);
        push(self.p_l);
        push(self.params.network.injected_power(i2));
        for v in u {
            push(v);
        }
        ts.time.push(t);
    }

    fn apply(&mut self, kind: &EventKind, pending_clear: &mut Vec<usize>, step_of: impl Fn(f64) -> Result<usize>) -> Result<()> {
        match kind {
            EventKind::ReferenceStep { channel, value } => {
                let i = REFERENCE_CHANNELS
                    .iter()
                    .position(|c| c == channel)
                    .ok_or_else(|| Error::MissingChannel(channel.clone()))?;
                if i % 3 == 1 {
                    self.machines[i / 3].p_set = *value;
                } else {
                    self.y_ref[i] = *value;
                }
            }
            EventKind::LoadStep { dp_l } => self.p_l += dp_l,
            EventKind::RestoreLoad => self.p_l = self.p_l0,
            EventKind::ShortCircuit { line, fraction, t_clear } => {
                self.params.network = apply_short_circuit(&self.healthy, *line, *fraction)?;
                pending_clear.push(step_of(*t_clear)?);
            }
        }
        Ok(())
    }
}

/// Operating point and per-machine data for the scenario's wind and mode.
pub fn initial_operating_point(sc: &Scenario, model: &SimModel) -> Result<(OperatingPoint, [DeloadPoint; 2], f64)> {
    deloaded_operating_point(model, sc.wind_speed, sc.services.deload_mode, sc.q_ref, sc.vdc_ref)
}

/// Equilibrium with each machine on its deloaded point at wind `wind`
/// (`None` takes the reference wind); also returns the deload data and the
/// wind speed used.
pub fn deloaded_operating_point(
    model: &SimModel,
    wind: Option<f64>,
    mode: DeloadMode,
    q_ref: [f64; 2],
    vdc_ref: [f64; 2],
) -> Result<(OperatingPoint, [DeloadPoint; 2], f64)> {
    let wind = wind.unwrap_or_else(crate::reference::reference_wind_speed);
    let point = services::deload_point(&model.aero, wind, model.deload_fraction, model.params.base.s_b)?;
    let mut sp = [PmsgSetpoint { p_ref: 0.0, q_ref: 0.0, vdc_ref: 0.0, rotor_speed: 0.0 }; 2];
    for k in 0..2 {
        let d_l = model.params.pmsg[k].d_l;
        let omega = match mode {
            DeloadMode::Speed => point.omega_del,
            DeloadMode::Pitch => point.omega_opt,
        };
        sp[k] = PmsgSetpoint { p_ref: point.p_mdel - d_l * omega * omega, q_ref: q_ref[k], vdc_ref: vdc_ref[k], rotor_speed: omega };
    }
    let op = plant::find_equilibrium(&sp, &model.params)?;
    Ok((op, [point; 2], wind))
}

/// Runs `sc` on `model`; `gains` is required for the coordinated controller.
pub fn run(sc: &Scenario, model: &SimModel, gains: Option<&CoordinatedGains>) -> Result<TimeSeries> {
    sc.validate()?;
    let (op, points, wind) = initial_operating_point(sc, model)?;
    let params = model.params.clone();
    let mut machines = [MachineOp { point: points[0], p_set: 0.0, omega_hold: 0.0, beta0: 0.0 }; 2];
    for k in 0..2 {
        let om = op.state.get(k, idx::OMEGA);
        machines[k] = MachineOp {
            point: points[k],
            p_set: plant::active_power(&op.state, &params)[k],
            omega_hold: om,
            beta0: match sc.services.deload_mode {
                DeloadMode::Speed => 0.0,
                DeloadMode::Pitch => points[k].beta_del,
            },
        };
    }
    let reserve = points[0].reserve();
    let s = &sc.services;
    let droop = DroopConfig { r: s.droop_r, deadband: s.droop_deadband, dp_min: -reserve, dp_max: reserve };
    let inertia = InertiaConfig::from_inertia(
        s.inertia_h.unwrap_or(params.pmsg[0].h_t),
        s.washout_tf,
        -s.inertia_limit,
        s.inertia_limit,
    );
    let y_eq = op.outputs(&params).0;

    let coord = match sc.controller {
        ControllerKind::Coordinated => {
            let g = gains.ok_or_else(|| Error::Config("coordinated controller needs a gain matrix".into()))?;
            let wf = g.weight.build()?;
            let n_w = wf.a.nrows();
            let ncol = N_STATES + n_w + N_INT;
            if g.k.nrows() != N_INPUTS || g.k.ncols() != ncol {
                return Err(Error::DimensionMismatch(format!(
                    "gain is {}x{}, model needs {N_INPUTS}x{ncol}",
                    g.k.nrows(),
                    g.k.ncols()
                )));
            }
            let mut k = Vec::with_capacity(N_INPUTS * ncol);
            for i in 0..N_INPUTS {
                for j in 0..ncol {
                    k.push(g.k[(i, j)]);
                }
            }
            let q_rows: Vec<usize> = (0..wf.c_q.nrows())
                .map(|r| (0..N_OUTPUTS).find(|&c| wf.c_q[(r, c)] != 0.0).unwrap_or(0))
                .collect();
            let nq = q_rows.len();
            let mut aw = vec![0.0; n_w * n_w];
            let mut bw = vec![0.0; n_w * nq];
            for i in 0..n_w {
                for j in 0..n_w {
                    aw[i * n_w + j] = wf.a[(i, j)];
                }
                for j in 0..nq {
                    bw[i * nq + j] = wf.b[(i, j)] * wf.c_q[(j, q_rows[j])];
                }
            }
            Some(Coord { k, ncol, aw, bw, n_w, q_rows })
        }
        _ => None,
    };
    let n = O_CTRL + coord.as_ref().map_or(0, |c| c.n_w + N_INT);
    let mut x = vec![0.0; n];
    x[..N_STATES].copy_from_slice(&op.state.x);
    x[O_PITCH] = machines[0].beta0;
    x[O_PITCH + 1] = machines[1].beta0;
    x[O_WASH] = op.state.omega_f();

    let mut vector = None;
    if sc.controller == ControllerKind::Vector {
        let mut v = Vec::new();
        for k in 0..2 {
            let vc = op.state.get(k, idx::VCFD).hypot(op.state.get(k, idx::VCFQ));
            let mut c = VectorController::new(&sc.vector, &params.pmsg[k], &params.base, y_eq[3 * k + 2], vc)?;
            let refs = VectorRefs { vdc: y_eq[3 * k + 2], q: y_eq[3 * k], p: y_eq[3 * k + 1] };
            let u0 = [op.input.0[4 * k], op.input.0[4 * k + 1], op.input.0[4 * k + 2], op.input.0[4 * k + 3]];
            c.initialize(&op.state, k, &refs, u0, &params);
            v.push(c);
        }
        vector = Some([v[0], v[1]]);
    }

    let mut eng = Engine {
        model,
        healthy: params.network.clone(),
        params,
        sc,
        wind,
        machines,
        droop,
        inertia,
        rocof_scale: if s.rocof_hz { model.params.base.omega_fb / (2.0 * std::f64::consts::PI) } else { 1.0 },
        x_eq: op.state.x,
        u_eq: op.input.0,
        y_eq,
        y_ref: [sc.q_ref[0], y_eq[1], sc.vdc_ref[0], sc.q_ref[1], y_eq[4], sc.vdc_ref[1]],
        p_l: op.disturbance.p_l,
        p_l0: op.disturbance.p_l,
        coord,
        vector,
        held_u: op.input.0,
    };

    let names = channel_names();
    let n_steps = sc.n_steps();
    let cap = n_steps / sc.stride + 2;
    let mut ts = TimeSeries {
        time: Vec::with_capacity(cap),
        data: vec![Vec::with_capacity(cap); names.len()],
        names,
        stride: sc.stride,
        terminal_state: Vec::new(),
    };
    let mut events: Vec<(usize, &EventKind)> = Vec::new();
    for e in &sc.events {
        events.push((sc.snap(e.time)?, &e.kind));
    }
    let mut clears: Vec<usize> = Vec::new();
    let mut next_event = 0;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let dt = sc.dt;

    for step in 0..=n_steps {
        while next_event < events.len() && events[next_event].0 == step {
            let kind = events[next_event].1;
            eng.apply(kind, &mut clears, |t| sc.snap(t))?;
            next_event += 1;
        }
        if clears.contains(&step) {
            eng.params.network = clear_short_circuit(&eng.healthy)?;
            clears.retain(|&c| c != step);
        }
        if let Some(v) = eng.vector.as_mut().map(|v| *v) {
            let mut v = v;
            let ps = Engine::plant_state(&x);
            let aux = eng.services(&x);
            let mut u = [0.0; N_INPUTS];
            for (k, ctl) in v.iter_mut().enumerate() {
                let b = ctl.step(&ps, k, &eng.vector_refs(&aux, k), &eng.params, dt);
                u[4 * k..4 * k + 4].copy_from_slice(&b);
            }
            let mut u = ControlInput(u);
            u.saturate();
            eng.held_u = u.0;
            eng.vector = Some(v);
        }
        if step % sc.stride == 0 || step == n_steps {
            eng.record(&x, &mut ts, step as f64 * dt);
        }
        if step == n_steps {
            break;
        }
        eng.deriv(&x, &mut k1)?;
        stage(&x, &k1, 0.5 * dt, &mut tmp);
        eng.deriv(&tmp, &mut k2)?;
        stage(&x, &k2, 0.5 * dt, &mut tmp);
        eng.deriv(&tmp, &mut k3)?;
        stage(&x, &k3, dt, &mut tmp);
        eng.deriv(&tmp, &mut k4)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        for k in 0..2 {
            let pm = &eng.params.pmsg[k];
            x[O_PITCH + k] = x[O_PITCH + k].clamp(pm.beta_min, pm.beta_max);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonPhysicalState(format!("state diverged at t = {} s", (step + 1) as f64 * dt)));
        }
    }
    ts.terminal_state = x[..N_STATES].to_vec();
    Ok(ts)
}

#[inline]
fn stage(x: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + h * k[i];
    }
}

/// Step-response figures of one channel over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    /// Time after the window start of the last exit from the 5% band. The
    /// band is 5% of the net step, or 5% of the largest excursion from the
    /// final value when the net step is below that (a disturbance).
    pub settling_time: f64,
    /// Excursion beyond the final value, as a fraction of the step; zero for
    /// a disturbance.
    pub overshoot: f64,
    /// Largest deviation from the initial value.
    pub peak_deviation: f64,
    /// `|final − target|`, or zero without a target.
    pub steady_state_error: f64,
    /// Zero crossings of the linearly detrended signal.
    pub oscillations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub window: (f64, f64),
    pub channels: BTreeMap<String, ChannelMetrics>,
    pub rocof_extremum: Option<f64>,
}

/// Metrics of samples `y` at times `t` (window = whole slice).
pub fn channel_metrics(t: &[f64], y: &[f64], target: Option<f64>) -> ChannelMetrics {
    let n = y.len();
    if n == 0 {
        return ChannelMetrics { settling_time: 0.0, overshoot: 0.0, peak_deviation: 0.0, steady_state_error: 0.0, oscillations: 0 };
    }
    let (y0, yf) = (y[0], y[n - 1]);
    let step = yf - y0;
    let excursion = y.iter().map(|v| (v - yf).abs()).fold(0.0_f64, f64::max);
    let band = if step.abs() < 0.05 * excursion { 0.05 * excursion } else { 0.05 * step.abs() };
    let mut settle = 0.0;
    if band > 0.0 {
        for i in (0..n).rev() {
            if (y[i] - yf).abs() > band {
                settle = if i + 1 < n { t[i + 1] - t[0] } else { t[i] - t[0] };
                break;
            }
        }
    }
    let overshoot = if step.abs() >= 0.05 * excursion && step != 0.0 {
        y.iter().map(|v| (v - yf) * step.signum()).fold(0.0_f64, f64::max) / step.abs()
    } else {
        0.0
    };
    let peak = y.iter().map(|v| (v - y0).abs()).fold(0.0_f64, f64::max);
    ChannelMetrics {
        settling_time: settle,
        overshoot,
        peak_deviation: peak,
        steady_state_error: target.map_or(0.0, |r| (yf - r).abs()),
        oscillations: zero_crossings(t, y),
    }
}

/// Sign changes of `y` minus its least-squares line, with a hysteresis of
/// 2% of the detrended range.
pub fn zero_crossings(t: &[f64], y: &[f64]) -> usize {
    let n = y.len();
    if n < 3 {
        return 0;
    }
    let tm = t.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (t[i] - tm) * (y[i] - ym);
        sxx += (t[i] - tm) * (t[i] - tm);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r: Vec<f64> = (0..n).map(|i| y[i] - ym - slope * (t[i] - tm)).collect();
    let (lo, hi) = r.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    let h = 0.02 * (hi - lo);
    if !(h > 0.0) {
        return 0;
    }
    let mut count = 0;
    let mut sign = 0i8;
    for v in r {
        let s = if v > h {
            1
        } else if v < -h {
            -1
        } else {
            0
        };
        if s != 0 {
            if sign != 0 && s != sign {
                count += 1;
            }
            sign = s;
        }
    }
    count
}

/// Metrics of every channel over `[t0, t1]`.
pub fn metrics(ts: &TimeSeries, t0: f64, t1: f64) -> Result<MetricsReport> {
    if ts.is_empty() {
        return Err(Error::InsufficientSamples("empty time series".into()));
    }
    let i0 = ts.index_at(t0);
    let i1 = ts.index_at(t1 + 1e-9).max(i0 + 1).min(ts.len());
    let t = &ts.time[i0..i1];
    let mut report = MetricsReport { window: (t0, t1), ..Default::default() };
    for (name, y) in ts.names.iter().zip(&ts.data) {
        report.channels.insert(name.clone(), channel_metrics(t, &y[i0..i1], None));
    }
    if let Ok(r) = ts.channel("rocof_pu_per_s") {
        report.rocof_extremum = r[i0..i1].iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs()));
    }
    Ok(report)
}

/// Metrics of the named channels only; unknown names fail.
pub fn metrics_for(ts: &TimeSeries, names: &[&str], t0: f64, t1: f64) -> Result<MetricsReport> {
    for n in names {
        ts.channel(n)?;
    }
    let mut r = metrics(ts, t0, t1)?;
    r.channels.retain(|k, _| names.contains(&k.as_str()));
    Ok(r)
}
