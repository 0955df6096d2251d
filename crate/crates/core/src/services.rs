//! Non-model-based grid services: turbine aerodynamics, deloading curves,
//! droop, hidden inertia and RoCoF measurement.
//!
//! Frequencies are per unit throughout (`Δf = ω_f − 1`); RoCoF is in pu/s.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential power-coefficient model of a pitch-regulated rotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbineAeroModel {
    /// Air density (kg/m³).
    pub rho: f64,
    /// Blade radius (m).
    pub radius: f64,
    /// Rotor speed at 1 pu (rad/s).
    pub rotor_base_speed: f64,
    /// `Cp = c1 (c2/λi − c3 β − c4) exp(−c5/λi) + c6 λ`.
    pub c: [f64; 6],
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Pitch range (deg).
    pub beta_min: f64,
    pub beta_max: f64,
}

impl TurbineAeroModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("radius", self.radius), ("rotor_base_speed", self.rotor_base_speed)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("aero parameter {name} must be > 0")));
            }
        }
        if !(0.0 < self.lambda_min && self.lambda_min < self.lambda_max) {
            return Err(Error::InvalidParameter("aero model needs 0 < lambda_min < lambda_max".into()));
        }
        if self.beta_min >= self.beta_max {
            return Err(Error::InvalidParameter("aero model needs beta_min < beta_max".into()));
        }
        Ok(())
    }

    pub fn swept_area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }

    /// Power coefficient, clipped below at zero.
    pub fn cp(&self, lambda: f64, beta: f64) -> f64 {
        let [c1, c2, c3, c4, c5, c6] = self.c;
        let inv_li = 1.0 / (lambda + 0.08 * beta) - 0.035 / (beta * beta * beta + 1.0);
        let cp = c1 * (c2 * inv_li - c3 * beta - c4) * (-c5 * inv_li).exp() + c6 * lambda;
        cp.max(0.0)
    }

    /// Tip-speed ratio at wind speed `v` (m/s) and rotor speed `omega` (pu).
    pub fn tip_speed_ratio(&self, v: f64, omega: f64) -> f64 {
        omega * self.rotor_base_speed * self.radius / v
    }

    /// Rotor speed (pu) giving tip-speed ratio `lambda` at wind speed `v`.
    pub fn speed_for_ratio(&self, v: f64, lambda: f64) -> f64 {
        lambda * v / (self.rotor_base_speed * self.radius)
    }

    /// Available wind power `½ρAv³` in pu of `s_b`.
    pub fn wind_power(&self, v: f64, s_b: f64) -> f64 {
        0.5 * self.rho * self.swept_area() * v * v * v / s_b
    }

    /// Mechanical power (pu of `s_b`).
    pub fn power(&self, v: f64, omega: f64, beta: f64, s_b: f64) -> f64 {
        if v <= 0.0 || omega <= 0.0 {
            return 0.0;
        }
        self.wind_power(v, s_b) * self.cp(self.tip_speed_ratio(v, omega), beta)
    }

    /// `(λ*, Cp*)` maximizing `Cp(·, β)` over the λ range.
    pub fn optimum(&self, beta: f64) -> (f64, f64) {
        let f = |l: f64| self.cp(l, beta);
        let n = 400;
        let h = (self.lambda_max - self.lambda_min) / n as f64;
        let mut best = 0;
        for i in 1..=n {
            if f(self.lambda_min + i as f64 * h) > f(self.lambda_min + best as f64 * h) {
                best = i;
            }
        }
        let a = self.lambda_min + (best.max(1) - 1) as f64 * h;
        let b = (self.lambda_min + (best + 1) as f64 * h).min(self.lambda_max);
        let l = golden_max(f, a, b, 1e-12);
        (l, f(l))
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Root of `f` on `[a, b]` given a sign change (bisection to `tol`).
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a) < tol {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// MPPT and deloaded operating points at one wind speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeloadPoint {
    pub wind_speed: f64,
    pub omega_opt: f64,
    pub p_mopt: f64,
    /// Over-speed rotor speed delivering `(1 − d)·P_mopt` at zero pitch.
    pub omega_del: f64,
    pub p_mdel: f64,
    /// Pitch delivering `(1 − d)·P_mopt` at `omega_opt`.
    pub beta_del: f64,
    pub beta_opt: f64,
}

impl DeloadPoint {
    pub fn reserve(&self) -> f64 {
        self.p_mopt - self.p_mdel
    }
}

pub fn deload_point(aero: &TurbineAeroModel, v: f64, fraction: f64, s_b: f64) -> Result<DeloadPoint> {
    let fail = |reason: &str| Error::NoDeloadSolution { wind_speed: v, reason: reason.into() };
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::InvalidParameter(format!("deload fraction must lie in (0, 0.5), got {fraction}")));
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(fail("wind speed must be positive"));
    }
    let (l_opt, cp_opt) = aero.optimum(0.0);
    if cp_opt <= 0.0 {
        return Err(fail("no positive power coefficient at zero pitch"));
    }
    let target = (1.0 - fraction) * cp_opt;
    let l_del = bisect(|l| aero.cp(l, 0.0) - target, l_opt, aero.lambda_max, 1e-14)
        .ok_or_else(|| fail("over-speed branch leaves the tip-speed-ratio range"))?;
    let beta_del = bisect(|b| aero.cp(l_opt, b) - target, 0.0_f64.max(aero.beta_min), aero.beta_max, 1e-13)
        .ok_or_else(|| fail("pitch range cannot shed the requested reserve"))?;
    let pw = aero.wind_power(v, s_b);
    Ok(DeloadPoint {
        wind_speed: v,
        omega_opt: aero.speed_for_ratio(v, l_opt),
        p_mopt: pw * cp_opt,
        omega_del: aero.speed_for_ratio(v, l_del),
        p_mdel: (1.0 - fraction) * pw * cp_opt,
        beta_del,
        beta_opt: 0.0,
    })
}

/// Deload curve over a set of wind speeds; failed samples are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeloadCurve {
    pub fraction: f64,
    pub samples: Vec<DeloadSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeloadSample {
    pub wind_speed: f64,
    pub point: Option<DeloadPoint>,
    pub error: Option<String>,
}

impl DeloadCurve {
    pub fn points(&self) -> impl Iterator<Item = &DeloadPoint> {
        self.samples.iter().filter_map(|s| s.point.as_ref())
    }
}

pub fn build_deload_curve(aero: &TurbineAeroModel, speeds: &[f64], fraction: f64, s_b: f64) -> Result<DeloadCurve> {
    aero.validate()?;
    if speeds.is_empty() {
        return Err(Error::InvalidParameter("empty wind-speed range".into()));
    }
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::InvalidParameter(format!("deload fraction must lie in (0, 0.5), got {fraction}")));
    }
    let samples = speeds
        .iter()
        .map(|&v| match deload_point(aero, v, fraction, s_b) {
            Ok(p) => DeloadSample { wind_speed: v, point: Some(p), error: None },
            Err(e) => DeloadSample { wind_speed: v, point: None, error: Some(e.to_string()) },
        })
        .collect();
    Ok(DeloadCurve { fraction, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopConfig {
    /// Droop constant (pu frequency per pu power).
    pub r: f64,
    pub deadband: f64,
    pub dp_min: f64,
    pub dp_max: f64,
}

impl DroopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) {
            return Err(Error::InvalidParameter("droop constant R must be > 0".into()));
        }
        if !(self.deadband >= 0.0) || self.dp_min > self.dp_max {
            return Err(Error::InvalidParameter("droop deadband must be >= 0 and dp_min <= dp_max".into()));
        }
        Ok(())
    }

    pub fn k_droop(&self) -> f64 {
        -1.0 / self.r
    }
}

/// `ΔP_ref = −Δf/R` outside the deadband, clamped to the limits.
pub fn droop_power(df: f64, cfg: &DroopConfig) -> f64 {
    if df.abs() <= cfg.deadband {
        return 0.0;
    }
    (cfg.k_droop() * df).clamp(cfg.dp_min, cfg.dp_max)
}

/// `P_mref = P_mdel − Δf/R`.
pub fn mechanical_power_reference(df: f64, point: &DeloadPoint, r: f64) -> f64 {
    point.p_mdel - df / r
}

fn reserve_share(df: f64, point: &DeloadPoint, r: f64) -> Result<f64> {
    let reserve = point.p_mopt - point.p_mdel;
    if reserve == 0.0 {
        return Err(Error::DegenerateCurve);
    }
    Ok(-(1.0 / r) * df / reserve)
}

/// Rotor-speed reference on the straight line between the deloaded and the
/// MPPT points.
pub fn speed_reference(df: f64, point: &DeloadPoint, r: f64) -> Result<f64> {
    let s = reserve_share(df, point, r)?;
    let w = point.omega_del - (point.omega_del - point.omega_opt) * s;
    let (lo, hi) = (point.omega_opt.min(point.omega_del), point.omega_opt.max(point.omega_del));
    Ok(w.clamp(lo, hi))
}

/// Pitch reference (deg) on the straight line between the deloaded and the
/// optimal pitch.
pub fn pitch_reference(df: f64, point: &DeloadPoint, r: f64) -> Result<f64> {
    let s = reserve_share(df, point, r)?;
    let b = point.beta_del - (point.beta_del - point.beta_opt) * s;
    let (lo, hi) = (point.beta_opt.min(point.beta_del), point.beta_opt.max(point.beta_del));
    Ok(b.clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InertiaConfig {
    /// Loop gain (pu power per pu/s).
    pub k: f64,
    /// Washout time constant of the RoCoF meter (s).
    pub t_f: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl InertiaConfig {
    /// `K = −2H`.
    pub fn from_inertia(h: f64, t_f: f64, p_min: f64, p_max: f64) -> Self {
        Self { k: -2.0 * h, t_f, p_min, p_max }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_f > 0.0) {
            return Err(Error::InvalidParameter("RoCoF washout T_f must be > 0".into()));
        }
        if self.p_min > self.p_max {
            return Err(Error::InvalidParameter("inertia output needs p_min <= p_max".into()));
        }
        Ok(())
    }
}

/// `ΔP_eref = K·df/dt`, clamped.
pub fn inertia_power(rocof: f64, cfg: &InertiaConfig) -> f64 {
    (cfg.k * rocof).clamp(cfg.p_min, cfg.p_max)
}

/// Discrete washout differentiator `s / (1 + T_f s)` (Tustin).
#[derive(Debug, Clone, PartialEq)]
pub struct RocofMeter {
    t_f: f64,
    h: f64,
    prev_in: Option<f64>,
    out: f64,
}

impl RocofMeter {
    pub fn new(t_f: f64, h: f64) -> Result<Self> {
        if !(t_f > 0.0 && h > 0.0) {
            return Err(Error::InvalidParameter("RoCoF meter needs T_f > 0 and h > 0".into()));
        }
        if h > t_f / 5.0 {
            return Err(Error::InvalidParameter(format!("sample step {h} exceeds T_f/5 = {}", t_f / 5.0)));
        }
        Ok(Self { t_f, h, prev_in: None, out: 0.0 })
    }

    /// Feeds one sample; the first sample only initializes the filter.
    pub fn push(&mut self, f: f64) -> f64 {
        if let Some(p) = self.prev_in {
            let a = 2.0 * self.t_f / self.h;
            self.out = (2.0 * (f - p) / self.h + (a - 1.0) * self.out) / (1.0 + a);
        }
        self.prev_in = Some(f);
        self.out
    }

    pub fn value(&self) -> f64 {
        self.out
    }
}

/// Filters a uniformly sampled frequency record (step `h`).
pub fn measure_rocof(samples: &[f64], h: f64, t_f: f64) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!("need at least 2 samples, got {}", samples.len())));
    }
    let mut m = RocofMeter::new(t_f, h)?;
    Ok(samples.iter().map(|f| m.push(*f)).collect())
}
