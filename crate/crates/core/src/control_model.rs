//! Linearization of the plant and assembly of the mixed-sensitivity
//! extended system used for synthesis.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::PlantParams;
use crate::plant::{self, OperatingPoint, N_DISTURBANCES, N_INPUTS, N_OUTPUTS, N_STATES};

/// Number of tracking integrators (one per output).
pub const N_INT: usize = N_OUTPUTS;

/// Residual above which a point is not accepted as a linearization point.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub operating_point: OperatingPoint,
}

pub fn linearize(params: &PlantParams, op: &OperatingPoint) -> Result<LinearPlant> {
    let residual = op.residual(params)?;
    if !(residual < EQUILIBRIUM_TOL) {
        return Err(Error::NotAnEquilibrium { residual });
    }
    let (a, b1, b2) = plant::jacobians(params, &op.state, &op.input, &op.disturbance);
    let c = plant::output_jacobian(params, &op.state);
    Ok(LinearPlant { a, b1, b2, c, operating_point: *op })
}

/// Selector picking `Q_1` and `Q_2` out of the output vector.
pub fn q_selector() -> DMatrix<f64> {
    let mut cq = DMatrix::zeros(2, N_OUTPUTS);
    cq[(0, 0)] = 1.0;
    cq[(1, 3)] = 1.0;
    cq
}

/// High-frequency emphasis weight on the two reactive-power channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFilter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub c_q: DMatrix<f64>,
    /// Sections per channel.
    pub order: usize,
    pub corner_hz: f64,
    pub hf_ratio: f64,
}

/// Default ratio between the weight's upper pole and its corner.
pub const DEFAULT_HF_RATIO: f64 = 50.0;

impl WeightFilter {
    /// Total number of filter states.
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Transfer-function magnitude of one channel at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz;
        let wc = 2.0 * std::f64::consts::PI * self.corner_hz;
        let wh = wc * self.hf_ratio;
        let section = (w / wc) / (1.0 + (w / wh).powi(2)).sqrt();
        section.powi(self.order as i32)
    }
}

/// Builds `order` cascaded sections `(s/w_c) / (1 + s/w_h)` per Q channel.
pub fn make_rolloff_filter(corner_hz: f64, order: usize) -> Result<WeightFilter> {
    make_rolloff_filter_with_ratio(corner_hz, order, DEFAULT_HF_RATIO)
}

pub fn make_rolloff_filter_with_ratio(corner_hz: f64, order: usize, hf_ratio: f64) -> Result<WeightFilter> {
    if !(corner_hz > 0.0 && corner_hz.is_finite()) {
        return Err(Error::InvalidParameter("filter corner must be > 0".into()));
    }
    if order == 0 {
        return Err(Error::InvalidParameter("filter order must be >= 1".into()));
    }
    if !(hf_ratio > 1.0) {
        return Err(Error::InvalidParameter("filter pole ratio must exceed 1".into()));
    }
    let wc = 2.0 * std::f64::consts::PI * corner_hz;
    let wh = hf_ratio * wc;
    let g = wh / wc;
    // one section: x' = -wh x + u, y = -g wh x + g u
    let (sa, sb, sc, sd) = (-wh, 1.0, -g * wh, g);
    let m = order;
    // cascade for one channel: u_i = y_{i-1}, so section i sees every
    // earlier state through the chain of feedthroughs
    let mut ca = DMatrix::zeros(m, m);
    let mut cb = DMatrix::zeros(m, 1);
    let mut cc = DMatrix::zeros(1, m);
    for i in 0..m {
        ca[(i, i)] = sa;
        for j in 0..i {
            ca[(i, j)] = sb * sc * sd.powi((i - 1 - j) as i32);
        }
        cb[(i, 0)] = sb * sd.powi(i as i32);
        cc[(0, i)] = sc * sd.powi((m - 1 - i) as i32);
    }
    let cd = sd.powi(m as i32);
    let n = 2 * m;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 2);
    let mut c = DMatrix::zeros(2, n);
    let mut d = DMatrix::zeros(2, 2);
    for ch in 0..2 {
        let o = ch * m;
        a.view_mut((o, o), (m, m)).copy_from(&ca);
        b.view_mut((o, ch), (m, 1)).copy_from(&cb);
        c.view_mut((ch, o), (1, m)).copy_from(&cc);
        d[(ch, ch)] = cd;
    }
    Ok(WeightFilter { a, b, c, d, c_q: q_selector(), order, corner_hz, hf_ratio })
}

/// State-space data of the extended system: plant, weight filter and
/// tracking integrators, with disturbance `[W; Y_ref]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub n_x: usize,
    pub n_w3: usize,
    pub n_int: usize,
}

impl ExtendedSystem {
    pub fn n(&self) -> usize {
        self.n_x + self.n_w3 + self.n_int
    }

    /// Rank of `[A, B1]`; equal to `n` when no mode at `s = 0` (in particular
    /// none of the integrator modes) is uncontrollable.
    pub fn zero_mode_rank(&self) -> usize {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n + self.b1.ncols());
        m.view_mut((0, 0), (n, n)).copy_from(&self.a);
        m.view_mut((0, n), (n, self.b1.ncols())).copy_from(&self.b1);
        // row equilibration before the rank decision
        for i in 0..n {
            let s = m.row(i).amax();
            if s > 0.0 {
                m.row_mut(i).scale_mut(1.0 / s);
            }
        }
        let sv = m.singular_values();
        let top = sv.max();
        sv.iter().filter(|s| **s > 1e-10 * top).count()
    }

    /// Rejects extended systems whose integrator subspace cannot be steered.
    pub fn check_integrator_controllability(&self) -> Result<()> {
        let r = self.zero_mode_rank();
        if r < self.n() {
            return Err(Error::Infeasible(format!(
                "integrator subspace not controllable (rank {r} < {})",
                self.n()
            )));
        }
        Ok(())
    }
}

pub fn build_extended(lin: &LinearPlant, w3: &WeightFilter) -> Result<ExtendedSystem> {
    let n_x = lin.a.nrows();
    let n_u = lin.b1.ncols();
    let n_w = lin.b2.ncols();
    let n_y = lin.c.nrows();
    if lin.a.ncols() != n_x || lin.b1.nrows() != n_x || lin.b2.nrows() != n_x || lin.c.ncols() != n_x {
        return Err(Error::DimensionMismatch("plant matrices disagree on the state dimension".into()));
    }
    if n_y != N_INT || w3.c_q.ncols() != n_y {
        return Err(Error::DimensionMismatch(format!(
            "expected {N_INT} outputs matching the Q selector, got {n_y}"
        )));
    }
    if n_u < 2 {
        return Err(Error::DimensionMismatch("need at least two control inputs".into()));
    }
    let n_w3 = w3.a.nrows();
    let n_q = w3.c_q.nrows();
    if w3.b.nrows() != n_w3 || w3.b.ncols() != n_q || w3.c.nrows() != n_q || w3.c.ncols() != n_w3 {
        return Err(Error::DimensionMismatch("weight filter matrices are inconsistent".into()));
    }
    let n = n_x + n_w3 + N_INT;
    let cqc = &w3.c_q * &lin.c;

    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n_x, n_x)).copy_from(&lin.a);
    a.view_mut((n_x, 0), (n_w3, n_x)).copy_from(&(&w3.b * &cqc));
    a.view_mut((n_x, n_x), (n_w3, n_w3)).copy_from(&w3.a);
    a.view_mut((n_x + n_w3, 0), (N_INT, n_x)).copy_from(&(-&lin.c));

    let mut b1 = DMatrix::zeros(n, n_u);
    b1.view_mut((0, 0), (n_x, n_u)).copy_from(&lin.b1);

    let mut b2 = DMatrix::zeros(n, n_w + N_INT);
    b2.view_mut((0, 0), (n_x, n_w)).copy_from(&lin.b2);
    for i in 0..N_INT {
        b2[(n_x + n_w3 + i, n_w + i)] = 1.0;
    }

    let n_z = N_INT + n_q;
    let mut c = DMatrix::zeros(n_z, n);
    c.view_mut((0, 0), (N_INT, n_x)).copy_from(&(-&lin.c));
    c.view_mut((N_INT, 0), (n_q, n_x)).copy_from(&(&w3.d * &cqc));
    c.view_mut((N_INT, n_x), (n_q, n_w3)).copy_from(&w3.c);

    let mut d1 = DMatrix::zeros(n_z, n_u);
    for i in 0..N_INT.min(n_u - 2) {
        d1[(i, 2 + i)] = 1.0;
    }
    Ok(ExtendedSystem { a, b1, b2, c, d1, n_x, n_w3, n_int: N_INT })
}

/// Writes a matrix as plain text: a `rows cols` header, then one row per line.
pub fn format_matrix(name: &str, m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {name}");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Parses the output of [`format_matrix`] (first matrix in `text`).
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let dims = lines.next().ok_or_else(|| Error::Config("empty matrix file".into()))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad matrix header `{dims}`"))))
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Config("matrix header needs `rows cols`".into()));
    }
    let (r, c) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(r * c);
    for line in lines.take(r) {
        for t in line.split_whitespace() {
            data.push(t.parse::<f64>().map_err(|_| Error::Config(format!("bad matrix entry `{t}`")))?);
        }
    }
    if data.len() != r * c {
        return Err(Error::DimensionMismatch(format!("expected {} entries, found {}", r * c, data.len())));
    }
    Ok(DMatrix::from_row_slice(r, c, &data))
}

/// Plain-text export of all extended-system matrices.
pub fn export_extended(ext: &ExtendedSystem) -> String {
    [
        format_matrix("A", &ext.a),
        format_matrix("B1", &ext.b1),
        format_matrix("B2", &ext.b2),
        format_matrix("C", &ext.c),
        format_matrix("D1", &ext.d1),
    ]
    .join("\n")
}

/// Options of the weight filter as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default = "default_corner")]
    pub corner_hz: f64,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_ratio")]
    pub hf_ratio: f64,
}

fn default_corner() -> f64 {
    50.0
}
fn default_order() -> usize {
    1
}
fn default_ratio() -> f64 {
    DEFAULT_HF_RATIO
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { corner_hz: default_corner(), order: default_order(), hf_ratio: default_ratio() }
    }
}

impl WeightConfig {
    pub fn build(&self) -> Result<WeightFilter> {
        make_rolloff_filter_with_ratio(self.corner_hz, self.order, self.hf_ratio)
    }
}

const _: () = assert!(N_STATES == 21 && N_INPUTS == 8 && N_DISTURBANCES == 3);
