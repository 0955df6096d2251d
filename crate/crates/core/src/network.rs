//! Algebraic network coupling between the two PMSG terminals and the grid
//! equivalent bus.
//!
//! The physical network is a star: PMSG1 terminal r1 and PMSG2 terminal r2
//! connect through line reactances `X_1`, `X_2` to a common bus A, which
//! reaches the grid equivalent bus B (voltage `V`, on the d axis of the
//! frame rotating at the grid frequency) through `X_inf`. The internal node A
//! (and, under a fault, the split line) is eliminated by Kron reduction,
//! leaving terminal voltages and the power delivered to bus B as linear
//! functions of the converter-side grid currents and `V`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// Raw reactances of the star network (pu on the PMSG base).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarNetwork {
    /// Grid equivalent bus voltage magnitude.
    pub v: f64,
    pub x_inf: f64,
    pub x_1: f64,
    pub x_2: f64,
}

impl StarNetwork {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("x_inf", self.x_inf), ("x_1", self.x_1), ("x_2", self.x_2)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidParameter(format!("network reactance {name} must be > 0")));
            }
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(Error::InvalidParameter("network voltage v must be > 0".into()));
        }
        Ok(())
    }
}

/// Line that can carry a bolted three-phase fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Line {
    #[serde(rename = "X1")]
    X1,
    #[serde(rename = "X2")]
    X2,
    #[serde(rename = "Xinf")]
    XInf,
}

/// Metallic short circuit at `fraction` of the line length, measured from
/// the PMSG end (from bus A for `X_inf`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub line: Line,
    pub fraction: f64,
}

/// Terminal-voltage rows, in order (r1 d, r1 q, r2 d, r2 q).
pub const TERMINAL_ROWS: [&str; 4] = ["r1d", "r1q", "r2d", "r2q"];

/// Linear network reduction used by the grid-side current equations and by
/// the injected-power expression.
///
/// `terminal[row]` holds `(a_r, b_r, c_r, d_r, e_r)` such that the terminal
/// voltage component equals `a_r*i_21d + b_r*i_21q + c_r*i_22d + d_r*i_22q +
/// e_r*V`; `power` holds `(a_Pe, b_Pe, c_Pe, d_Pe)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCoupling {
    pub topology: StarNetwork,
    /// Transformer ratios `n_1`, `n_2` (converter side / grid side).
    pub turns: [f64; 2],
    pub fault: Option<Fault>,
    pub terminal: [[f64; 5]; 4],
    pub power: [f64; 4],
}

impl NetworkCoupling {
    /// Derives the coupling coefficients of the healthy network.
    pub fn from_topology(topology: StarNetwork, turns: [f64; 2]) -> Result<Self> {
        Self::derive(topology, turns, None)
    }

    fn derive(topology: StarNetwork, turns: [f64; 2], fault: Option<Fault>) -> Result<Self> {
        topology.validate()?;
        if turns.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(Error::InvalidParameter("transformer ratio n must be > 0".into()));
        }
        let net = ReactanceNetwork::star(&topology, fault)?;
        let red = net.reduce()?;
        let mut terminal = [[0.0; 5]; 4];
        for k in 0..2 {
            let mut d = [0.0; 5];
            let mut q = [0.0; 5];
            for j in 0..2 {
                let z = red.z[(k, j)] / turns[j];
                d[2 * j] = z.re;
                d[2 * j + 1] = -z.im;
                q[2 * j] = z.im;
                q[2 * j + 1] = z.re;
            }
            d[4] = red.e[k].re;
            q[4] = red.e[k].im;
            terminal[2 * k] = d;
            terminal[2 * k + 1] = q;
        }
        let mut power = [0.0; 4];
        for j in 0..2 {
            let g = red.g[j] / turns[j];
            power[2 * j] = 1.5 * topology.v * g.re;
            power[2 * j + 1] = -1.5 * topology.v * g.im;
        }
        Ok(Self { topology, turns, fault, terminal, power })
    }

    /// Terminal voltage `(v_d, v_q)` at PMSG `k` (0-based) on the grid side of
    /// its transformer.
    #[inline]
    pub fn terminal_voltage(&self, k: usize, i2: [f64; 4]) -> (f64, f64) {
        let row = |r: &[f64; 5]| {
            r[0] * i2[0] + r[1] * i2[1] + r[2] * i2[2] + r[3] * i2[3] + r[4] * self.topology.v
        };
        (row(&self.terminal[2 * k]), row(&self.terminal[2 * k + 1]))
    }

    /// Power delivered to the grid equivalent bus, `i2 = (i_21d, i_21q, i_22d, i_22q)`.
    #[inline]
    pub fn injected_power(&self, i2: [f64; 4]) -> f64 {
        self.power[0] * i2[0] + self.power[1] * i2[1] + self.power[2] * i2[2] + self.power[3] * i2[3]
    }

    /// Re-derives the coefficients from the stored reactances and checks they
    /// agree with the stored ones.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        let fresh = Self::derive(self.topology, self.turns, self.fault)?;
        let stored = self.terminal.iter().flatten().chain(self.power.iter());
        let derived = fresh.terminal.iter().flatten().chain(fresh.power.iter());
        let worst = stored
            .zip(derived)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        if worst > tol {
            return Err(Error::InvalidParameter(format!(
                "network coefficients inconsistent with reactances (max deviation {worst:.3e})"
            )));
        }
        Ok(())
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }
}

/// Returns the coupling of the faulted topology: a zero-voltage node is
/// inserted at `fraction` along `line` and eliminated by Kron reduction.
pub fn apply_short_circuit(net: &NetworkCoupling, line: Line, fraction: f64) -> Result<NetworkCoupling> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fault location fraction must lie in (0, 1), got {fraction}"
        )));
    }
    NetworkCoupling::derive(net.topology, net.turns, Some(Fault { line, fraction }))
}

/// Returns the healthy-network coupling for the same topology.
pub fn clear_short_circuit(net: &NetworkCoupling) -> Result<NetworkCoupling> {
    NetworkCoupling::derive(net.topology, net.turns, None)
}

/// Node indices used by [`ReactanceNetwork::star`].
pub mod node {
    pub const R1: usize = 0;
    pub const R2: usize = 1;
    pub const A: usize = 2;
    pub const B: usize = 3;
    pub const FAULT: usize = 4;
}

/// Purely reactive network with two current-injection ports, one source bus
/// of fixed voltage and optionally grounded nodes.
#[derive(Debug, Clone)]
pub struct ReactanceNetwork {
    pub n_nodes: usize,
    /// `(from, to, reactance)`.
    pub branches: Vec<(usize, usize, f64)>,
    pub ports: [usize; 2],
    /// Source bus carrying the grid equivalent voltage.
    pub source: usize,
    pub source_voltage: f64,
    /// Nodes held at zero voltage.
    pub grounded: Vec<usize>,
}

/// Kron-reduced description of a [`ReactanceNetwork`]:
/// `v_port = z * I_port + e * V` and `I_source = g . I_port + y_ss * V`.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub z: DMatrix<C64>,
    pub e: [C64; 2],
    pub g: [C64; 2],
    pub y_ss: C64,
}

impl ReactanceNetwork {
    pub fn star(t: &StarNetwork, fault: Option<Fault>) -> Result<Self> {
        use node::*;
        let mut branches = Vec::with_capacity(4);
        let mut grounded = Vec::new();
        let lines = [(Line::X1, R1, A, t.x_1), (Line::X2, R2, A, t.x_2), (Line::XInf, A, B, t.x_inf)];
        for (line, from, to, x) in lines {
            match fault {
                Some(f) if f.line == line => {
                    branches.push((from, FAULT, f.fraction * x));
                    branches.push((FAULT, to, (1.0 - f.fraction) * x));
                    grounded.push(FAULT);
                }
                _ => branches.push((from, to, x)),
            }
        }
        let n_nodes = if grounded.is_empty() { 4 } else { 5 };
        Ok(Self { n_nodes, branches, ports: [R1, R2], source: B, source_voltage: t.v, grounded })
    }

    /// Full nodal admittance matrix (all nodes, including fixed ones).
    pub fn admittance(&self) -> DMatrix<C64> {
        let mut y = DMatrix::<C64>::zeros(self.n_nodes, self.n_nodes);
        for &(a, b, x) in &self.branches {
            let yb = C64::new(0.0, -1.0 / x);
            y[(a, a)] += yb;
            y[(b, b)] += yb;
            y[(a, b)] -= yb;
            y[(b, a)] -= yb;
        }
        y
    }

    /// Eliminates every node that is neither a port nor fixed.
    pub fn reduce(&self) -> Result<ReducedNetwork> {
        let y = self.admittance();
        let fixed = |n: usize| n == self.source || self.grounded.contains(&n);
        let internal: Vec<usize> =
            (0..self.n_nodes).filter(|n| !fixed(*n) && !self.ports.contains(n)).collect();
        let p = self.ports;
        let ni = internal.len();

        let sub = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
        };
        let y_pp = sub(&p, &p);
        let y_pi = sub(&p, &internal);
        let y_ip = sub(&internal, &p);
        let y_ii = sub(&internal, &internal);
        let y_ps = sub(&p, &[self.source]);
        let y_is = sub(&internal, &[self.source]);

        let (y_red, src) = if ni > 0 {
            let lu = y_ii.clone().lu();
            let ii_ip = lu.solve(&y_ip).ok_or_else(|| singular("internal block"))?;
            let ii_is = lu.solve(&y_is).ok_or_else(|| singular("internal block"))?;
            (&y_pp - &y_pi * &ii_ip, -(&y_ps - &y_pi * &ii_is))
        } else {
            (y_pp.clone(), -y_ps.clone())
        };
        let z = y_red.try_inverse().ok_or_else(|| singular("reduced admittance"))?;
        let e_col = &z * &src;
        let e = [e_col[(0, 0)], e_col[(1, 0)]];

        // Internal voltages as a linear map of (I1, I2, V).
        let mut v_lin = DMatrix::<C64>::zeros(self.n_nodes, 3);
        for (r, &node) in p.iter().enumerate() {
            v_lin[(node, 0)] = z[(r, 0)];
            v_lin[(node, 1)] = z[(r, 1)];
            v_lin[(node, 2)] = e[r];
        }
        v_lin[(self.source, 2)] = C64::new(1.0, 0.0);
        if ni > 0 {
            let mut rhs = DMatrix::<C64>::zeros(ni, 3);
            for c in 0..3 {
                for (ri, _) in internal.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (rp, &pn) in p.iter().enumerate() {
                        acc -= y_ip[(ri, rp)] * v_lin[(pn, c)];
                    }
                    acc -= y_is[(ri, 0)] * v_lin[(self.source, c)];
                    rhs[(ri, c)] = acc;
                }
            }
            let v_i = y_ii.lu().solve(&rhs).ok_or_else(|| singular("internal block"))?;
            for (ri, &node) in internal.iter().enumerate() {
                for c in 0..3 {
                    v_lin[(node, c)] = v_i[(ri, c)];
                }
            }
        }

        // Current flowing into the source bus from the network.
        let mut i_src = [C64::new(0.0, 0.0); 3];
        for &(a, b, x) in &self.branches {
            let other = if a == self.source {
                b
            } else if b == self.source {
                a
            } else {
                continue;
            };
            let yb = C64::new(0.0, -1.0 / x);
            for (c, slot) in i_src.iter_mut().enumerate() {
                *slot += yb * (v_lin[(other, c)] - v_lin[(self.source, c)]);
            }
        }
        Ok(ReducedNetwork { z, e, g: [i_src[0], i_src[1]], y_ss: i_src[2] })
    }
}

fn singular(what: &str) -> Error {
    Error::InvalidParameter(format!("network {what} is singular"))
}
