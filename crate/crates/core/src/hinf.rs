//! H-infinity state-feedback synthesis through the bounded-real LMI,
//! independent norm computation and certification.

use log::{debug, info, warn};
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control_model::ExtendedSystem;
use crate::error::{Error, Result};
use crate::sdp::{Block, LinearConstraint, Outcome, Problem, Solver, SolverOptions, Term};

type C64 = Complex<f64>;

/// `G(s) = C (sI - A)⁻¹ B + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub type ClosedLoopTransfer = StateSpace;

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch("state-space matrices".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Largest singular value of `G(jω)`.
    pub fn sigma_max(&self, omega: f64) -> f64 {
        let n = self.a.nrows();
        if n == 0 {
            return self.d.singular_values().max();
        }
        let mut m: DMatrix<C64> = self.a.map(|v| C64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += C64::new(0.0, omega);
        }
        let bc: DMatrix<C64> = self.b.map(|v| C64::new(v, 0.0));
        let x = match m.lu().solve(&bc) {
            Some(x) => x,
            None => return f64::INFINITY,
        };
        let g = self.c.map(|v| C64::new(v, 0.0)) * x + self.d.map(|v| C64::new(v, 0.0));
        g.singular_values().max()
    }
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// H-infinity norm of a stable system.
///
/// A frequency-grid lower bound is raised by the level-set iteration on the
/// Hamiltonian: at level `γ = (1 + 2 tol)·lb` the imaginary eigenvalues of
/// the Hamiltonian mark the frequency intervals where `σ_max > γ`; their
/// midpoints give a better bound. The iteration ends once no imaginary
/// eigenvalue remains (the norm lies in `[lb, γ)`), and the lower bound is
/// returned.
pub fn hinf_norm(sys: &StateSpace, tol: f64) -> Result<f64> {
    let abscissa = spectral_abscissa(&sys.a);
    if !(abscissa < 0.0) {
        return Err(Error::UnstableSystem { abscissa });
    }
    let tol = tol.max(1e-12);
    let n = sys.a.nrows();
    let d_norm = if sys.d.is_empty() { 0.0 } else { sys.d.singular_values().max() };
    if n == 0 {
        return Ok(d_norm);
    }
    let mut candidates = vec![0.0];
    let eig = sys.a.complex_eigenvalues();
    for l in eig.iter() {
        let w = l.im.abs().max(l.norm());
        candidates.push(l.im.abs());
        candidates.push(w);
    }
    let lo = eig.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min).max(1e-6) * 1e-3;
    let hi = eig.iter().map(|l| l.norm()).fold(0.0, f64::max).max(1.0) * 1e3;
    let pts = 400;
    for i in 0..=pts {
        candidates.push(lo * (hi / lo).powf(i as f64 / pts as f64));
    }
    let mut lb = d_norm;
    let mut best_w = 0.0;
    for w in candidates {
        let s = sys.sigma_max(w);
        if s > lb {
            lb = s;
            best_w = w;
        }
    }
    if !lb.is_finite() {
        return Err(Error::SolverFailure("frequency response is unbounded".into()));
    }
    if lb == 0.0 {
        return Ok(0.0);
    }
    debug!("grid lower bound {lb:.9e} at {best_w:.4e} rad/s");
    for _ in 0..100 {
        let gamma = (1.0 + 2.0 * tol) * lb;
        let ws = match hamiltonian_crossings(sys, gamma) {
            Some(ws) => ws,
            None => return Ok(lb),
        };
        if ws.is_empty() {
            return Ok(lb);
        }
        let mut improved = false;
        let mut probe: Vec<f64> = Vec::new();
        for pair in ws.windows(2) {
            probe.push(0.5 * (pair[0] + pair[1]));
        }
        probe.extend(ws.iter().copied());
        for w in probe {
            let s = sys.sigma_max(w);
            if s > lb * (1.0 + 0.5 * tol) {
                lb = s;
                improved = true;
            }
        }
        if !improved {
            return Ok(lb);
        }
    }
    Ok(lb)
}

/// Sorted non-negative frequencies where the Hamiltonian at level `gamma`
/// has (numerically) imaginary eigenvalues; `None` if `gamma ≤ σ_max(D)`.
fn hamiltonian_crossings(sys: &StateSpace, gamma: f64) -> Option<Vec<f64>> {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let p = sys.c.nrows();
    let dtd = sys.d.transpose() * &sys.d;
    let r = DMatrix::<f64>::identity(m, m) * (gamma * gamma) - &dtd;
    let r_inv = r.clone().cholesky()?.inverse();
    let ddt = &sys.d * &r_inv * sys.d.transpose();
    let ae = &sys.a + &sys.b * &r_inv * sys.d.transpose() * &sys.c;
    let g = &sys.b * &r_inv * sys.b.transpose() * gamma;
    let q = sys.c.transpose() * (DMatrix::<f64>::identity(p, p) + &ddt / (gamma * gamma)) * &sys.c / gamma;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ae);
    h.view_mut((0, n), (n, n)).copy_from(&g);
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-ae.transpose()));
    let scale = h.amax().max(1.0);
    let eig = h.complex_eigenvalues();
    let mut ws: Vec<f64> = eig
        .iter()
        .filter(|l| l.re.abs() <= 1e-7 * (scale.sqrt() + l.norm()))
        .map(|l| l.im.abs())
        .collect();
    ws.sort_by(|a, b| a.total_cmp(b));
    ws.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    Some(ws)
}

/// Diagonal state and input scalings (powers of two) of an extended system.
#[derive(Debug, Clone, PartialEq)]
pub struct Balancing {
    /// `x = T x̃`
    pub t: DVector<f64>,
    /// `u = D_u ũ`
    pub du: DVector<f64>,
}

impl Balancing {
    pub fn identity(n: usize, m: usize) -> Self {
        Self { t: DVector::from_element(n, 1.0), du: DVector::from_element(m, 1.0) }
    }

    /// Computes scalings that equalize row and column norms.
    pub fn of(ext: &ExtendedSystem) -> Self {
        let n = ext.n();
        let mut bal = Self::identity(n, ext.b1.ncols());
        let pow2 = |v: f64| 2f64.powi(v.log2().round() as i32);
        for _ in 0..50 {
            let s = bal.apply(ext);
            let mut changed = false;
            for i in 0..n {
                let mut r = 0.0;
                let mut c = 0.0;
                for j in 0..n {
                    if j != i {
                        r += s.a[(i, j)].abs();
                        c += s.a[(j, i)].abs();
                    }
                }
                r += s.b1.row(i).iter().map(|v| v.abs()).sum::<f64>();
                r += s.b2.row(i).iter().map(|v| v.abs()).sum::<f64>();
                c += s.c.column(i).iter().map(|v| v.abs()).sum::<f64>();
                if r > 0.0 && c > 0.0 {
                    let f = pow2((r / c).sqrt());
                    if (f - 1.0).abs() > 0.0 && ((c * f + r / f) < 0.95 * (c + r)) {
                        bal.t[i] *= f;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let s = bal.apply(ext);
        for j in 0..s.b1.ncols() {
            let c = s.b1.column(j).amax().max(s.d1.column(j).amax());
            if c > 0.0 {
                bal.du[j] = pow2(1.0 / c);
            }
        }
        bal
    }

    /// The scaled system `(T⁻¹AT, T⁻¹B1 Du, T⁻¹B2, CT, D1 Du)`.
    pub fn apply(&self, ext: &ExtendedSystem) -> ExtendedSystem {
        let n = ext.n();
        let mut s = ext.clone();
        for j in 0..n {
            for i in 0..n {
                s.a[(i, j)] *= self.t[j] / self.t[i];
            }
        }
        for i in 0..n {
            for j in 0..s.b1.ncols() {
                s.b1[(i, j)] *= self.du[j] / self.t[i];
            }
            for j in 0..s.b2.ncols() {
                s.b2[(i, j)] /= self.t[i];
            }
        }
        for j in 0..n {
            for i in 0..s.c.nrows() {
                s.c[(i, j)] *= self.t[j];
            }
        }
        for j in 0..s.d1.ncols() {
            for i in 0..s.d1.nrows() {
                s.d1[(i, j)] *= self.du[j];
            }
        }
        s
    }

    /// Gain of the original coordinates from a gain of the scaled ones.
    pub fn unscale_gain(&self, k_scaled: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = k_scaled.clone();
        for j in 0..k.ncols() {
            for i in 0..k.nrows() {
                k[(i, j)] *= self.du[i] / self.t[j];
            }
        }
        k
    }

    /// `(X, W)` of the original coordinates: `X = T X̃ T`, `W = Du W̃ T`.
    pub fn unscale_certificate(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut xo = x.clone();
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                xo[(i, j)] *= self.t[i] * self.t[j];
            }
        }
        let mut wo = w.clone();
        for j in 0..w.ncols() {
            for i in 0..w.nrows() {
                wo[(i, j)] *= self.du[i] * self.t[j];
            }
        }
        (xo, wo)
    }

    pub fn scale_certificate(&self, x: &DMatrix<f64>, w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let inv = Self { t: self.t.map(|v| 1.0 / v), du: self.du.map(|v| 1.0 / v) };
        inv.unscale_certificate(x, w)
    }
}

/// The matrix of the synthesis LMI (negative definite when the
/// certificate is valid).
pub fn theorem1_matrix(ext: &ExtendedSystem, x: &DMatrix<f64>, w: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = ext.n();
    let nw = ext.b2.ncols();
    let nz = ext.c.nrows();
    let m = n + nw + nz;
    let axbw = &ext.a * x + &ext.b1 * w;
    let psi = &axbw + axbw.transpose();
    let y = &ext.c * x + &ext.d1 * w;
    let mut l = DMatrix::zeros(m, m);
    l.view_mut((0, 0), (n, n)).copy_from(&psi);
    l.view_mut((0, n), (n, nw)).copy_from(&ext.b2);
    l.view_mut((n, 0), (nw, n)).copy_from(&ext.b2.transpose());
    l.view_mut((0, n + nw), (n, nz)).copy_from(&y.transpose());
    l.view_mut((n + nw, 0), (nz, n)).copy_from(&y);
    for i in n..m {
        l[(i, i)] = -gamma;
    }
    l
}

/// Closed loop `(A + B1 K, B2, C + D1 K, 0)`.
pub fn closed_loop(ext: &ExtendedSystem, k: &DMatrix<f64>) -> Result<StateSpace> {
    if k.nrows() != ext.b1.ncols() || k.ncols() != ext.n() {
        return Err(Error::DimensionMismatch(format!(
            "gain is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            ext.b1.ncols(),
            ext.n()
        )));
    }
    StateSpace::new(
        &ext.a + &ext.b1 * k,
        ext.b2.clone(),
        &ext.c + &ext.d1 * k,
        DMatrix::zeros(ext.c.nrows(), ext.b2.ncols()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaStrategy {
    /// γ as a decision variable.
    Direct,
    /// Bisection over feasibility problems.
    Bisection,
    /// Both, with the bisection result used as a cross-check.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    pub gamma_tol: f64,
    /// Strictness margin of the LMIs in balanced coordinates.
    pub epsilon: f64,
    /// Feasibility radius: `X ≼ x_max·I` in balanced coordinates.
    pub x_max: f64,
    /// Feasibility radius: `‖W‖₂ ≤ w_max` in balanced coordinates.
    pub w_max: f64,
    /// Upper bound on γ during the feasibility phase.
    pub gamma_cap: f64,
    pub strategy: GammaStrategy,
    pub balance: bool,
    /// Extra Lyapunov constraint `(A_cl + αP)X + X(A_cl + αP)ᵀ ≺ 0` on the
    /// same `X`, with `P` selecting the integrator states. The integrators
    /// do not enter the performance output, so without it their modes sit
    /// near the origin. Zero disables it.
    pub decay_rate: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            gamma_tol: 1e-3,
            epsilon: 1e-9,
            x_max: 1e4,
            w_max: 1e4,
            gamma_cap: 1e8,
            strategy: GammaStrategy::Direct,
            balance: true,
            decay_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolverStatus {
    pub newton_steps: usize,
    pub gap_bound: f64,
    pub gamma_direct: Option<f64>,
    pub gamma_bisection: Option<f64>,
    pub bisection_steps: usize,
    /// Largest eigenvalue of the LMI in balanced coordinates.
    pub lmi_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub k: DMatrix<f64>,
    pub gamma: f64,
    pub x_p: DMatrix<f64>,
    pub w_p: DMatrix<f64>,
    pub status: SolverStatus,
}

/// Which LMI family to build in balanced coordinates.
enum Mode {
    /// Scalars `[γ, s]`, minimize `s`.
    PhaseOne,
    /// Scalar `[γ]`, minimize `γ`.
    MinGamma,
    /// Scalar `[s]` at fixed γ, minimize `s`.
    Fixed(f64),
}

fn build_problem(s: &ExtendedSystem, mode: &Mode, opts: &SynthesisOptions) -> Problem {
    let n = s.n();
    let nu = s.b1.ncols();
    let nw = s.b2.ncols();
    let nz = s.c.nrows();
    let m = n + nw + nz;
    let mut f0 = DMatrix::identity(m, m) * opts.epsilon;
    f0.view_mut((0, n), (n, nw)).copy_from(&s.b2);
    f0.view_mut((n, 0), (nw, n)).copy_from(&s.b2.transpose());
    let mut left = DMatrix::zeros(m, n + nu);
    left.view_mut((0, 0), (n, n)).copy_from(&s.a);
    left.view_mut((0, n), (n, nu)).copy_from(&s.b1);
    left.view_mut((n + nw, 0), (nz, n)).copy_from(&s.c);
    left.view_mut((n + nw, n), (nz, nu)).copy_from(&s.d1);
    let mut right = DMatrix::zeros(m, n);
    right.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut j = DMatrix::zeros(m, m);
    for i in n..m {
        j[(i, i)] = -1.0;
    }
    let neg_i_m = -DMatrix::<f64>::identity(m, m);
    let neg_i_n = -DMatrix::<f64>::identity(n, n);

    let mut xl = DMatrix::zeros(n, n + nu);
    xl.view_mut((0, 0), (n, n)).fill_with_identity();
    xl *= -0.5;
    let x_term = Term { left: xl, right: DMatrix::identity(n, n) };
    let x_f0 = DMatrix::identity(n, n) * opts.epsilon;

    let (scalars_l, scalars_x, cost) = match mode {
        Mode::PhaseOne => (vec![j, neg_i_m], vec![DMatrix::zeros(n, n), neg_i_n], vec![0.0, 1.0]),
        Mode::MinGamma => (vec![j], vec![DMatrix::zeros(n, n)], vec![1.0]),
        Mode::Fixed(g) => {
            f0 += &j * *g;
            (vec![neg_i_m], vec![neg_i_n], vec![1.0])
        }
    };
    let lmi = Block { f0, terms: vec![Term { left, right }], scalars: scalars_l };
    let pos = Block { f0: x_f0, terms: vec![x_term], scalars: scalars_x };
    let mut rl = DMatrix::zeros(n, n + nu);
    rl.view_mut((0, 0), (n, n)).fill_with_identity();
    rl *= 0.5;
    let radius = Block {
        f0: DMatrix::identity(n, n) * -opts.x_max,
        terms: vec![Term { left: rl, right: DMatrix::identity(n, n) }],
        scalars: vec![DMatrix::zeros(n, n); cost.len()],
    };
    let mut wl = DMatrix::zeros(nu + n, n + nu);
    wl.view_mut((0, n), (nu, nu)).fill_with_identity();
    let mut wr = DMatrix::zeros(nu + n, n);
    wr.view_mut((nu, 0), (n, n)).fill_with_identity();
    let w_bound = Block {
        f0: DMatrix::identity(nu + n, nu + n) * -opts.w_max,
        terms: vec![Term { left: wl, right: wr }],
        scalars: vec![DMatrix::zeros(nu + n, nu + n); cost.len()],
    };
    let mut blocks = vec![lmi, pos, radius];
    if nu > 0 {
        blocks.push(w_bound);
    }
    if opts.decay_rate > 0.0 && s.n_int > 0 {
        let mut dl = DMatrix::zeros(n, n + nu);
        dl.view_mut((0, 0), (n, n)).copy_from(&s.a);
        dl.view_mut((0, n), (n, nu)).copy_from(&s.b1);
        for i in n - s.n_int..n {
            dl[(i, i)] += opts.decay_rate;
        }
        let sc = match mode {
            Mode::PhaseOne => vec![DMatrix::zeros(n, n), -DMatrix::<f64>::identity(n, n)],
            Mode::MinGamma => vec![DMatrix::zeros(n, n)],
            Mode::Fixed(_) => vec![-DMatrix::<f64>::identity(n, n)],
        };
        blocks.push(Block {
            f0: DMatrix::identity(n, n) * opts.epsilon,
            terms: vec![Term { left: dl, right: DMatrix::identity(n, n) }],
            scalars: sc,
        });
    }
    let mut prob = Problem {
        z_rows: n + nu,
        z_cols: n,
        n_scalars: cost.len(),
        blocks,
        linear: vec![],
        cost,
    };
    let np = prob.n_params();
    if let Mode::PhaseOne = mode {
        let mut g = DVector::zeros(np);
        g[prob.scalar_index(0)] = 1.0;
        prob.linear.push(LinearConstraint { a: g, b: opts.gamma_cap });
    }
    prob
}

/// Strictly feasible start `(X = I, W = 0)` with the slack above the
/// largest LMI eigenvalue.
fn phase_one_start(prob: &Problem, gamma: Option<f64>) -> DVector<f64> {
    let n = prob.z_cols;
    let z = {
        let mut z = DMatrix::zeros(prob.z_rows, n);
        z.view_mut((0, 0), (n, n)).fill_with_identity();
        z
    };
    start_with_slack(prob, &z, gamma)
}

fn start_with_slack(prob: &Problem, z: &DMatrix<f64>, gamma: Option<f64>) -> DVector<f64> {
    let mut sc: Vec<f64> = match gamma {
        Some(g) => vec![g, 0.0],
        None => vec![0.0],
    };
    let mut worst = f64::NEG_INFINITY;
    for b in &prob.blocks {
        let f = prob.eval_block(b, z, &sc);
        let f = 0.5 * (&f + f.transpose());
        worst = worst.max(f.symmetric_eigenvalues().max());
    }
    let last = sc.len() - 1;
    sc[last] = worst + (0.1 * worst.abs()).max(1.0);
    prob.pack(z, &sc)
}

/// Minimizes γ for the extended system; returns the certified gain.
pub fn synthesize(ext: &ExtendedSystem, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let n = ext.n();
    let nu = ext.b1.ncols();
    let bal = if opts.balance { Balancing::of(ext) } else { Balancing::identity(n, nu) };
    let s = bal.apply(ext);
    let mut status = SolverStatus::default();

    let (z_best, gamma) = match opts.strategy {
        GammaStrategy::Direct => direct(&s, opts, &mut status)?,
        GammaStrategy::Bisection => bisection(&s, opts, &mut status, None)?,
        GammaStrategy::Both => {
            let (zd, gd) = direct(&s, opts, &mut status)?;
            let (_, gb) = bisection(&s, opts, &mut status, Some(&zd))?;
            let rel = (gd - gb).abs() / gd.max(gb);
            if rel > opts.gamma_tol {
                warn!("direct γ = {gd:.9e} and bisection γ = {gb:.9e} differ by {rel:.3e}");
            }
            (zd, gd)
        }
    };

    let x_s = z_best.view((0, 0), (n, n)).into_owned();
    let w_s = z_best.view((n, 0), (nu, n)).into_owned();
    status.lmi_residual = theorem1_matrix(&s, &x_s, &w_s, gamma).symmetric_eigenvalues().max();
    let x_inv = x_s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("certificate X is not positive definite".into()))?
        .inverse();
    let k_s = &w_s * x_inv;
    let k = bal.unscale_gain(&k_s);
    let (x_p, w_p) = bal.unscale_certificate(&x_s, &w_s);
    info!("synthesis finished: γ = {gamma:.6e}, LMI residual {:.3e}", status.lmi_residual);
    Ok(SynthesisResult { k, gamma, x_p, w_p, status })
}

fn direct(s: &ExtendedSystem, opts: &SynthesisOptions, status: &mut SolverStatus) -> Result<(DMatrix<f64>, f64)> {
    let p1 = build_problem(s, &Mode::PhaseOne, opts);
    let mut theta = phase_one_start(&p1, Some(1.0));
    let idx_s = p1.scalar_index(1);
    let margin = 1e-3;
    let solver_opts = SolverOptions { gap_tol: 1e-6, ..Default::default() };
    let mut solver = Solver::new(&p1, solver_opts)?;
    let out = solver.solve(&mut theta, &|th: &DVector<f64>| th[idx_s] < -margin, Some(0.0))?;
    status.newton_steps += solver.stats.newton_steps;
    match out {
        Outcome::BoundExceeded { lower_bound } => {
            return Err(Error::Infeasible(format!(
                "no stabilizing state feedback: LMI slack is bounded below by {lower_bound:.3e}"
            )))
        }
        _ if theta[idx_s] >= 0.0 => {
            return Err(Error::Infeasible(format!("LMI slack stalled at {:.3e}", theta[idx_s])))
        }
        _ => {}
    }
    let (z, sc) = p1.unpack(&theta);
    debug!("phase one done at γ = {:.4e}, slack {:.3e}", sc[0], sc[1]);

    let p2 = build_problem(s, &Mode::MinGamma, opts);
    let mut theta2 = p2.pack(&z, &sc[..1]);
    // gap tolerance relative to the current γ
    let mut solver = Solver::new(&p2, SolverOptions { gap_tol: 1e-12, gap_rel: opts.gamma_tol * 1e-2, t0: (p2.degree() as f64) / sc[0].max(1e-9), ..Default::default() })?;
    solver.solve(&mut theta2, &|_| false, None)?;
    status.newton_steps += solver.stats.newton_steps;
    status.gap_bound = solver.stats.gap_bound;
    let (z2, sc2) = p2.unpack(&theta2);
    status.gamma_direct = Some(sc2[0]);
    Ok((z2, sc2[0]))
}

/// Feasibility of the fixed-γ LMI; returns the strictly feasible point.
fn feasible_at(
    s: &ExtendedSystem,
    gamma: f64,
    opts: &SynthesisOptions,
    warm: Option<&DMatrix<f64>>,
    status: &mut SolverStatus,
) -> Result<Option<DMatrix<f64>>> {
    let prob = build_problem(s, &Mode::Fixed(gamma), opts);
    let mut theta = match warm {
        Some(z) => start_with_slack(&prob, z, None),
        None => phase_one_start(&prob, None),
    };
    let idx_s = prob.scalar_index(0);
    let margin = 1e-6;
    let mut solver = Solver::new(&prob, SolverOptions { gap_tol: 1e-9, ..Default::default() })?;
    let out = solver.solve(&mut theta, &|th: &DVector<f64>| th[idx_s] < -margin, Some(0.0));
    status.newton_steps += solver.stats.newton_steps;
    match out {
        Ok(Outcome::BoundExceeded { .. }) => Ok(None),
        Ok(_) if theta[idx_s] < 0.0 => Ok(Some(prob.unpack(&theta).0)),
        Ok(_) => Ok(None),
        Err(e) => {
            debug!("feasibility solve at γ = {gamma:.6e} failed: {e}");
            Ok(None)
        }
    }
}

fn bisection(
    s: &ExtendedSystem,
    opts: &SynthesisOptions,
    status: &mut SolverStatus,
    hint: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, f64)> {
    // find a feasible upper level
    let mut hi = 1.0;
    let mut z_hi = None;
    let mut warm: Option<DMatrix<f64>> = hint.cloned();
    for _ in 0..40 {
        status.bisection_steps += 1;
        if let Some(z) = feasible_at(s, hi, opts, warm.as_ref(), status)? {
            z_hi = Some(z);
            break;
        }
        hi *= 10.0;
        if hi > opts.gamma_cap {
            break;
        }
    }
    let mut z_hi = z_hi.ok_or_else(|| Error::Infeasible("no feasible γ below the cap".into()))?;
    let mut lo = hi * 1e-8;
    warm = Some(z_hi.clone());
    while (hi - lo) / hi > 0.2 * opts.gamma_tol {
        status.bisection_steps += 1;
        let mid = (lo * hi).sqrt();
        let mid = if hi / lo > 4.0 { mid } else { 0.5 * (lo + hi) };
        match feasible_at(s, mid, opts, warm.as_ref(), status)? {
            Some(z) => {
                hi = mid;
                warm = Some(z.clone());
                z_hi = z;
            }
            None => lo = mid,
        }
    }
    status.gamma_bisection = Some(hi);
    Ok((z_hi, hi))
}

/// Outcome of the independent checks on a synthesized controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub spectral_abscissa: f64,
    pub hurwitz: bool,
    pub hinf_norm: Option<f64>,
    pub gamma: f64,
    pub norm_within_gamma: bool,
    /// Largest eigenvalue of the LMI in balanced coordinates.
    pub lmi_residual: f64,
    pub lmi_negative: bool,
    pub x_min_eigenvalue: f64,
    pub x_positive: bool,
    pub passed: bool,
}

pub fn certify(ext: &ExtendedSystem, result: &SynthesisResult) -> CertificateReport {
    let mut report = CertificateReport {
        spectral_abscissa: f64::NAN,
        hurwitz: false,
        hinf_norm: None,
        gamma: result.gamma,
        norm_within_gamma: false,
        lmi_residual: f64::NAN,
        lmi_negative: false,
        x_min_eigenvalue: f64::NAN,
        x_positive: false,
        passed: false,
    };
    let cl = match closed_loop(ext, &result.k) {
        Ok(cl) => cl,
        Err(_) => return report,
    };
    report.spectral_abscissa = spectral_abscissa(&cl.a);
    report.hurwitz = report.spectral_abscissa < 0.0;
    if report.hurwitz {
        if let Ok(norm) = hinf_norm(&cl, 1e-8) {
            report.hinf_norm = Some(norm);
            report.norm_within_gamma = norm <= result.gamma * (1.0 + 1e-6);
        }
    }
    if result.x_p.nrows() == ext.n() && result.w_p.nrows() == ext.b1.ncols() {
        let bal = Balancing::of(ext);
        let s = bal.apply(ext);
        let (xs, ws) = bal.scale_certificate(&result.x_p, &result.w_p);
        let xs = 0.5 * (&xs + xs.transpose());
        report.lmi_residual = theorem1_matrix(&s, &xs, &ws, result.gamma).symmetric_eigenvalues().max();
        report.lmi_negative = report.lmi_residual < 0.0;
        let xp = 0.5 * (&result.x_p + result.x_p.transpose());
        report.x_min_eigenvalue = xp.symmetric_eigenvalues().min();
        report.x_positive = report.x_min_eigenvalue > 0.0;
    }
    report.passed = report.hurwitz && report.norm_within_gamma && report.lmi_negative && report.x_positive;
    report
}

/// `ΔU = K [Δx; x_w3; Int_e]`.
pub fn controller_step(k: &DMatrix<f64>, dx: &[f64], xw: &[f64], int_e: &[f64]) -> Result<DVector<f64>> {
    let n = dx.len() + xw.len() + int_e.len();
    if k.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "gain has {} columns, extended state has {n}",
            k.ncols()
        )));
    }
    let z = DVector::from_iterator(n, dx.iter().chain(xw).chain(int_e).copied());
    Ok(k * z)
}

/// Feasibility of the bounded-real LMI for a fixed closed loop
/// `(A, B, C)` at level γ (no feedthrough), searching over `X ≻ 0`.
pub fn bounded_real_feasible(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, gamma: f64) -> Result<bool> {
    let n = a.nrows();
    let ext = ExtendedSystem {
        a: a.clone(),
        b1: DMatrix::zeros(n, 0),
        b2: b.clone(),
        c: c.clone(),
        d1: DMatrix::zeros(c.nrows(), 0),
        n_x: n,
        n_w3: 0,
        n_int: 0,
    };
    let opts = SynthesisOptions::default();
    let mut status = SolverStatus::default();
    Ok(feasible_at(&ext, gamma, &opts, None, &mut status)?.is_some())
}
