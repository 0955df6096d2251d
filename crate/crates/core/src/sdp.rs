//! Small primal barrier-method solver for LMI problems over a matrix
//! variable `Z = [X; W]` (with `X` symmetric) and a few scalar variables.
//!
//! Every constraint block is `F(θ) = F0 + Σ_k (L_k Z R_kᵀ + R_k Zᵀ L_kᵀ) +
//! Σ_j s_j G_j ≺ 0`. The objective is linear in the scalars only.
//! Gradient and Hessian of `-log det(-F)` are formed directly from the
//! factors `L_k, R_k`, which keeps the Newton system cheap for the
//! 29-state synthesis problem.

use log::{debug, trace, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// One congruence-type term `L Z Rᵀ + R Zᵀ Lᵀ`.
#[derive(Debug, Clone)]
pub struct Term {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub f0: DMatrix<f64>,
    pub terms: Vec<Term>,
    /// Coefficient matrix of each scalar variable (may be zero).
    pub scalars: Vec<DMatrix<f64>>,
}

impl Block {
    pub fn size(&self) -> usize {
        self.f0.nrows()
    }
}

/// A scalar constraint `aᵀθ ≤ b` on the parameter vector.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct Problem {
    /// Rows of `Z`; the leading `z_cols` rows are the symmetric `X`.
    pub z_rows: usize,
    pub z_cols: usize,
    pub n_scalars: usize,
    pub blocks: Vec<Block>,
    pub linear: Vec<LinearConstraint>,
    /// Cost on the scalar variables.
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_newton: usize,
    /// Barrier parameter growth per outer step.
    pub mu: f64,
    pub t0: f64,
    /// Stop when the duality-gap bound drops below
    /// `gap_tol + gap_rel·|objective|`.
    pub gap_tol: f64,
    pub gap_rel: f64,
    /// Newton decrement (squared, halved) accepted as centred.
    pub center_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_newton: 400, mu: 8.0, t0: 1.0, gap_tol: 1e-7, gap_rel: 0.0, center_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub newton_steps: usize,
    pub outer_steps: usize,
    pub final_t: f64,
    pub gap_bound: f64,
}

/// Where the barrier iteration ended.
#[derive(Debug, Clone)]
pub enum Outcome {
    /// Central point with gap bound below tolerance.
    Optimal,
    /// A stopping predicate fired early (e.g. phase-I slack below zero).
    Stopped,
    /// Lower bound on the optimum exceeds a threshold.
    BoundExceeded { lower_bound: f64 },
    /// Centring ran out of Newton steps; the last central point is returned
    /// with its gap bound in the stats.
    Stalled,
}

impl Problem {
    pub fn n_x_params(&self) -> usize {
        self.z_cols * (self.z_cols + 1) / 2
    }

    pub fn n_params(&self) -> usize {
        self.n_x_params() + (self.z_rows - self.z_cols) * self.z_cols + self.n_scalars
    }

    pub fn scalar_index(&self, j: usize) -> usize {
        self.n_x_params() + (self.z_rows - self.z_cols) * self.z_cols + j
    }

    /// Barrier degree: total block size plus scalar constraints.
    pub fn degree(&self) -> usize {
        self.blocks.iter().map(Block::size).sum::<usize>() + self.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_rows < self.z_cols || self.cost.len() != self.n_scalars {
            return Err(Error::DimensionMismatch("SDP variable layout".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let m = b.size();
            if b.f0.ncols() != m || b.scalars.len() != self.n_scalars {
                return Err(Error::DimensionMismatch(format!("SDP block {i}")));
            }
            for t in &b.terms {
                if t.left.nrows() != m
                    || t.right.nrows() != m
                    || t.left.ncols() != self.z_rows
                    || t.right.ncols() != self.z_cols
                {
                    return Err(Error::DimensionMismatch(format!("SDP term in block {i}")));
                }
            }
            if b.scalars.iter().any(|g| g.nrows() != m || g.ncols() != m) {
                return Err(Error::DimensionMismatch(format!("SDP scalar coefficient in block {i}")));
            }
        }
        if self.linear.iter().any(|l| l.a.len() != self.n_params()) {
            return Err(Error::DimensionMismatch("SDP linear constraint length".into()));
        }
        Ok(())
    }

    /// Unpacks `θ` into `Z` and the scalar values.
    pub fn unpack(&self, theta: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.z_cols;
        let mut z = DMatrix::zeros(self.z_rows, n);
        let mut i = 0;
        for b in 0..n {
            for a in 0..=b {
                z[(a, b)] = theta[i];
                z[(b, a)] = theta[i];
                i += 1;
            }
        }
        for q in 0..n {
            for p in n..self.z_rows {
                z[(p, q)] = theta[i];
                i += 1;
            }
        }
        let s = (0..self.n_scalars).map(|j| theta[i + j]).collect();
        (z, s)
    }

    /// Inverse of [`Problem::unpack`]; `z`'s X block is symmetrized.
    pub fn pack(&self, z: &DMatrix<f64>, s: &[f64]) -> DVector<f64> {
        let n = self.z_cols;
        let mut theta = DVector::zeros(self.n_params());
        let mut i = 0;
        for b in 0..n {
            for a in 0..=b {
                theta[i] = 0.5 * (z[(a, b)] + z[(b, a)]);
                i += 1;
            }
        }
        for q in 0..n {
            for p in n..self.z_rows {
                theta[i] = z[(p, q)];
                i += 1;
            }
        }
        for (j, v) in s.iter().enumerate() {
            theta[i + j] = *v;
        }
        theta
    }

    pub fn eval_block(&self, block: &Block, z: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
        let mut f = block.f0.clone();
        for t in &block.terms {
            let lzr = &t.left * z * t.right.transpose();
            f += &lzr;
            f += lzr.transpose();
        }
        for (g, v) in block.scalars.iter().zip(s) {
            if *v != 0.0 {
                f += g * *v;
            }
        }
        f
    }

    /// Largest eigenvalue over all blocks and the signed linear slacks.
    pub fn max_eigenvalue(&self, theta: &DVector<f64>) -> f64 {
        let (z, s) = self.unpack(theta);
        let mut worst = f64::NEG_INFINITY;
        for b in &self.blocks {
            let f = self.eval_block(b, &z, &s);
            let f = 0.5 * (&f + f.transpose());
            let e = f.symmetric_eigenvalues().max();
            worst = worst.max(e);
        }
        for l in &self.linear {
            worst = worst.max(l.a.dot(theta) - l.b);
        }
        worst
    }

    /// Maps each parameter to the Z entries it drives, as column-major
    /// indices `p + q * z_rows`.
    fn param_map(&self) -> Vec<[usize; 2]> {
        let n = self.z_cols;
        let zr = self.z_rows;
        let mut map = Vec::with_capacity(self.n_params() - self.n_scalars);
        for b in 0..n {
            for a in 0..=b {
                if a == b {
                    map.push([a + b * zr, usize::MAX]);
                } else {
                    map.push([a + b * zr, b + a * zr]);
                }
            }
        }
        for q in 0..n {
            for p in n..zr {
                map.push([p + q * zr, usize::MAX]);
            }
        }
        map
    }
}

struct Factored {
    /// `(-F)⁻¹` per block.
    s: Vec<DMatrix<f64>>,
    /// Barrier value `-Σ log det(-F) - Σ log(b - aᵀθ)`.
    value: f64,
    /// Linear-constraint slacks.
    slack: Vec<f64>,
}

pub struct Solver<'a> {
    prob: &'a Problem,
    map: Vec<[usize; 2]>,
    opts: SolverOptions,
    pub stats: SolveStats,
}

impl<'a> Solver<'a> {
    pub fn new(prob: &'a Problem, opts: SolverOptions) -> Result<Self> {
        prob.validate()?;
        Ok(Self { prob, map: prob.param_map(), opts, stats: SolveStats::default() })
    }

    /// Barrier value and block inverses, or `None` outside the domain.
    fn factor(&self, theta: &DVector<f64>) -> Option<Factored> {
        let (z, sc) = self.prob.unpack(theta);
        let mut value = 0.0;
        let mut s = Vec::with_capacity(self.prob.blocks.len());
        for b in &self.prob.blocks {
            let f = self.prob.eval_block(b, &z, &sc);
            let neg = -0.5 * (&f + f.transpose());
            let chol = Cholesky::<f64, Dyn>::new(neg)?;
            let l = chol.l_dirty();
            let mut logdet = 0.0;
            for i in 0..l.nrows() {
                let d = l[(i, i)];
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                logdet += 2.0 * d.ln();
            }
            value -= logdet;
            s.push(chol.inverse());
        }
        let mut slack = Vec::with_capacity(self.prob.linear.len());
        for l in &self.prob.linear {
            let r = l.b - l.a.dot(theta);
            if !(r > 0.0) {
                return None;
            }
            value -= r.ln();
            slack.push(r);
        }
        Some(Factored { s, value, slack })
    }

    fn objective(&self, theta: &DVector<f64>) -> f64 {
        let off = self.prob.scalar_index(0);
        self.prob.cost.iter().enumerate().map(|(j, c)| c * theta[off + j]).sum()
    }

    /// Gradient and Hessian of the barrier at a factored point.
    fn derivatives(&self, fac: &Factored) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.prob;
        let zr = p.z_rows;
        let zc = p.z_cols;
        let nz = zr * zc;
        let ns = p.n_scalars;
        let mut gz = DVector::<f64>::zeros(nz);
        let mut hz = DMatrix::<f64>::zeros(nz, nz);
        let mut gs = DVector::<f64>::zeros(ns);
        let mut hs = DMatrix::<f64>::zeros(ns, ns);
        let mut hzs = DMatrix::<f64>::zeros(nz, ns);

        for (b, s) in p.blocks.iter().zip(&fac.s) {
            for tk in &b.terms {
                // gradient: 2 (R_kᵀ S L_k)[q, p]
                let m = tk.right.transpose() * s * &tk.left;
                for q in 0..zc {
                    for pp in 0..zr {
                        gz[pp + q * zr] += 2.0 * m[(q, pp)];
                    }
                }
                for tl in &b.terms {
                    add_pair_hessian(&mut hz, s, tk, tl, zr, zc);
                }
            }
            for (j, g) in b.scalars.iter().enumerate() {
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                gs[j] += (s * g).trace();
                let sgs = s * g * s;
                for (i, g2) in b.scalars.iter().enumerate() {
                    hs[(i, j)] += (&sgs * g2).trace();
                }
                for tk in &b.terms {
                    let m = tk.right.transpose() * &sgs * &tk.left;
                    for q in 0..zc {
                        for pp in 0..zr {
                            hzs[(pp + q * zr, j)] += 2.0 * m[(q, pp)];
                        }
                    }
                }
            }
        }

        let np = p.n_params();
        let nzp = np - ns;
        let mut g = DVector::zeros(np);
        let mut h = DMatrix::zeros(np, np);
        for (i, mi) in self.map.iter().enumerate() {
            g[i] = mi.iter().filter(|u| **u != usize::MAX).map(|u| gz[*u]).sum();
        }
        for j in 0..nzp {
            let mj = self.map[j];
            for i in 0..=j {
                let mi = self.map[i];
                let mut acc = 0.0;
                for u in mi.iter().filter(|u| **u != usize::MAX) {
                    for v in mj.iter().filter(|v| **v != usize::MAX) {
                        acc += hz[(*u, *v)];
                    }
                }
                h[(i, j)] = acc;
                h[(j, i)] = acc;
            }
        }
        for j in 0..ns {
            g[nzp + j] = gs[j];
            for i in 0..ns {
                h[(nzp + i, nzp + j)] = hs[(i, j)];
            }
            for (i, mi) in self.map.iter().enumerate() {
                let v: f64 = mi.iter().filter(|u| **u != usize::MAX).map(|u| hzs[(*u, j)]).sum();
                h[(i, nzp + j)] = v;
                h[(nzp + j, i)] = v;
            }
        }
        for (l, r) in p.linear.iter().zip(&fac.slack) {
            g.axpy(1.0 / r, &l.a, 1.0);
            h.ger(1.0 / (r * r), &l.a, &l.a, 1.0);
        }
        (g, h)
    }

    /// Minimizes `t·cᵀθ + barrier` from a strictly feasible `θ`.
    fn center(&mut self, theta: &mut DVector<f64>, t: f64, stop: &dyn Fn(&DVector<f64>) -> bool) -> Result<Centring> {
        let off = self.prob.scalar_index(0);
        let mut fac = self
            .factor(theta)
            .ok_or_else(|| Error::SolverFailure("starting point is not strictly feasible".into()))?;
        for _ in 0..self.opts.max_newton {
            if stop(theta) {
                return Ok(Centring::Stopped);
            }
            self.stats.newton_steps += 1;
            trace!("newton t={t:.3e} value={:.6e} obj={:.6e}", fac.value, self.objective(theta));
            let (mut g, h) = self.derivatives(&fac);
            for (j, c) in self.prob.cost.iter().enumerate() {
                g[off + j] += t * c;
            }
            let step = solve_newton(&h, &g)?;
            let dec2 = -g.dot(&step);
            if !(dec2.is_finite()) {
                return Err(Error::SolverFailure("non-finite Newton decrement".into()));
            }
            if dec2 * 0.5 < self.opts.center_tol {
                return Ok(Centring::Centred);
            }
            let f_now = t * self.objective(theta) + fac.value;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-10 {
                let trial = &*theta + alpha * &step;
                if let Some(ft) = self.factor(&trial) {
                    let f_trial = t * self.objective(&trial) + ft.value;
                    if f_trial <= f_now - 0.25 * alpha * dec2 {
                        *theta = trial;
                        fac = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Round-off floor: accept the current point as centred.
                debug!("line search stalled with decrement {dec2:.3e}");
                return Ok(Centring::Centred);
            }
        }
        Ok(Centring::Exhausted)
    }

    /// Runs the barrier method from the strictly feasible `theta`.
    ///
    /// `stop` is checked before every Newton step; `lower_bound_limit`
    /// declares the problem bounded away from it once
    /// `objective - degree/t` exceeds the limit.
    pub fn solve(
        &mut self,
        theta: &mut DVector<f64>,
        stop: &dyn Fn(&DVector<f64>) -> bool,
        lower_bound_limit: Option<f64>,
    ) -> Result<Outcome> {
        let m = self.prob.degree() as f64;
        let mut t = self.opts.t0;
        let mut last_central: Option<DVector<f64>> = None;
        loop {
            self.stats.outer_steps += 1;
            match self.center(theta, t, stop)? {
                Centring::Stopped => {
                    self.stats.final_t = t;
                    return Ok(Outcome::Stopped);
                }
                Centring::Centred => {}
                Centring::Exhausted => {
                    // Ill-conditioned close to the optimum: fall back to the
                    // previous central point and its gap bound.
                    let Some(prev) = last_central else {
                        return Err(Error::SolverFailure(format!(
                            "Newton centring did not converge in {} steps",
                            self.opts.max_newton
                        )));
                    };
                    warn!("centring stalled at t = {t:.3e}; keeping the gap bound {:.3e}", self.stats.gap_bound);
                    *theta = prev;
                    return Ok(Outcome::Stalled);
                }
            }
            let obj = self.objective(theta);
            let gap = m / t;
            self.stats.final_t = t;
            self.stats.gap_bound = gap;
            debug!("barrier t = {t:.3e}, objective = {obj:.9e}, gap <= {gap:.3e}");
            if let Some(lim) = lower_bound_limit {
                if obj - gap > lim {
                    return Ok(Outcome::BoundExceeded { lower_bound: obj - gap });
                }
            }
            if gap < self.opts.gap_tol + self.opts.gap_rel * obj.abs() {
                return Ok(Outcome::Optimal);
            }
            last_central = Some(theta.clone());
            t *= self.opts.mu;
            if !t.is_finite() || t > 1e18 {
                return Err(Error::SolverFailure("barrier parameter overflow".into()));
            }
        }
    }
}

enum Centring {
    Centred,
    Stopped,
    /// Newton step budget used up.
    Exhausted,
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    // Jacobi scaling keeps the factorization usable when the parameters
    // live on very different scales.
    let n = h.nrows();
    let d: DVector<f64> = DVector::from_iterator(n, (0..n).map(|i| {
        let v = h[(i, i)];
        if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }
    }));
    let mut hs = h.clone();
    for j in 0..n {
        for i in 0..n {
            hs[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = g.component_mul(&d);
    let mut shift = 0.0;
    for _ in 0..8 {
        let mut m = hs.clone();
        if shift > 0.0 {
            for i in 0..n {
                m[(i, i)] += shift;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            let y = ch.solve(&(-&gs));
            if y.iter().all(|v| v.is_finite()) {
                return Ok(y.component_mul(&d));
            }
        }
        shift = if shift == 0.0 { 1e-12 } else { shift * 100.0 };
    }
    Err(Error::SolverFailure("Newton system is singular".into()))
}

/// Adds the Hessian contribution of the term pair `(k, l)` of one block.
fn add_pair_hessian(hz: &mut DMatrix<f64>, s: &DMatrix<f64>, tk: &Term, tl: &Term, zr: usize, zc: usize) {
    // H[(p,q),(r,s)] for dZ1 = e_p e_qᵀ, dZ2 = e_r e_sᵀ
    let a1 = tl.right.transpose() * s * &tk.left; // zc × zr: [s,p]
    let a2 = tk.right.transpose() * s * &tl.left; // zc × zr: [q,r]
    let b1 = tl.left.transpose() * s * &tk.left; // zr × zr: [r,p]
    let b2 = tk.right.transpose() * s * &tl.right; // zc × zc: [q,s]
    let c1 = tl.right.transpose() * s * &tk.right; // zc × zc: [s,q]
    let c2 = tk.left.transpose() * s * &tl.left; // zr × zr: [p,r]
    let d1 = tl.left.transpose() * s * &tk.right; // zr × zc: [r,q]
    let d2 = tk.left.transpose() * s * &tl.right; // zr × zc: [p,s]
    for ss in 0..zc {
        for r in 0..zr {
            let col = r + ss * zr;
            for q in 0..zc {
                let a2qr = a2[(q, r)];
                let b2qs = b2[(q, ss)];
                let c1sq = c1[(ss, q)];
                let d1rq = d1[(r, q)];
                for p in 0..zr {
                    let v = a1[(ss, p)] * a2qr + b1[(r, p)] * b2qs + c1sq * c2[(p, r)] + d1rq * d2[(p, ss)];
                    hz[(p + q * zr, col)] += v;
                }
            }
        }
    }
}
