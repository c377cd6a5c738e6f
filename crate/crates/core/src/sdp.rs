//! Dense LMI solver.
//!
//! Problems have the form
//!
//! ```text
//!   minimize    c^T x
//!   subject to  A0_k + sum_j x_j A_jk  >= 0      (or >= margin_k I when strict)
//!               a_i^T x = b_i
//! ```
//!
//! Equalities are eliminated through a null-space parameterization. The
//! reduced problem is solved by a primal log-barrier method: phase I
//! maximizes the common slack `t` in `F_k(z) - t I >= 0`, phase II follows
//! the central path of the objective. A box `|z_i| <= R` keeps the feasible
//! set bounded. Every point declared feasible is re-checked by an
//! independent eigenvalue computation of the original blocks.

use nalgebra::Cholesky;

use crate::linalg;
use crate::{Error, Mat, Result, Vec64};

/// Bound on the reduced variables.
const BOX_RADIUS: f64 = 1e10;
/// Certification threshold for the objective value.
const GAP_REL: f64 = 1e-6;
/// Feasibility tolerance of the independent post-check.
const VERIFY_TOL: f64 = 1e-9;
const TAU_GROWTH: f64 = 8.0;
const MAX_OUTER: usize = 80;
const MAX_NEWTON: usize = 200;

/// Relative strictness margin for `> 0` blocks.
pub const STRICT_MARGIN_REL: f64 = 1e-7;

/// One affine symmetric-matrix constraint `A0 + sum_j x_j A_j >= margin I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub a0: Mat,
    pub coeffs: Vec<(usize, Mat)>,
    pub margin: f64,
}

impl LmiBlock {
    pub fn nonstrict(a0: Mat, coeffs: Vec<(usize, Mat)>) -> Self {
        LmiBlock {
            a0,
            coeffs,
            margin: 0.0,
        }
    }

    /// Strict block with margin `1e-7 (1 + ||A0||)`.
    pub fn strict(a0: Mat, coeffs: Vec<(usize, Mat)>) -> Self {
        let margin = STRICT_MARGIN_REL * (1.0 + linalg::norm2(&a0));
        LmiBlock { a0, coeffs, margin }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn is_strict(&self) -> bool {
        self.margin > 0.0
    }

    /// `A0 + sum_j x_j A_j` (without the margin).
    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut s = self.a0.clone();
        for (j, m) in &self.coeffs {
            let v = x[*j];
            if v != 0.0 {
                s += m * v;
            }
        }
        s
    }

    /// Smallest eigenvalue of the block minus its margin.
    pub fn slack(&self, x: &[f64]) -> Result<f64> {
        Ok(linalg::lambda_min(&linalg::sym(&self.eval(x)))? - self.margin)
    }

    /// Multiply every matrix and the margin by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        LmiBlock {
            a0: &self.a0 * c,
            coeffs: self.coeffs.iter().map(|(j, m)| (*j, m * c)).collect(),
            margin: self.margin * c,
        }
    }
}

/// Block-affine matrix inequality problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub n_vars: usize,
    pub blocks: Vec<LmiBlock>,
    pub objective: Option<Vec64>,
    pub equalities: Vec<(Vec64, f64)>,
}

impl LmiProblem {
    pub fn new(n_vars: usize) -> Self {
        LmiProblem {
            n_vars,
            blocks: Vec::new(),
            objective: None,
            equalities: Vec::new(),
        }
    }

    pub fn add_block(&mut self, block: LmiBlock) -> usize {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    pub fn add_equality(&mut self, a: Vec64, b: f64) {
        self.equalities.push((a, b));
    }

    pub fn set_objective(&mut self, c: Vec64) {
        self.objective = Some(c);
    }

    /// Minimize a single variable.
    pub fn minimize_var(&mut self, j: usize) {
        let mut c = Vec64::zeros(self.n_vars);
        c[j] = 1.0;
        self.objective = Some(c);
    }

    fn validate(&self) -> Result<()> {
        for (k, b) in self.blocks.iter().enumerate() {
            let d = b.dim();
            if b.a0.ncols() != d {
                return Err(Error::DimensionMismatch(format!("block {k}: A0 is not square")));
            }
            if !(b.margin >= 0.0 && b.margin.is_finite()) {
                return Err(Error::InvalidArgument(format!("block {k}: bad margin")));
            }
            let tol = 1e-9 * (1.0 + b.a0.amax());
            if (&b.a0 - b.a0.transpose()).amax() > tol {
                return Err(Error::InvalidArgument(format!("block {k}: A0 not symmetric")));
            }
            for (j, m) in &b.coeffs {
                if *j >= self.n_vars {
                    return Err(Error::DimensionMismatch(format!(
                        "block {k}: variable index {j} out of range"
                    )));
                }
                if m.shape() != (d, d) {
                    return Err(Error::DimensionMismatch(format!(
                        "block {k}: coefficient {j} has shape {:?}",
                        m.shape()
                    )));
                }
                if (m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
                    return Err(Error::InvalidArgument(format!(
                        "block {k}: coefficient {j} not symmetric"
                    )));
                }
            }
        }
        if let Some(c) = &self.objective {
            if c.len() != self.n_vars {
                return Err(Error::DimensionMismatch("objective length".into()));
            }
        }
        for (a, _) in &self.equalities {
            if a.len() != self.n_vars {
                return Err(Error::DimensionMismatch("equality length".into()));
            }
        }
        Ok(())
    }

    /// Smallest block slack at `x`, computed from scratch.
    pub fn min_block_eig(&self, x: &[f64]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for b in &self.blocks {
            worst = worst.min(b.slack(x)?);
        }
        Ok(worst)
    }

    pub fn scaled(&self, c: f64) -> Self {
        LmiProblem {
            n_vars: self.n_vars,
            blocks: self.blocks.iter().map(|b| b.scaled(c)).collect(),
            objective: self.objective.clone(),
            equalities: self.equalities.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_feasible(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::Feasible)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec64,
    pub objective_value: f64,
    pub min_block_eig: f64,
    pub iterations: usize,
    /// Duality gap bound `m / tau` at the returned point (phase II), or the
    /// phase I bound when infeasibility was certified.
    pub gap: f64,
    /// Scaled inverse slacks `S_k^{-1} / tau`; for an infeasible problem
    /// these form the separating certificate.
    pub duals: Vec<Mat>,
    pub message: String,
}

/// Barrier subproblem on reduced variables `y`; the first `n_boxed`
/// variables are confined to `|y_i| < BOX_RADIUS`.
struct Barrier {
    blocks: Vec<(Mat, Vec<(usize, Mat)>)>,
    n: usize,
    n_boxed: usize,
    c: Vec64,
}

struct Derivs {
    grad: Vec64,
    hess: Mat,
}

impl Barrier {
    fn m_total(&self) -> f64 {
        (self.blocks.iter().map(|b| b.0.nrows()).sum::<usize>() + 2 * self.n_boxed) as f64
    }

    fn slack(&self, k: usize, y: &Vec64) -> Mat {
        let (b0, co) = &self.blocks[k];
        let mut s = b0.clone();
        for (j, m) in co {
            let v = y[*j];
            if v != 0.0 {
                s += m * v;
            }
        }
        s
    }

    fn chol(&self, k: usize, y: &Vec64) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        let s = linalg::sym(&self.slack(k, y));
        if !s.iter().all(|v| v.is_finite()) {
            return None;
        }
        Cholesky::new(s)
    }

    fn value(&self, y: &Vec64, tau: f64) -> Option<f64> {
        let r2 = BOX_RADIUS * BOX_RADIUS;
        let mut v = tau * self.c.dot(y);
        for i in 0..self.n_boxed {
            let d = r2 - y[i] * y[i];
            if d <= 0.0 {
                return None;
            }
            v -= d.ln();
        }
        for k in 0..self.blocks.len() {
            let ch = self.chol(k, y)?;
            let l = ch.l_dirty();
            for i in 0..l.nrows() {
                v -= 2.0 * l[(i, i)].ln();
            }
        }
        v.is_finite().then_some(v)
    }

    fn derivs(&self, y: &Vec64, tau: f64) -> Option<Derivs> {
        let r2 = BOX_RADIUS * BOX_RADIUS;
        let mut grad = &self.c * tau;
        let mut hess = Mat::zeros(self.n, self.n);
        for i in 0..self.n_boxed {
            let d = r2 - y[i] * y[i];
            grad[i] += 2.0 * y[i] / d;
            hess[(i, i)] += 2.0 * (r2 + y[i] * y[i]) / (d * d);
        }
        for k in 0..self.blocks.len() {
            let ch = self.chol(k, y)?;
            let dim = self.blocks[k].0.nrows();
            let linv = ch.l().solve_lower_triangular(&Mat::identity(dim, dim))?;
            let co = &self.blocks[k].1;
            let ws: Vec<(usize, Mat)> = co.iter().map(|(j, m)| (*j, &linv * m * linv.transpose())).collect();
            for (a, (ja, wa)) in ws.iter().enumerate() {
                grad[*ja] -= wa.trace();
                for (jb, wb) in ws.iter().skip(a) {
                    let h = wa.dot(wb);
                    hess[(*ja, *jb)] += h;
                    if ja != jb {
                        hess[(*jb, *ja)] += h;
                    }
                }
            }
        }
        Some(Derivs { grad, hess })
    }

    fn duals(&self, y: &Vec64, tau: f64) -> Vec<Mat> {
        (0..self.blocks.len())
            .map(|k| {
                self.chol(k, y)
                    .map(|c| c.inverse() / tau)
                    .unwrap_or_else(|| Mat::zeros(0, 0))
            })
            .collect()
    }
}

fn newton_direction(d: &Derivs) -> Option<Vec64> {
    let n = d.grad.len();
    let scale = (0..n).map(|i| d.hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 1e-14 * scale;
    for _ in 0..8 {
        let h = &d.hess + Mat::identity(n, n) * ridge;
        if let Some(ch) = Cholesky::new(h) {
            let dir = ch.solve(&(-&d.grad));
            if dir.iter().all(|v| v.is_finite()) {
                return Some(dir);
            }
        }
        ridge *= 100.0;
    }
    None
}

enum CenterOutcome {
    Converged,
    Stalled,
    Stopped,
}

/// Damped Newton minimization of the barrier at fixed `tau`.
fn center(bp: &Barrier, y: &mut Vec64, tau: f64, iters: &mut usize, stop: &dyn Fn(&Vec64) -> bool) -> CenterOutcome {
    let mut v0 = match bp.value(y, tau) {
        Some(v) => v,
        None => return CenterOutcome::Stalled,
    };
    for _ in 0..MAX_NEWTON {
        *iters += 1;
        let Some(d) = bp.derivs(y, tau) else {
            return CenterOutcome::Stalled;
        };
        let Some(dir) = newton_direction(&d) else {
            return CenterOutcome::Stalled;
        };
        let slope = d.grad.dot(&dir);
        let decrement = -slope;
        if decrement < 2e-10 {
            return CenterOutcome::Converged;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-16 {
            let cand = &*y + &dir * alpha;
            if let Some(v) = bp.value(&cand, tau) {
                if v <= v0 + 0.25 * alpha * slope {
                    *y = cand;
                    v0 = v;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return if decrement < 1e-6 {
                CenterOutcome::Converged
            } else {
                CenterOutcome::Stalled
            };
        }
        if stop(y) {
            return CenterOutcome::Stopped;
        }
    }
    CenterOutcome::Stalled
}

/// Starting barrier weight balancing objective and barrier gradients.
fn initial_tau(bp: &Barrier, y: &Vec64) -> f64 {
    let fallback = 1.0;
    let Some(d0) = bp.derivs(y, 0.0) else {
        return fallback;
    };
    let n = bp.n;
    let h = &d0.hess + Mat::identity(n, n) * (1e-12 * d0.hess.amax().max(1e-300));
    let Some(ch) = Cholesky::new(h) else {
        return fallback;
    };
    let hc = ch.solve(&bp.c);
    let num = -hc.dot(&d0.grad);
    let den = hc.dot(&bp.c);
    let tau = if den > 0.0 { num / den } else { fallback };
    if tau.is_finite() && tau > 0.0 {
        tau.clamp(1e-8, 1e8)
    } else {
        fallback
    }
}

struct Reduced {
    x0: Vec64,
    basis: Mat,
}

fn eliminate_equalities(problem: &LmiProblem) -> Result<Option<Reduced>> {
    let n = problem.n_vars;
    if problem.equalities.is_empty() {
        return Ok(Some(Reduced {
            x0: Vec64::zeros(n),
            basis: Mat::identity(n, n),
        }));
    }
    let q = problem.equalities.len();
    let mut a = Mat::zeros(q, n);
    let mut b = Vec64::zeros(q);
    for (i, (row, rhs)) in problem.equalities.iter().enumerate() {
        a.set_row(i, &row.transpose());
        b[i] = *rhs;
    }
    let (ap, _) = linalg::pinv(&a, 1e-12);
    let x0 = &ap * &b;
    let resid = (&a * &x0 - &b).amax();
    if resid > 1e-9 * (1.0 + b.amax()) {
        return Ok(None);
    }
    let basis = linalg::null_space(&a, 1e-12);
    Ok(Some(Reduced { x0, basis }))
}

fn reduce_blocks(problem: &LmiProblem, red: &Reduced) -> Vec<(Mat, Vec<(usize, Mat)>)> {
    let nz = red.basis.ncols();
    let identity_basis =
        red.basis.nrows() == nz && red.x0.iter().all(|v| *v == 0.0) && red.basis == Mat::identity(nz, nz);
    problem
        .blocks
        .iter()
        .map(|blk| {
            let d = blk.dim();
            let mut b0 = blk.eval(red.x0.as_slice()) - Mat::identity(d, d) * blk.margin;
            b0 = linalg::sym(&b0);
            let coeffs = if identity_basis {
                blk.coeffs.clone()
            } else {
                let mut acc: Vec<Option<Mat>> = vec![None; nz];
                for (j, m) in &blk.coeffs {
                    for (l, slot) in acc.iter_mut().enumerate() {
                        let w = red.basis[(*j, l)];
                        if w != 0.0 {
                            *slot.get_or_insert_with(|| Mat::zeros(d, d)) += m * w;
                        }
                    }
                }
                acc.into_iter()
                    .enumerate()
                    .filter_map(|(l, m)| m.map(|m| (l, m)))
                    .collect()
            };
            (b0, coeffs)
        })
        .collect()
}

fn finish(
    problem: &LmiProblem,
    x: Vec64,
    status: SolveStatus,
    iterations: usize,
    gap: f64,
    duals: Vec<Mat>,
    message: String,
) -> Result<SdpSolution> {
    let min_block_eig = problem.min_block_eig(x.as_slice())?;
    let objective_value = problem.objective.as_ref().map_or(0.0, |c| c.dot(&x));
    let mut status = status;
    let mut message = message;
    if status.is_feasible() {
        let eq_ok = problem
            .equalities
            .iter()
            .all(|(a, b)| (a.dot(&x) - b).abs() <= 1e-8 * (1.0 + b.abs() + a.amax() * x.amax()));
        if min_block_eig < -VERIFY_TOL || !eq_ok {
            status = SolveStatus::NumericalFailure;
            message = format!("post-check failed: min block eigenvalue {min_block_eig:e}");
        }
    }
    Ok(SdpSolution {
        status,
        x,
        objective_value,
        min_block_eig,
        iterations,
        gap,
        duals,
        message,
    })
}

/// Solve an LMI problem. Returns `Err` only for malformed input; solver
/// outcomes are reported through [`SolveStatus`].
pub fn solve(problem: &LmiProblem) -> Result<SdpSolution> {
    problem.validate()?;
    let Some(red) = eliminate_equalities(problem)? else {
        return finish(
            problem,
            Vec64::zeros(problem.n_vars),
            SolveStatus::Infeasible,
            0,
            f64::INFINITY,
            Vec::new(),
            "inconsistent equality constraints".into(),
        );
    };
    let nz = red.basis.ncols();
    let blocks = reduce_blocks(problem, &red);
    let to_x = |z: &Vec64| &red.x0 + &red.basis * z.rows(0, nz);

    if nz == 0 || blocks.is_empty() {
        let x = red.x0.clone();
        let slack = problem.min_block_eig(x.as_slice())?;
        let status = if slack >= 0.0 {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        return finish(problem, x, status, 0, 0.0, Vec::new(), String::new());
    }

    // Phase I: maximize t subject to F_k(z) - t I >= 0.
    let mut phase1_blocks = blocks.clone();
    for (b0, co) in phase1_blocks.iter_mut() {
        let d = b0.nrows();
        co.push((nz, -Mat::identity(d, d)));
    }
    let mut c1 = Vec64::zeros(nz + 1);
    c1[nz] = -1.0;
    let p1 = Barrier {
        blocks: phase1_blocks,
        n: nz + 1,
        n_boxed: nz,
        c: c1,
    };
    let mut t0 = f64::INFINITY;
    for (b0, _) in &blocks {
        t0 = t0.min(linalg::lambda_min(b0)?);
    }
    let mut iterations = 0;
    let mut z = Vec64::zeros(nz);
    if t0 <= 0.0 {
        let mut y = Vec64::zeros(nz + 1);
        y[nz] = t0 - 1.0 - 0.1 * t0.abs();
        let m1 = p1.m_total();
        let mut tau = initial_tau(&p1, &y);
        let stop = |y: &Vec64| y[nz] > 0.0;
        let mut found = false;
        let mut infeasible = false;
        for _ in 0..MAX_OUTER {
            match center(&p1, &mut y, tau, &mut iterations, &stop) {
                CenterOutcome::Stopped => {
                    found = true;
                    break;
                }
                CenterOutcome::Converged => {
                    if y[nz] > 0.0 {
                        found = true;
                        break;
                    }
                    if y[nz] + m1 / tau < 0.0 {
                        infeasible = true;
                        break;
                    }
                }
                CenterOutcome::Stalled => {
                    if y[nz] > 0.0 {
                        found = true;
                        break;
                    }
                }
            }
            if m1 / tau < 1e-14 * (1.0 + y[nz].abs()) {
                break;
            }
            tau *= TAU_GROWTH;
        }
        if !found {
            let x = to_x(&y);
            let (status, msg) = if infeasible {
                (
                    SolveStatus::Infeasible,
                    format!("phase I bound: max slack <= {:e}", y[nz] + m1 / tau),
                )
            } else {
                (
                    SolveStatus::NumericalFailure,
                    format!("phase I undecided: slack {:e}, bound {:e}", y[nz], y[nz] + m1 / tau),
                )
            };
            let duals = p1.duals(&y, tau);
            return finish(problem, x, status, iterations, y[nz] + m1 / tau, duals, msg);
        }
        z = y.rows(0, nz).into_owned();
    }

    let c_full = problem.objective.clone();
    let Some(c_full) = c_full else {
        let x = to_x(&z);
        return finish(
            problem,
            x,
            SolveStatus::Feasible,
            iterations,
            0.0,
            Vec::new(),
            String::new(),
        );
    };
    let c = red.basis.transpose() * &c_full;

    // Phase II: central path of c^T z.
    let p2 = Barrier {
        blocks,
        n: nz,
        n_boxed: nz,
        c,
    };
    let m2 = p2.m_total();
    let mut tau = initial_tau(&p2, &z);
    let mut best = z.clone();
    let mut best_gap = f64::INFINITY;
    let mut best_tau = tau;
    for _ in 0..MAX_OUTER {
        let outcome = center(&p2, &mut z, tau, &mut iterations, &|_| false);
        match outcome {
            CenterOutcome::Converged => {
                best = z.clone();
                best_gap = m2 / tau;
                best_tau = tau;
                let obj = c_full.dot(&to_x(&z));
                if best_gap <= 0.1 * GAP_REL * (1.0 + obj.abs()) {
                    break;
                }
            }
            _ => {
                if best_gap.is_finite() {
                    break;
                }
                best = z.clone();
            }
        }
        tau *= TAU_GROWTH;
    }
    let x = to_x(&best);
    let obj = c_full.dot(&x);
    let status = if best_gap <= GAP_REL * (1.0 + obj.abs()) {
        SolveStatus::Optimal
    } else {
        SolveStatus::Feasible
    };
    let duals = p2.duals(&best, best_tau);
    finish(problem, x, status, iterations, best_gap, duals, String::new())
}

/// Whether the solver certified a feasible point.
pub fn is_feasible(problem: &LmiProblem) -> Result<bool> {
    Ok(solve(problem)?.status.is_feasible())
}

/// Smallest `gamma` (within `tol`) for which the factory's problem is
/// feasible. Feasibility is assumed monotone in `gamma`. When `hi` is not
/// feasible it is doubled up to `2^16` times its initial value.
pub fn bisect_gamma<F>(factory: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<LmiProblem>,
{
    if !(hi > 0.0 && hi.is_finite()) || !(lo >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bisect_gamma needs 0 <= lo, 0 < hi and tol > 0 (lo={lo}, hi={hi}, tol={tol})"
        )));
    }
    let cap = hi * 65536.0;
    let mut hi = hi;
    let mut lo = lo.min(hi);
    while !is_feasible(&factory(hi)?)? {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return Err(Error::NoFeasibleGamma(cap));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if is_feasible(&factory(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
