//! Matrix measures (logarithmic norms) and contraction certificates.

use nalgebra::Cholesky;

use crate::linalg::{self, sym_pairs, sym_unit};
use crate::sdp::{self, LmiBlock, LmiProblem, SolveStatus};
use crate::{Error, Mat, Result, Vec64};

/// Vector norm underlying a matrix measure. Weighted variants use
/// `||x|| = ||T x||`; for the weighted 2-norm `T = L^T` with `P = L L^T`.
#[derive(Debug, Clone, PartialEq)]
pub enum NormKind {
    One,
    Two,
    Inf,
    WeightedOne { t: Mat, t_inv: Mat },
    WeightedTwo { p: Mat, l: Mat },
    WeightedInf { t: Mat, t_inv: Mat },
}

impl NormKind {
    /// Weighted 2-norm `||x||_P = sqrt(x^T P x)`; `P` must be symmetric
    /// positive definite.
    pub fn weighted_two(p: Mat) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::InvalidWeight("P must be square".into()));
        }
        if (&p - p.transpose()).amax() > 1e-12 * (1.0 + p.amax()) {
            return Err(Error::InvalidWeight("P must be symmetric".into()));
        }
        let chol = Cholesky::new(p.clone()).ok_or_else(|| Error::InvalidWeight("P is not positive definite".into()))?;
        let l = chol.l();
        Ok(NormKind::WeightedTwo { p, l })
    }

    pub fn weighted_one(t: Mat) -> Result<Self> {
        let t_inv = invert_weight(&t)?;
        Ok(NormKind::WeightedOne { t, t_inv })
    }

    pub fn weighted_inf(t: Mat) -> Result<Self> {
        let t_inv = invert_weight(&t)?;
        Ok(NormKind::WeightedInf { t, t_inv })
    }

    fn dim(&self) -> Option<usize> {
        match self {
            NormKind::WeightedOne { t, .. } | NormKind::WeightedInf { t, .. } => Some(t.nrows()),
            NormKind::WeightedTwo { p, .. } => Some(p.nrows()),
            _ => None,
        }
    }

    /// Matrix expressed in the coordinates where the weighted norm is a plain
    /// 1/2/inf norm, together with that base norm.
    fn transform(&self, a: &Mat) -> Result<(Mat, Base)> {
        if let Some(n) = self.dim() {
            if a.nrows() != n {
                return Err(Error::InvalidWeight(format!(
                    "weight is {n}x{n}, matrix is {}x{}",
                    a.nrows(),
                    a.ncols()
                )));
            }
        }
        Ok(match self {
            NormKind::One => (a.clone(), Base::One),
            NormKind::Two => (a.clone(), Base::Two),
            NormKind::Inf => (a.clone(), Base::Inf),
            NormKind::WeightedOne { t, t_inv } => (t * a * t_inv, Base::One),
            NormKind::WeightedInf { t, t_inv } => (t * a * t_inv, Base::Inf),
            NormKind::WeightedTwo { l, .. } => {
                // L^T A L^{-T}
                let lt = l.transpose();
                let x = lt
                    .clone()
                    .lu()
                    .solve(&a.transpose())
                    .ok_or_else(|| Error::InvalidWeight("singular Cholesky factor".into()))?;
                (&lt * x.transpose(), Base::Two)
            }
        })
    }
}

#[derive(Clone, Copy)]
enum Base {
    One,
    Two,
    Inf,
}

fn invert_weight(t: &Mat) -> Result<Mat> {
    if t.nrows() != t.ncols() {
        return Err(Error::InvalidWeight("T must be square".into()));
    }
    let sv = linalg::singular_values(t);
    if sv.is_empty() || *sv.last().unwrap() <= 1e-12 * sv[0] {
        return Err(Error::InvalidWeight("T is singular".into()));
    }
    t.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidWeight("T is singular".into()))
}

fn check_square(a: &Mat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix measure of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Closed-form matrix measure.
pub fn mu(a: &Mat, norm: &NormKind) -> Result<f64> {
    check_square(a)?;
    let (b, base) = norm.transform(a)?;
    let n = b.nrows();
    Ok(match base {
        Base::Two => linalg::lambda_max(&b)?,
        Base::Inf => (0..n)
            .map(|i| b[(i, i)] + (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
        Base::One => (0..n)
            .map(|j| b[(j, j)] + (0..n).filter(|&i| i != j).map(|i| b[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Finite-`h` evaluation of `(||I + h A|| - 1) / h` with the induced norm
/// computed directly (column/row sums, power iteration for the 2-norm).
pub fn mu_limit_oracle(a: &Mat, norm: &NormKind, h: f64) -> Result<f64> {
    check_square(a)?;
    if !(h > 0.0 && h <= 1e-4) {
        return Err(Error::InvalidArgument(format!("h must lie in (0, 1e-4], got {h}")));
    }
    let (b, base) = norm.transform(a)?;
    let n = b.nrows();
    let id = Mat::identity(n, n);
    Ok(match base {
        Base::Inf => {
            let m = &id + &b * h;
            let nrm = (0..n)
                .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            (nrm - 1.0) / h
        }
        Base::One => {
            let m = &id + &b * h;
            let nrm = (0..n)
                .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            (nrm - 1.0) / h
        }
        Base::Two => {
            // ||I + hB||^2 = lambda_max(I + h C) with C = B + B^T + h B^T B;
            // the top eigenvalue of C comes from power iteration.
            let c = &b + b.transpose() + b.transpose() * &b * h;
            let lam = power_lambda_max(&c);
            lam / ((1.0 + h * lam).sqrt() + 1.0)
        }
    })
}

/// Largest eigenvalue of a symmetric matrix by shifted power iteration.
fn power_lambda_max(c: &Mat) -> f64 {
    let n = c.nrows();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let shift = c.norm();
    if shift == 0.0 {
        return 0.0;
    }
    let shifted = c + Mat::identity(n, n) * shift;
    // A few normalized squarings accelerate convergence (power 2^k).
    let mut acc = shifted.clone();
    for _ in 0..6 {
        acc = &acc * &acc;
        let s = acc.amax();
        if s > 0.0 {
            acc /= s;
        }
    }
    let mut v = Vec64::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sin());
    v = &acc * v;
    let mut lam_prev = f64::NAN;
    for it in 0..200_000 {
        let nv = v.norm();
        if nv == 0.0 {
            v = Vec64::from_element(n, 1.0);
            continue;
        }
        v /= nv;
        let w = &shifted * &v;
        let lam = v.dot(&w);
        if it > 4 && (lam - lam_prev).abs() <= 1e-16 * lam.abs().max(1e-300) {
            return lam - shift;
        }
        lam_prev = lam;
        v = w;
    }
    lam_prev - shift
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    LmiExact,
    GridSampled,
}

/// Weighted-Euclidean contraction certificate: `||x||_P` with rate `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionCertificate {
    pub p: Mat,
    pub rho: f64,
    pub kind: CertificateKind,
}

/// Lyapunov LMI `M^T P + P M >= 2 rho P`, `P > 0`, `trace P = dim` at a fixed
/// rate; returns `P` when strictly feasible.
fn lyapunov_rate_feasible(m: &Mat, rho: f64) -> Result<Option<Mat>> {
    let n = m.nrows();
    let pairs = sym_pairs(n);
    let mut prob = LmiProblem::new(pairs.len());
    let shifted = m - Mat::identity(n, n) * rho;
    let coeffs: Vec<(usize, Mat)> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let e = sym_unit(n, i, j);
            (k, shifted.transpose() * &e + &e * &shifted)
        })
        .collect();
    prob.add_block(LmiBlock::strict(Mat::zeros(n, n), coeffs));
    let pcoeffs = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| (k, sym_unit(n, i, j)))
        .collect();
    prob.add_block(LmiBlock::strict(Mat::zeros(n, n), pcoeffs));
    let mut trace = Vec64::zeros(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i == j {
            trace[k] = 1.0;
        }
    }
    prob.add_equality(trace, n as f64);
    let sol = sdp::solve(&prob)?;
    Ok(match sol.status {
        SolveStatus::Optimal | SolveStatus::Feasible => Some(linalg::sym_from_params(n, sol.x.as_slice())),
        _ => None,
    })
}

/// Best weighted-Euclidean contraction rate for `eta' = -M eta`, within a
/// relative `1e-6` of its supremum `min Re lambda(M)`, by bisection on the
/// rate with an LMI feasibility solve at each step. A certificate exists iff
/// `-M` is Hurwitz.
pub fn contraction_lmi_linear(m: &Mat) -> Result<ContractionCertificate> {
    check_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let mut best = lyapunov_rate_feasible(m, 0.0)?
        .ok_or_else(|| Error::Infeasible("-M is not Hurwitz: no Lyapunov certificate".into()))?;
    // The supremum of certifiable rates is min Re(lambda(M)).
    let mut lo = 0.0;
    let mut hi = -linalg::spectral_abscissa(&(-m))?;
    if hi <= 0.0 {
        return Err(Error::NumericalFailure(
            "Lyapunov LMI feasible but M has an eigenvalue with non-positive real part".into(),
        ));
    }
    let tol = 1e-6 * hi;
    let near = hi - tol;
    match lyapunov_rate_feasible(m, near)? {
        Some(p) => {
            lo = near;
            best = p;
        }
        None => hi = near,
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match lyapunov_rate_feasible(m, mid)? {
            Some(p) => {
                lo = mid;
                best = p;
            }
            None => hi = mid,
        }
    }
    if lo <= 0.0 {
        let lyap = m.transpose() * &best + &best * m;
        lo = (0.5 * linalg::lambda_min(&lyap)? / linalg::lambda_max(&best)?).max(0.0);
    }
    Ok(ContractionCertificate {
        p: best,
        rho: lo,
        kind: CertificateKind::LmiExact,
    })
}

/// Jacobian of the reduced vector field, `(eta, w) -> dF/deta`.
pub type JacobianFn<'a> = &'a dyn Fn(&Vec64, &Vec64) -> Mat;

/// Result of a sampled contraction check.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCheck {
    pub worst_mu: f64,
    pub worst_eta: Vec64,
    pub worst_w: Vec64,
}

/// Evaluate the Jacobian measure on a Cartesian grid of the box times the
/// disturbance samples and return the maximum (first index wins ties). This
/// is sampled evidence, not a proof.
pub fn grid_contraction_check(
    jacobian: JacobianFn<'_>,
    eta_box: &[(f64, f64)],
    w_samples: &[Vec64],
    norm: &NormKind,
    grid_density: usize,
) -> Result<GridCheck> {
    if grid_density < 2 {
        return Err(Error::InvalidArgument("grid density must be at least 2".into()));
    }
    if eta_box.is_empty() || eta_box.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::InvalidArgument("box must be nondegenerate".into()));
    }
    let dim = eta_box.len();
    let ws: Vec<Vec64> = if w_samples.is_empty() {
        vec![Vec64::zeros(0)]
    } else {
        w_samples.to_vec()
    };
    let total = grid_density.pow(dim as u32);
    let mut best: Option<GridCheck> = None;
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let eta = Vec64::from_fn(dim, |i, _| {
            let (lo, hi) = eta_box[i];
            lo + (hi - lo) * idx[i] as f64 / (grid_density - 1) as f64
        });
        for w in &ws {
            let jac = jacobian(&eta, w);
            if jac.shape() != (dim, dim) || !linalg::is_finite(&jac) {
                return Err(Error::JacobianEvalFailure {
                    point: eta.iter().chain(w.iter()).copied().collect(),
                    reason: format!("jacobian {}x{} or non-finite", jac.nrows(), jac.ncols()),
                });
            }
            let value = mu(&jac, norm)?;
            if best.as_ref().is_none_or(|b| value > b.worst_mu) {
                best = Some(GridCheck {
                    worst_mu: value,
                    worst_eta: eta.clone(),
                    worst_w: w.clone(),
                });
            }
        }
        // Lexicographic increment, last axis fastest.
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < grid_density {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(best.expect("grid has at least one point"))
}
