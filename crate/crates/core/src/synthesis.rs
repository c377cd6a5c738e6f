//! Gain synthesis and robust performance analysis.
//!
//! All LMIs are written with `Y = I`: the recovery parameter `Y` does not
//! enter any of the matrix inequalities, so `K = Z` and structure is imposed
//! on `Z` directly.

use crate::lfr::{ConePair, ConeSpec, Lfr};
use crate::linalg::{self, sym_pairs, sym_unit};
use crate::model::{self, DcGains};
use crate::sdp::{self, LmiBlock, LmiProblem, SolveStatus};
use crate::{Error, Mat, Result, Vec64};

#[derive(Debug, Clone, PartialEq)]
pub enum YConstraint {
    None,
    Diagonal,
    BlockDiagonal(Vec<usize>),
}

/// Decentralization pattern: `mask[(i, j)]` true means `K_ij` is free.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureSpec {
    pub m: usize,
    pub p: usize,
    pub mask: Vec<bool>,
    pub y_constraint: YConstraint,
}

impl StructureSpec {
    /// `mask` is row-major `m x p`.
    pub fn new(m: usize, p: usize, mask: Vec<bool>, y_constraint: YConstraint) -> Result<Self> {
        if mask.len() != m * p {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries, expected {m}x{p}",
                mask.len()
            )));
        }
        if !mask.iter().any(|b| *b) {
            return Err(Error::InvalidArgument("structure mask has no free entry".into()));
        }
        if let YConstraint::BlockDiagonal(sizes) = &y_constraint {
            if sizes.iter().sum::<usize>() != p || sizes.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "Y block sizes {sizes:?} do not partition {p}"
                )));
            }
        }
        Ok(StructureSpec {
            m,
            p,
            mask,
            y_constraint,
        })
    }

    pub fn full(m: usize, p: usize) -> Self {
        StructureSpec {
            m,
            p,
            mask: vec![true; m * p],
            y_constraint: YConstraint::None,
        }
    }

    /// Block-diagonal gain with input groups `row_blocks` and output groups
    /// `col_blocks`; `Y` is block diagonal with the output groups.
    pub fn block_diagonal(row_blocks: &[usize], col_blocks: &[usize]) -> Result<Self> {
        if row_blocks.len() != col_blocks.len() {
            return Err(Error::InvalidArgument("row and column block counts differ".into()));
        }
        let m: usize = row_blocks.iter().sum();
        let p: usize = col_blocks.iter().sum();
        let mut mask = vec![false; m * p];
        let (mut r0, mut c0) = (0, 0);
        for (rb, cb) in row_blocks.iter().zip(col_blocks) {
            for i in r0..r0 + rb {
                for j in c0..c0 + cb {
                    mask[i * p + j] = true;
                }
            }
            r0 += rb;
            c0 += cb;
        }
        StructureSpec::new(m, p, mask, YConstraint::BlockDiagonal(col_blocks.to_vec()))
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.p + j]
    }

    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|i| (0..self.p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_free(i, j))
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|b| *b)
    }

    /// Whether `Y` satisfies the constraint.
    pub fn y_admissible(&self, y: &Mat) -> bool {
        match &self.y_constraint {
            YConstraint::None => true,
            YConstraint::Diagonal => (0..y.nrows()).all(|i| (0..y.ncols()).all(|j| i == j || y[(i, j)] == 0.0)),
            YConstraint::BlockDiagonal(sizes) => {
                let mut owner = Vec::new();
                for (b, s) in sizes.iter().enumerate() {
                    owner.extend(std::iter::repeat_n(b, *s));
                }
                (0..y.nrows()).all(|i| (0..y.ncols()).all(|j| owner[i] == owner[j] || y[(i, j)] == 0.0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub k: Mat,
    pub y: Mat,
    pub z: Mat,
    pub gamma: f64,
    /// Multiplier parameters (dual cone for robust synthesis).
    pub multiplier: Vec<f64>,
    pub multiplier_label: String,
    /// Lyapunov matrix on the analysis side.
    pub certificate: Option<Mat>,
    /// Gamma of the primal re-analysis of `K` (robust mode).
    pub analysis_gamma: Option<f64>,
    pub status: String,
}

/// Moore-Penrose pseudoinverse of `G(0)`; requires full row rank.
pub fn davison_gain(dc: &DcGains) -> Result<Mat> {
    let (pinv, rank) = linalg::pinv(&dc.g0, 1e-10);
    if rank < dc.p() {
        return Err(Error::RankDeficient(format!("G(0) has rank {rank} < p = {}", dc.p())));
    }
    Ok(pinv)
}

fn gain_entries(structure: Option<&StructureSpec>, m: usize, p: usize) -> Result<Vec<(usize, usize)>> {
    match structure {
        None => Ok(StructureSpec::full(m, p).free_entries()),
        Some(s) => {
            if s.m != m || s.p != p {
                return Err(Error::DimensionMismatch(format!(
                    "structure is {}x{}, gain is {m}x{p}",
                    s.m, s.p
                )));
            }
            Ok(s.free_entries())
        }
    }
}

fn unit(r: usize, c: usize, i: usize, j: usize) -> Mat {
    let mut e = Mat::zeros(r, c);
    e[(i, j)] = 1.0;
    e
}

fn assemble_gain(entries: &[(usize, usize)], x: &[f64], m: usize, p: usize) -> Mat {
    let mut k = Mat::zeros(m, p);
    for (idx, &(i, j)) in entries.iter().enumerate() {
        k[(i, j)] = x[idx];
    }
    k
}

/// Affine parts of the H-infinity block as a function of `(G0 Z, gamma)`.
fn hinf_lmi_matrix(g0z: &Mat, gw0: &Mat, gamma: f64) -> Mat {
    let p = g0z.nrows();
    let nw = gw0.ncols();
    let a = g0z + g0z.transpose();
    let gi_w = Mat::identity(nw, nw) * gamma;
    let gi_p = Mat::identity(p, p) * gamma;
    linalg::block(&[
        vec![&a, gw0, &(-g0z.transpose())],
        vec![&gw0.transpose(), &gi_w, &(-gw0.transpose())],
        vec![&(-g0z), &(-gw0), &gi_p],
    ])
    .expect("conformal blocks")
}

/// Smallest eigenvalue of the H-infinity block at `(Z, gamma)`.
pub fn hinf_min_eig(dc: &DcGains, z: &Mat, gamma: f64) -> Result<f64> {
    linalg::lambda_min(&hinf_lmi_matrix(&(&dc.g0 * z), &dc.gw0, gamma))
}

/// LMI problem for the H-infinity gain design; variables are the free
/// entries of `Z` followed by `gamma`.
pub fn hinf_problem(dc: &DcGains, structure: Option<&StructureSpec>) -> Result<(LmiProblem, Vec<(usize, usize)>)> {
    let (p, m, nw) = (dc.p(), dc.m(), dc.n_w());
    let entries = gain_entries(structure, m, p)?;
    let nz = entries.len();
    let mut prob = LmiProblem::new(nz + 1);
    let zero = Mat::zeros(p, p);
    let a0 = hinf_lmi_matrix(&zero, &dc.gw0, 0.0);
    let mut coeffs: Vec<(usize, Mat)> = entries
        .iter()
        .enumerate()
        .map(|(v, &(i, j))| {
            let n = &dc.g0 * unit(m, p, i, j);
            (v, hinf_lmi_matrix(&n, &Mat::zeros(p, nw), 0.0))
        })
        .collect();
    let mut gcoef = Mat::zeros(2 * p + nw, 2 * p + nw);
    for d in p..2 * p + nw {
        gcoef[(d, d)] = 1.0;
    }
    coeffs.push((nz, gcoef));
    prob.add_block(LmiBlock::strict(a0, coeffs));
    prob.minimize_var(nz);
    Ok((prob, entries))
}

fn solve_hinf(dc: &DcGains, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    let (prob, entries) = hinf_problem(dc, structure)?;
    let sol = sdp::solve(&prob)?;
    if !sol.status.is_feasible() {
        return Err(Error::Infeasible(format!(
            "H-infinity LMI: {} ({})",
            sol.status.as_str(),
            sol.message
        )));
    }
    let (m, p) = (dc.m(), dc.p());
    let nz = entries.len();
    let z = assemble_gain(&entries, sol.x.as_slice(), m, p);
    let gamma = sol.x[nz];
    let closed = -(&dc.g0 * &z);
    if !model::is_hurwitz(&closed, 0.0)? {
        return Err(Error::NumericalFailure("-G(0)K is not Hurwitz after synthesis".into()));
    }
    Ok(SynthesisResult {
        k: z.clone(),
        y: Mat::identity(p, p),
        z,
        gamma,
        multiplier: Vec::new(),
        multiplier_label: String::new(),
        certificate: Some(Mat::identity(p, p)),
        analysis_gamma: None,
        status: sol.status.as_str().into(),
    })
}

/// Minimize `gamma` over `Z` in the H-infinity LMI; `K = Z`.
pub fn hinf_lti_synthesis(dc: &DcGains, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    davison_gain(dc)?;
    match solve_hinf(dc, structure) {
        Err(Error::Infeasible(msg)) => {
            if structure.is_some_and(|s| !s.is_full()) && solve_hinf(dc, None).is_ok() {
                log::info!("structured H-infinity problem infeasible: {msg}");
                Err(Error::StructureTooRestrictive)
            } else {
                Err(Error::Infeasible(msg))
            }
        }
        other => other,
    }
}

/// Outer-factor rows of the robust analysis LMI for a fixed gain.
struct AnalysisFactor {
    w1: Mat,
    w2: Mat,
    w34: Mat,
    w5: Mat,
    w6: Mat,
}

fn analysis_factor(lfr: &Lfr, k: &Mat) -> Result<AnalysisFactor> {
    let (p, np, nw) = (lfr.p(), lfr.n_p(), lfr.n_w());
    if k.shape() != (lfr.m(), p) {
        return Err(Error::DimensionMismatch(format!(
            "K is {}x{}, expected {}x{p}",
            k.nrows(),
            k.ncols(),
            lfr.m()
        )));
    }
    let fk = &lfr.f * k;
    let hk = &lfr.h * k;
    let z = |r: usize, c: usize| Mat::zeros(r, c);
    Ok(AnalysisFactor {
        w1: linalg::hstack(&[&Mat::identity(p, p), &z(p, np), &z(p, nw)])?,
        w2: -linalg::hstack(&[&fk, &lfr.g, &lfr.e1])?,
        w34: linalg::block(&[
            vec![&z(np, p), &Mat::identity(np, np), &z(np, nw)],
            vec![&hk, &lfr.j, &lfr.e2],
        ])?,
        w5: linalg::hstack(&[&z(nw, p), &z(nw, np), &Mat::identity(nw, nw)])?,
        w6: linalg::hstack(&[&fk, &lfr.g, &lfr.e1])?,
    })
}

/// Variable layout of the robust analysis problem: `P` parameters, then
/// cone parameters, then `gamma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisLayout {
    pub p_dim: usize,
    pub n_p_params: usize,
    pub theta_offset: usize,
    pub n_theta: usize,
    pub g_index: usize,
}

fn check_cone(lfr: &Lfr, cone: &ConeSpec) -> Result<()> {
    if cone.dim_p != lfr.n_p() || cone.dim_q != lfr.n_q() {
        return Err(Error::DimensionMismatch(format!(
            "cone blocks {}+{} do not match LFR channels {}+{}",
            cone.dim_p,
            cone.dim_q,
            lfr.n_p(),
            lfr.n_q()
        )));
    }
    Ok(())
}

/// `W^T M W` of the analysis inequality (negative definite when certified).
pub fn analysis_lmi_matrix(lfr: &Lfr, cone: &ConeSpec, k: &Mat, p: &Mat, theta: &[f64], gamma_sq: f64) -> Result<Mat> {
    check_cone(lfr, cone)?;
    let f = analysis_factor(lfr, k)?;
    let t = cone.element(theta);
    Ok(
        f.w1.transpose() * p * &f.w2 + f.w2.transpose() * p * &f.w1 + f.w34.transpose() * t * &f.w34
            - f.w5.transpose() * &f.w5 * gamma_sq
            + f.w6.transpose() * &f.w6,
    )
}

/// Robust analysis LMI in `(P, theta, gamma^2)` minimizing `gamma^2`.
pub fn analysis_problem(lfr: &Lfr, cone: &ConeSpec, k: &Mat) -> Result<(LmiProblem, AnalysisLayout)> {
    check_cone(lfr, cone)?;
    let f = analysis_factor(lfr, k)?;
    let p = lfr.p();
    let pairs = sym_pairs(p);
    let npp = pairs.len();
    let nth = cone.n_params();
    let layout = AnalysisLayout {
        p_dim: p,
        n_p_params: npp,
        theta_offset: npp,
        n_theta: nth,
        g_index: npp + nth,
    };
    let mut prob = LmiProblem::new(npp + nth + 1);
    let a0 = -(f.w6.transpose() * &f.w6);
    let mut coeffs = Vec::with_capacity(npp + nth + 1);
    for (v, &(i, j)) in pairs.iter().enumerate() {
        let e = sym_unit(p, i, j);
        let c = f.w1.transpose() * &e * &f.w2 + f.w2.transpose() * &e * &f.w1;
        coeffs.push((v, -c));
    }
    for (t, b) in cone.basis.iter().enumerate() {
        coeffs.push((npp + t, -(f.w34.transpose() * b * &f.w34)));
    }
    coeffs.push((layout.g_index, f.w5.transpose() * &f.w5));
    prob.add_block(LmiBlock::strict(linalg::sym(&a0), coeffs));
    let pcoeffs = pairs
        .iter()
        .enumerate()
        .map(|(v, &(i, j))| (v, sym_unit(p, i, j)))
        .collect();
    prob.add_block(LmiBlock::strict(Mat::zeros(p, p), pcoeffs));
    for b in cone.blocks(npp) {
        prob.add_block(b);
    }
    prob.minimize_var(layout.g_index);
    Ok((prob, layout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub gamma: f64,
    pub p: Mat,
    pub theta: Vec<f64>,
    /// Largest `rho` with `d/dt ||eta_a - eta_b||_P^2 <= -2 rho ||.||_P^2`
    /// implied by the certificate.
    pub contraction_rate: f64,
    pub min_eig: f64,
    pub status: SolveStatus,
}

/// Largest `rho` with `L + 2 rho diag(P, 0) <= 0` on the `(eta, p)` block.
fn certificate_rate(lmi: &Mat, p: &Mat, n_eta_p: usize) -> Result<f64> {
    let sub = lmi.view((0, 0), (n_eta_p, n_eta_p)).into_owned();
    let mut d = Mat::zeros(n_eta_p, n_eta_p);
    let pd = p.nrows();
    d.view_mut((0, 0), (pd, pd)).copy_from(p);
    let ok = |rho: f64| -> Result<bool> { Ok(linalg::lambda_max(&linalg::sym(&(&sub + &d * (2.0 * rho))))? < 0.0) };
    if !ok(0.0)? {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while ok(hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(hi);
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Minimize `gamma^2` over `P > 0`, cone parameters and `gamma^2`.
pub fn robust_analysis(lfr: &Lfr, cone: &ConeSpec, k: &Mat) -> Result<AnalysisResult> {
    let (prob, layout) = analysis_problem(lfr, cone, k)?;
    let sol = sdp::solve(&prob)?;
    if !sol.status.is_feasible() {
        return Err(Error::Infeasible(format!(
            "robust analysis LMI: {} ({})",
            sol.status.as_str(),
            sol.message
        )));
    }
    let x = sol.x.as_slice();
    let p = linalg::sym_from_params(layout.p_dim, &x[..layout.n_p_params]);
    let theta = x[layout.theta_offset..layout.theta_offset + layout.n_theta].to_vec();
    let g = x[layout.g_index];
    let lmi = analysis_lmi_matrix(lfr, cone, k, &p, &theta, g)?;
    let rate = certificate_rate(&lmi, &p, layout.p_dim + lfr.n_p())?;
    Ok(AnalysisResult {
        gamma: g.max(0.0).sqrt(),
        p,
        theta,
        contraction_rate: rate,
        min_eig: sol.min_block_eig,
        status: sol.status,
    })
}

/// Outer factor of the dual synthesis inequality, split into the part
/// linear in `Z` (`v1`) and constant rows.
struct DualFactor {
    v2: Mat,
    v34: Mat,
    v5: Mat,
    v6: Mat,
}

fn dual_factor(lfr: &Lfr) -> Result<DualFactor> {
    let (p, nq) = (lfr.p(), lfr.n_q());
    let z = |r: usize, c: usize| Mat::zeros(r, c);
    Ok(DualFactor {
        v2: linalg::hstack(&[&Mat::identity(p, p), &z(p, nq), &z(p, p)])?,
        v34: linalg::block(&[
            vec![&lfr.g.transpose(), &(-lfr.j.transpose()), &(-lfr.g.transpose())],
            vec![&z(nq, p), &Mat::identity(nq, nq), &z(nq, p)],
        ])?,
        v5: linalg::hstack(&[&lfr.e1.transpose(), &(-lfr.e2.transpose()), &(-lfr.e1.transpose())])?,
        v6: linalg::hstack(&[&z(p, p), &z(p, nq), &Mat::identity(p, p)])?,
    })
}

/// `V1 = [(F Z)^T, -(H Z)^T, -(F Z)^T]`.
fn dual_v1(lfr: &Lfr, z: &Mat) -> Result<Mat> {
    let fz = &lfr.f * z;
    let hz = &lfr.h * z;
    linalg::hstack(&[&fz.transpose(), &(-hz.transpose()), &(-fz.transpose())])
}

/// The dual synthesis inequality, sign-flipped so that it must be positive
/// definite: `V1^T V2 + V2^T V1 + V34^T Theta~ V34 - V5^T V5 + g V6^T V6`.
pub fn dual_lmi_matrix(lfr: &Lfr, dual: &ConeSpec, z: &Mat, theta_dual: &[f64], gamma_sq: f64) -> Result<Mat> {
    check_cone(lfr, dual)?;
    let f = dual_factor(lfr)?;
    let v1 = dual_v1(lfr, z)?;
    let t = dual.element(theta_dual);
    Ok(
        v1.transpose() * &f.v2 + f.v2.transpose() * &v1 + f.v34.transpose() * t * &f.v34 - f.v5.transpose() * &f.v5
            + f.v6.transpose() * &f.v6 * gamma_sq,
    )
}

/// Variables: free `Z` entries, dual cone parameters, `gamma^2` (or a
/// fixed `gamma^2` and fixed `Z` when given).
fn dual_problem(
    lfr: &Lfr,
    dual: &ConeSpec,
    entries: &[(usize, usize)],
    fixed: Option<(&Mat, f64)>,
) -> Result<LmiProblem> {
    check_cone(lfr, dual)?;
    let f = dual_factor(lfr)?;
    let (m, p) = (lfr.m(), lfr.p());
    let nth = dual.n_params();
    let sym2 = |a: &Mat, b: &Mat| a.transpose() * b + b.transpose() * a;
    let mut a0 = -(f.v5.transpose() * &f.v5);
    let mut coeffs = Vec::new();
    let n_vars;
    let theta_off;
    match fixed {
        Some((z, g)) => {
            let v1 = dual_v1(lfr, z)?;
            a0 += sym2(&v1, &f.v2) + f.v6.transpose() * &f.v6 * g;
            theta_off = 0;
            n_vars = nth;
        }
        None => {
            for (v, &(i, j)) in entries.iter().enumerate() {
                let v1 = dual_v1(lfr, &unit(m, p, i, j))?;
                coeffs.push((v, sym2(&v1, &f.v2)));
            }
            theta_off = entries.len();
            n_vars = entries.len() + nth + 1;
            coeffs.push((n_vars - 1, f.v6.transpose() * &f.v6));
        }
    }
    for (t, b) in dual.basis.iter().enumerate() {
        coeffs.push((theta_off + t, f.v34.transpose() * b * &f.v34));
    }
    let mut prob = LmiProblem::new(n_vars);
    prob.add_block(LmiBlock::strict(linalg::sym(&a0), coeffs));
    for b in dual.blocks(theta_off) {
        prob.add_block(b);
    }
    if fixed.is_none() {
        prob.minimize_var(n_vars - 1);
    }
    Ok(prob)
}

fn solve_robust(lfr: &Lfr, pair: &ConePair, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    let dual = pair.dual_cone()?;
    let (m, p) = (lfr.m(), lfr.p());
    let entries = gain_entries(structure, m, p)?;
    let prob = dual_problem(lfr, dual, &entries, None)?;
    let sol = sdp::solve(&prob)?;
    if !sol.status.is_feasible() {
        return Err(Error::Infeasible(format!(
            "dual synthesis LMI: {} ({})",
            sol.status.as_str(),
            sol.message
        )));
    }
    let x = sol.x.as_slice();
    let nz = entries.len();
    let z = assemble_gain(&entries, x, m, p);
    let theta = x[nz..nz + dual.n_params()].to_vec();
    let g = x[nz + dual.n_params()];
    let gamma = g.max(0.0).sqrt();
    let (analysis_gamma, status) = match robust_analysis(lfr, &pair.primal, &z) {
        Ok(a) => (Some(a.gamma), sol.status.as_str().to_string()),
        Err(e) => {
            log::warn!("primal re-analysis of the synthesized gain failed: {e}");
            (None, format!("{} (re-analysis failed: {e})", sol.status.as_str()))
        }
    };
    Ok(SynthesisResult {
        k: z.clone(),
        y: Mat::identity(p, p),
        z,
        gamma,
        multiplier: theta,
        multiplier_label: dual.label.clone(),
        certificate: Some(Mat::identity(p, p) * g),
        analysis_gamma,
        status,
    })
}

/// Minimize `gamma^2` over `Z`, dual multipliers and `gamma^2`; the
/// returned gain is re-analyzed with the matched primal cone.
pub fn robust_synthesis(lfr: &Lfr, pair: &ConePair, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    pair.dual_cone()?;
    pair.check_sign_conditions(20, 0)?;
    match solve_robust(lfr, pair, structure) {
        Err(Error::Infeasible(msg)) => {
            if structure.is_some_and(|s| !s.is_full()) && solve_robust(lfr, pair, None).is_ok() {
                log::info!("structured robust synthesis infeasible: {msg}");
                Err(Error::StructureTooRestrictive)
            } else {
                Err(Error::Infeasible(msg))
            }
        }
        other => other,
    }
}

/// Primal-side feasibility at `Z = K`, `Y = I`: the analysis inequality
/// scaled by `1/gamma^2` with `P = gamma^2 I`, over primal multipliers.
pub fn primal_feasible(lfr: &Lfr, cone: &ConeSpec, k: &Mat, gamma: f64) -> Result<SolveStatus> {
    check_cone(lfr, cone)?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let f = analysis_factor(lfr, k)?;
    let inv_g2 = 1.0 / (gamma * gamma);
    let a0 = -(f.w1.transpose() * &f.w2 + f.w2.transpose() * &f.w1 - f.w5.transpose() * &f.w5
        + f.w6.transpose() * &f.w6 * inv_g2);
    let coeffs = cone
        .basis
        .iter()
        .enumerate()
        .map(|(t, b)| (t, -(f.w34.transpose() * b * &f.w34)))
        .collect();
    let mut prob = LmiProblem::new(cone.n_params());
    prob.add_block(LmiBlock::strict(linalg::sym(&a0), coeffs));
    for b in cone.blocks(0) {
        prob.add_block(b);
    }
    Ok(sdp::solve(&prob)?.status)
}

/// Dual-side feasibility at `Z = K`, fixed `gamma`, over dual multipliers.
pub fn dual_feasible(lfr: &Lfr, dual: &ConeSpec, k: &Mat, gamma: f64) -> Result<SolveStatus> {
    if k.shape() != (lfr.m(), lfr.p()) {
        return Err(Error::DimensionMismatch("K does not match the LFR".into()));
    }
    let prob = dual_problem(lfr, dual, &[], Some((k, gamma * gamma)))?;
    Ok(sdp::solve(&prob)?.status)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crosscheck {
    pub agree: bool,
    pub primal: SolveStatus,
    pub dual: SolveStatus,
}

/// Compare feasibility of the primal and dual forms at a fixed gain and
/// performance level.
pub fn dualization_crosscheck(lfr: &Lfr, pair: &ConePair, k: &Mat, gamma: f64) -> Result<Crosscheck> {
    let dual = pair.dual_cone()?;
    let primal = primal_feasible(lfr, &pair.primal, k, gamma)?;
    let dual = dual_feasible(lfr, dual, k, gamma)?;
    Ok(Crosscheck {
        agree: primal.is_feasible() == dual.is_feasible(),
        primal,
        dual,
    })
}

/// Evaluate the slow-sensitivity H-infinity norm of `K` on a frequency grid.
pub fn sensitivity_peak(dc: &DcGains, k: &Mat, epsilon: f64) -> Result<f64> {
    let fr = model::sensitivity_response(dc, k, epsilon, &model::default_omega_grid(epsilon))?;
    Ok(fr.peak().1)
}

/// Parameter vector helper: `P` as upper-triangular parameters.
pub fn sym_params(p: &Mat) -> Vec64 {
    Vec64::from_iterator(
        sym_pairs(p.nrows()).len(),
        sym_pairs(p.nrows()).into_iter().map(|(i, j)| p[(i, j)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfr::{make_lfr, sector_cone, sector_primal};

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn davison_examples() {
        let dc = DcGains::new(s(2.0), s(1.0)).unwrap();
        assert!((davison_gain(&dc).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let dc = DcGains::new(Mat::identity(3, 3), Mat::zeros(3, 1)).unwrap();
        assert!((davison_gain(&dc).unwrap() - Mat::identity(3, 3)).amax() < 1e-15);
        let dc = DcGains::new(Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), Mat::zeros(2, 1)).unwrap();
        assert!(matches!(davison_gain(&dc), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn scalar_hinf() {
        let dc = DcGains::new(s(2.0), s(3.0)).unwrap();
        let r = hinf_lti_synthesis(&dc, None).unwrap();
        assert!((r.gamma - 3.0).abs() < 1e-3, "{}", r.gamma);
        assert!((r.k[(0, 0)] - 1.5).abs() < 1e-2);
        assert!(hinf_min_eig(&dc, &r.z, r.gamma).unwrap() >= -1e-8);
    }

    #[test]
    fn structure_masks() {
        let s = StructureSpec::block_diagonal(&[3, 4], &[3, 2]).unwrap();
        assert_eq!((s.m, s.p), (7, 5));
        assert_eq!(s.free_entries().len(), 9 + 8);
        assert!(!s.is_free(0, 4) && s.is_free(6, 4) && !s.is_free(6, 0));
        assert!(s.y_admissible(&Mat::identity(5, 5)));
        assert!(StructureSpec::new(1, 1, vec![false], YConstraint::None).is_err());
        assert!(StructureSpec::new(1, 2, vec![true, true], YConstraint::BlockDiagonal(vec![1])).is_err());
    }

    #[test]
    fn lti_analysis_all_pass() {
        let l = make_lfr(
            s(1.0),
            Mat::zeros(1, 0),
            Mat::zeros(0, 1),
            Mat::zeros(0, 0),
            s(1.0),
            Mat::zeros(0, 1),
        )
        .unwrap();
        let none = crate::lfr::ConeSpec::empty();
        let r = robust_analysis(&l, &none, &s(1.0)).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-3, "{}", r.gamma);
        assert!(r.contraction_rate > 0.0);
        assert!(matches!(
            robust_analysis(&l, &none, &s(-1.0)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn power_system_analysis() {
        let beta = 2.0;
        let l = make_lfr(s(0.0), s(1.0 / beta), s(1.0), s(0.0), s(-1.0 / beta), s(0.0)).unwrap();
        let cone = sector_primal(1.0, 4.0).unwrap();
        let r = robust_analysis(&l, &cone, &s(1.0)).unwrap();
        assert!((r.gamma - 0.625).abs() < 0.00625, "{}", r.gamma);
        let pair = sector_cone(1.0, 4.0).unwrap();
        assert!(matches!(
            robust_synthesis(&l, &pair, None),
            Err(Error::DualConeInvalid(_))
        ));
    }
}
