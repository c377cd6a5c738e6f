//! Linear fractional representations and multiplier cones.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::model::DcGains;
use crate::sdp::LmiBlock;
use crate::{Error, Mat, Result, Vec64};

pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellPosedness {
    WellPosed,
    IllPosed,
    Unverified,
}

/// `e = F u + G p + E1 w`, `q = H u + J p + E2 w`, `p = Delta(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lfr {
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub j: Mat,
    pub e1: Mat,
    pub e2: Mat,
    pub well_posedness: WellPosedness,
}

impl Lfr {
    pub fn m(&self) -> usize {
        self.f.ncols()
    }
    pub fn p(&self) -> usize {
        self.f.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.e1.ncols()
    }
    pub fn n_p(&self) -> usize {
        self.g.ncols()
    }
    pub fn n_q(&self) -> usize {
        self.h.nrows()
    }

    /// The LTI case: `F = G(0)`, `E1 = G_w(0)`, no uncertainty channels.
    pub fn lti(dc: &DcGains) -> Self {
        let (p, m, nw) = (dc.p(), dc.m(), dc.n_w());
        Lfr {
            f: dc.g0.clone(),
            g: Mat::zeros(p, 0),
            h: Mat::zeros(0, m),
            j: Mat::zeros(0, 0),
            e1: dc.gw0.clone(),
            e2: Mat::zeros(0, nw),
            well_posedness: WellPosedness::WellPosed,
        }
    }

    pub fn with_well_posedness(mut self, family: &DeltaFamily) -> Self {
        self.well_posedness = well_posedness_check(&self, family);
        self
    }
}

/// Validate and assemble an [`Lfr`].
pub fn make_lfr(f: Mat, g: Mat, h: Mat, j: Mat, e1: Mat, e2: Mat) -> Result<Lfr> {
    let (p, m) = f.shape();
    let n_p = g.ncols();
    let n_q = h.nrows();
    let n_w = e1.ncols();
    let checks = [
        ("G rows", g.nrows(), p),
        ("H cols", h.ncols(), m),
        ("J rows", j.nrows(), n_q),
        ("J cols", j.ncols(), n_p),
        ("E1 rows", e1.nrows(), p),
        ("E2 rows", e2.nrows(), n_q),
        ("E2 cols", e2.ncols(), n_w),
    ];
    for (what, got, want) in checks {
        if got != want {
            return Err(Error::DimensionMismatch(format!("{what}: got {got}, expected {want}")));
        }
    }
    let trivially_well_posed = j.iter().all(|v| *v == 0.0);
    Ok(Lfr {
        f,
        g,
        h,
        j,
        e1,
        e2,
        well_posedness: if trivially_well_posed {
            WellPosedness::WellPosed
        } else {
            WellPosedness::Unverified
        },
    })
}

pub type DeltaFn = Arc<dyn Fn(&Vec64) -> Vec64 + Send + Sync>;

/// Static nonlinearity `p = Delta(q)`.
#[derive(Clone)]
pub struct DeltaMap {
    pub n_q: usize,
    pub n_p: usize,
    pub map: DeltaFn,
    /// Declared cone memberships, informational.
    pub cones: Vec<String>,
}

impl fmt::Debug for DeltaMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeltaMap")
            .field("n_q", &self.n_q)
            .field("n_p", &self.n_p)
            .field("cones", &self.cones)
            .finish()
    }
}

impl DeltaMap {
    pub fn new(n_q: usize, n_p: usize, map: DeltaFn) -> Self {
        DeltaMap {
            n_q,
            n_p,
            map,
            cones: Vec::new(),
        }
    }

    pub fn declare(mut self, cone: impl Into<String>) -> Self {
        self.cones.push(cone.into());
        self
    }

    pub fn linear(m: Mat) -> Self {
        let (n_p, n_q) = m.shape();
        DeltaMap::new(n_q, n_p, Arc::new(move |q| &m * q))
    }

    pub fn zero(n_q: usize, n_p: usize) -> Self {
        DeltaMap::new(n_q, n_p, Arc::new(move |_| Vec64::zeros(n_p)))
    }

    /// Componentwise map applied to each channel (requires `n_p = n_q`).
    pub fn diagonal(n: usize, f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        DeltaMap::new(n, n, Arc::new(move |q: &Vec64| Vec64::from_fn(n, |i, _| f(i, q[i]))))
    }

    pub fn eval(&self, q: &Vec64) -> Result<Vec64> {
        if q.len() != self.n_q {
            return Err(Error::DimensionMismatch(format!(
                "Delta expects {} inputs, got {}",
                self.n_q,
                q.len()
            )));
        }
        let p = (self.map)(q);
        if p.len() != self.n_p {
            return Err(Error::DimensionMismatch(format!(
                "Delta returned {} outputs, declared {}",
                p.len(),
                self.n_p
            )));
        }
        Ok(p)
    }

    /// `q -> Delta(q) - diag(shifts) q`.
    pub fn shifted(&self, shifts: &[f64]) -> Result<Self> {
        if self.n_p != self.n_q || shifts.len() != self.n_p {
            return Err(Error::DimensionMismatch("shift needs a square Delta".into()));
        }
        let inner = self.map.clone();
        let s = shifts.to_vec();
        Ok(DeltaMap {
            n_q: self.n_q,
            n_p: self.n_p,
            map: Arc::new(move |q: &Vec64| {
                let mut p = inner(q);
                for i in 0..p.len() {
                    p[i] -= s[i] * q[i];
                }
                p
            }),
            cones: Vec::new(),
        })
    }
}

pub fn saturation(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Solve the loop equations; returns `(q, p)`.
pub fn solve_loop(lfr: &Lfr, delta: &DeltaMap, u: &Vec64, w: &Vec64) -> Result<(Vec64, Vec64)> {
    if u.len() != lfr.m() || w.len() != lfr.n_w() {
        return Err(Error::DimensionMismatch(format!(
            "u has {} entries (expected {}), w has {} (expected {})",
            u.len(),
            lfr.m(),
            w.len(),
            lfr.n_w()
        )));
    }
    if delta.n_q != lfr.n_q() || delta.n_p != lfr.n_p() {
        return Err(Error::DimensionMismatch("Delta does not match the LFR channels".into()));
    }
    let base = &lfr.h * u + &lfr.e2 * w;
    if lfr.j.iter().all(|v| *v == 0.0) {
        let p = delta.eval(&base)?;
        return Ok((base, p));
    }
    let mut q = base.clone();
    for _ in 0..FIXED_POINT_MAX_ITER {
        let p = delta.eval(&q)?;
        let target = &base + &lfr.j * &p;
        let resid = (&target - &q).amax();
        if !resid.is_finite() {
            break;
        }
        if resid < FIXED_POINT_TOL {
            return Ok((target, delta.eval(&q)?));
        }
        q = &q * (1.0 - FIXED_POINT_DAMPING) + target * FIXED_POINT_DAMPING;
    }
    Err(Error::FixedPointDivergence(FIXED_POINT_MAX_ITER))
}

/// Equilibrium input-to-error map `pi_Delta(u, w)`.
pub fn eval_pi_delta(lfr: &Lfr, delta: &DeltaMap, u: &Vec64, w: &Vec64) -> Result<Vec64> {
    let (_, p) = solve_loop(lfr, delta, u, w)?;
    Ok(&lfr.f * u + &lfr.g * p + &lfr.e1 * w)
}

/// Description of the admissible Delta family for the well-posedness test.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaFamily {
    /// `Delta = delta I` with `delta` ranging over `[lo, hi]`.
    ScalarGain {
        lo: f64,
        hi: f64,
    },
    /// Any map with incremental gain at most `L`.
    Lipschitz(f64),
    /// Componentwise slope-restricted maps in `[mu, L]`.
    Sector {
        mu: f64,
        l: f64,
    },
    Unknown,
}

/// Invertibility of `q -> q - J Delta(q)` over the family.
pub fn well_posedness_check(lfr: &Lfr, family: &DeltaFamily) -> WellPosedness {
    if lfr.j.iter().all(|v| *v == 0.0) {
        return WellPosedness::WellPosed;
    }
    match *family {
        DeltaFamily::ScalarGain { lo, hi } => {
            let n = lfr.n_q();
            if lfr.n_p() != n || !(hi >= lo) {
                return WellPosedness::IllPosed;
            }
            for k in 0..=100 {
                let d = lo + (hi - lo) * k as f64 / 100.0;
                let m = Mat::identity(n, n) - &lfr.j * d;
                let det = m.determinant();
                if det.abs() <= 1e-8 {
                    return WellPosedness::IllPosed;
                }
            }
            WellPosedness::WellPosed
        }
        DeltaFamily::Lipschitz(l) => lipschitz_test(lfr, l),
        DeltaFamily::Sector { mu, l } => lipschitz_test(lfr, mu.abs().max(l.abs())),
        DeltaFamily::Unknown => WellPosedness::Unverified,
    }
}

fn lipschitz_test(lfr: &Lfr, l: f64) -> WellPosedness {
    if linalg::norm2(&lfr.j) * l < 1.0 {
        WellPosedness::WellPosed
    } else {
        WellPosedness::Unverified
    }
}

/// Loop transformation `Delta' = Delta - diag(shifts)`. Maps a sector
/// `[mu, L]` on channel `i` to `[mu - shifts[i], L - shifts[i]]`.
pub fn shift_sector(lfr: &Lfr, shifts: &[f64]) -> Result<Lfr> {
    let n = lfr.n_p();
    if lfr.n_q() != n || shifts.len() != n {
        return Err(Error::DimensionMismatch(
            "sector shift needs n_p = n_q = number of shifts".into(),
        ));
    }
    let m = Mat::from_diagonal(&Vec64::from_column_slice(shifts));
    let i_jm = Mat::identity(n, n) - &lfr.j * &m;
    let mi = i_jm
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularSolve("I - J M is singular".into()))?;
    let gm = &lfr.g * &m * &mi;
    let mut out = make_lfr(
        &lfr.f + &gm * &lfr.h,
        &lfr.g + &gm * &lfr.j,
        &mi * &lfr.h,
        &mi * &lfr.j,
        &lfr.e1 + &gm * &lfr.e2,
        &mi * &lfr.e2,
    )?;
    if lfr.well_posedness != WellPosedness::WellPosed {
        out.well_posedness = lfr.well_posedness;
    }
    Ok(out)
}

/// Affine LMI constraint on cone parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub a0: Mat,
    pub coeffs: Vec<(usize, Mat)>,
    pub strict: bool,
}

impl ConeConstraint {
    fn nonneg(j: usize) -> Self {
        ConeConstraint {
            a0: Mat::zeros(1, 1),
            coeffs: vec![(j, Mat::from_element(1, 1, 1.0))],
            strict: false,
        }
    }

    fn positive(j: usize) -> Self {
        ConeConstraint {
            strict: true,
            ..Self::nonneg(j)
        }
    }

    fn eval(&self, theta: &[f64]) -> Mat {
        let mut s = self.a0.clone();
        for (j, m) in &self.coeffs {
            s += m * theta[*j];
        }
        s
    }
}

/// Finitely parameterized cone `Theta(theta) = sum_j theta_j M_j` over the
/// `(p, q)` partition, with LMI constraints on `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSpec {
    pub label: String,
    pub dim_p: usize,
    pub dim_q: usize,
    pub basis: Vec<Mat>,
    pub constraints: Vec<ConeConstraint>,
    /// A strictly interior parameter vector.
    pub center: Vec<f64>,
}

impl ConeSpec {
    /// Zero-dimensional cone (no uncertainty channels).
    pub fn empty() -> Self {
        ConeSpec {
            label: "none".into(),
            dim_p: 0,
            dim_q: 0,
            basis: Vec::new(),
            constraints: Vec::new(),
            center: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.dim_p + self.dim_q
    }

    pub fn element(&self, theta: &[f64]) -> Mat {
        let d = self.dim();
        let mut t = Mat::zeros(d, d);
        for (b, v) in self.basis.iter().zip(theta) {
            t += b * *v;
        }
        t
    }

    /// Parameter constraints as solver blocks, variables shifted by `offset`.
    pub fn blocks(&self, offset: usize) -> Vec<LmiBlock> {
        self.constraints
            .iter()
            .map(|c| {
                let coeffs = c.coeffs.iter().map(|(j, m)| (j + offset, m.clone())).collect();
                if c.strict {
                    LmiBlock::strict(c.a0.clone(), coeffs)
                } else {
                    LmiBlock::nonstrict(c.a0.clone(), coeffs)
                }
            })
            .collect()
    }

    /// Whether `theta` satisfies the constraints (strict ones with a
    /// positive margin).
    pub fn contains(&self, theta: &[f64], margin: f64) -> bool {
        theta.len() == self.n_params()
            && self.constraints.iter().all(|c| {
                let lm = linalg::lambda_min(&linalg::sym(&c.eval(theta))).unwrap_or(f64::NEG_INFINITY);
                if c.strict {
                    lm > margin
                } else {
                    lm >= -1e-14
                }
            })
    }

    /// Random parameters inside the cone, around the center.
    pub fn sample_interior<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        for attempt in 0..1000 {
            let spread = if attempt < 500 { 0.9 } else { 0.3 };
            let theta: Vec<f64> = self
                .center
                .iter()
                .map(|c| {
                    let scale = c.abs().max(0.5);
                    c + spread * scale * (2.0 * rng.random::<f64>() - 1.0)
                })
                .collect();
            if self.contains(&theta, 1e-3) {
                return theta;
            }
        }
        self.center.clone()
    }

    /// Sub-blocks `(Theta11, Theta22)` of an element.
    pub fn diagonal_blocks(&self, theta: &[f64]) -> (Mat, Mat) {
        let t = self.element(theta);
        let p = self.dim_p;
        let q = self.dim_q;
        (t.view((0, 0), (p, p)).into_owned(), t.view((p, p), (q, q)).into_owned())
    }
}

/// Primal cone with an optional matched dual (`Theta~ = Theta^{-1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConePair {
    pub primal: ConeSpec,
    pub dual: Option<ConeSpec>,
    pub validity_conditions: Vec<String>,
}

impl ConePair {
    /// Pair for an LFR without uncertainty channels.
    pub fn empty() -> Self {
        ConePair {
            primal: ConeSpec::empty(),
            dual: Some(ConeSpec::empty()),
            validity_conditions: Vec::new(),
        }
    }

    pub fn primal_only(primal: ConeSpec, why: impl Into<String>) -> Self {
        ConePair {
            primal,
            dual: None,
            validity_conditions: vec![why.into()],
        }
    }

    pub fn dual_cone(&self) -> Result<&ConeSpec> {
        self.dual.as_ref().ok_or(Error::DualUnavailable)
    }

    /// Dual parameters of `Theta(theta)^{-1}` (least squares on the dual
    /// basis, residual-checked).
    pub fn matched_dual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let dual = self.dual_cone()?;
        let inv = self
            .primal
            .element(theta)
            .try_inverse()
            .ok_or_else(|| Error::SingularSolve("primal element is singular".into()))?;
        project_onto_basis(&dual.basis, &inv)
    }

    /// Primal parameters of `Theta~(theta~)^{-1}`.
    pub fn matched_primal(&self, theta_dual: &[f64]) -> Result<Vec<f64>> {
        let dual = self.dual_cone()?;
        let inv = dual
            .element(theta_dual)
            .try_inverse()
            .ok_or_else(|| Error::SingularSolve("dual element is singular".into()))?;
        project_onto_basis(&self.primal.basis, &inv)
    }

    /// Sign conditions needed for dualization: sampled primal elements have
    /// `Theta22 >= 0`, sampled dual elements have `Theta~11 <= 0`, and the
    /// matched elements invert each other.
    pub fn check_sign_conditions(&self, n_samples: usize, seed: u64) -> Result<()> {
        let dual = self.dual_cone()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_samples {
            let th = self.primal.sample_interior(&mut rng);
            let (_, t22) = self.primal.diagonal_blocks(&th);
            if t22.nrows() > 0 && linalg::lambda_min(&t22)? < -1e-12 {
                return Err(Error::DualConeInvalid(format!(
                    "{}: primal Theta22 not positive semidefinite at {th:?}",
                    self.primal.label
                )));
            }
            let td = dual.sample_interior(&mut rng);
            let (d11, _) = dual.diagonal_blocks(&td);
            if d11.nrows() > 0 && linalg::lambda_max(&d11)? > 1e-12 {
                return Err(Error::DualConeInvalid(format!(
                    "{}: dual Theta~11 not negative semidefinite at {td:?}",
                    dual.label
                )));
            }
            let matched = self.matched_dual(&th)?;
            let prod = self.primal.element(&th) * dual.element(&matched);
            let d = prod.nrows();
            if (prod - Mat::identity(d, d)).amax() > 1e-8 {
                return Err(Error::DualConeInvalid("matched dual is not the inverse".into()));
            }
        }
        Ok(())
    }
}

fn project_onto_basis(basis: &[Mat], target: &Mat) -> Result<Vec<f64>> {
    let d2 = target.len();
    let mut a = Mat::zeros(d2, basis.len());
    for (j, b) in basis.iter().enumerate() {
        a.set_column(j, &Vec64::from_column_slice(b.as_slice()));
    }
    let rhs = Vec64::from_column_slice(target.as_slice());
    let (ap, _) = linalg::pinv(&a, 1e-12);
    let theta = &ap * &rhs;
    let resid = (&a * &theta - &rhs).amax();
    if resid > 1e-8 * (1.0 + target.amax()) {
        return Err(Error::NumericalFailure(format!(
            "inverse is outside the span of the dual basis (residual {resid:e})"
        )));
    }
    Ok(theta.iter().copied().collect())
}

/// `theta * diag(-I_{n_p}, L^2 I_{n_q})`, `theta >= 0`.
pub fn lipschitz_cone(l: f64, n_p: usize, n_q: usize) -> Result<ConeSpec> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant must be positive, got {l}"
        )));
    }
    let diag: Vec<f64> = std::iter::repeat_n(-1.0, n_p)
        .chain(std::iter::repeat_n(l * l, n_q))
        .collect();
    Ok(ConeSpec {
        label: format!("lipschitz(L={l})"),
        dim_p: n_p,
        dim_q: n_q,
        basis: vec![Mat::from_diagonal(&Vec64::from_vec(diag))],
        constraints: vec![ConeConstraint::nonneg(0)],
        center: vec![1.0],
    })
}

/// Scalar sector `[mu, L]`: `theta [[-2, mu+L], [mu+L, -2 mu L]]`,
/// `theta >= 0`. Defined for any `mu <= L`.
pub fn sector_primal(mu: f64, l: f64) -> Result<ConeSpec> {
    if !(mu >= 0.0 && l >= mu && l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sector needs 0 <= mu <= L, got [{mu}, {l}]"
        )));
    }
    Ok(ConeSpec {
        label: format!("sector(mu={mu}, L={l})"),
        dim_p: 1,
        dim_q: 1,
        basis: vec![Mat::from_row_slice(2, 2, &[-2.0, mu + l, mu + l, -2.0 * mu * l])],
        constraints: vec![ConeConstraint::nonneg(0)],
        center: vec![1.0],
    })
}

/// Sector cone with its analytic dual `theta~ / (L-mu)^2 [[2 mu L, mu+L], [mu+L, 2]]`.
pub fn sector_cone(mu: f64, l: f64) -> Result<ConePair> {
    let primal = sector_primal(mu, l)?;
    if l == mu {
        return Err(Error::SingularBasis);
    }
    let s = 1.0 / ((l - mu) * (l - mu));
    let dual = ConeSpec {
        label: format!("sector-dual(mu={mu}, L={l})"),
        dim_p: 1,
        dim_q: 1,
        basis: vec![Mat::from_row_slice(
            2,
            2,
            &[2.0 * mu * l * s, (mu + l) * s, (mu + l) * s, 2.0 * s],
        )],
        constraints: vec![ConeConstraint::nonneg(0)],
        center: vec![1.0],
    };
    let mut validity = vec![format!("mu < L ({mu} < {l})")];
    if mu > 0.0 {
        validity.push("Theta22 = -2 mu L theta < 0: dualization sign conditions fail".into());
    }
    Ok(ConePair {
        primal,
        dual: Some(dual),
        validity_conditions: validity,
    })
}

/// Symmetric `k x k` matrices as parameters `(i, j)` with `i <= j`, or the
/// diagonal only.
fn q_basis(k: usize, full: bool) -> Vec<Mat> {
    if full {
        linalg::sym_pairs(k)
            .into_iter()
            .map(|(i, j)| linalg::sym_unit(k, i, j))
            .collect()
    } else {
        (0..k).map(|i| linalg::sym_unit(k, i, i)).collect()
    }
}

fn q_center(k: usize, full: bool) -> Vec<f64> {
    if full {
        linalg::sym_pairs(k)
            .into_iter()
            .map(|(i, j)| if i == j { 1.0 } else { 0.0 })
            .collect()
    } else {
        vec![1.0; k]
    }
}

/// Cone of `[[-Q, S], [S^T, Q]]` with `Q > 0`; `S = [[0, s], [-s, 0]]` when
/// `allow_skew` (only for `block_dim = 2`). `Q` is a full symmetric matrix
/// for `block_dim = 2` and diagonal otherwise. The dual `[[-D, 0], [0, D]]`
/// exists only without skew.
pub fn parametric_cone(block_dim: usize, allow_skew: bool) -> Result<ConePair> {
    if block_dim == 0 {
        return Err(Error::InvalidArgument("block dimension must be positive".into()));
    }
    if allow_skew && block_dim != 2 {
        return Err(Error::InvalidArgument(
            "skew parameter is defined for block_dim = 2".into(),
        ));
    }
    let k = block_dim;
    let full = k == 2;
    let qb = q_basis(k, full);
    let nq = qb.len();
    let build = |sign_p: f64, sign_q: f64, skew: bool, label: String| {
        let mut basis: Vec<Mat> = qb
            .iter()
            .map(|b| linalg::block_diag(&[&(b * sign_p), &(b * sign_q)]))
            .collect();
        let mut center = q_center(k, full);
        if skew {
            let s = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
            let z = Mat::zeros(2, 2);
            basis.push(linalg::block(&[vec![&z, &s], vec![&s.transpose(), &z]]).expect("2x2 blocks"));
            center.push(0.0);
        }
        let constraint = ConeConstraint {
            a0: Mat::zeros(k, k),
            coeffs: qb.iter().cloned().enumerate().collect(),
            strict: true,
        };
        let constraints = if full {
            vec![constraint]
        } else {
            (0..nq).map(ConeConstraint::positive).collect()
        };
        ConeSpec {
            label,
            dim_p: k,
            dim_q: k,
            basis,
            constraints,
            center,
        }
    };
    let primal = build(-1.0, 1.0, allow_skew, format!("parametric(dim={k}, skew={allow_skew})"));
    if allow_skew {
        return Ok(ConePair {
            primal,
            dual: None,
            validity_conditions: vec!["dual defined only for s = 0".into()],
        });
    }
    let dual = build(-1.0, 1.0, false, format!("parametric-dual(dim={k})"));
    Ok(ConePair {
        primal,
        dual: Some(dual),
        validity_conditions: vec!["s = 0".into()],
    })
}

/// Index of an entry of block `(which, local)` in the daug ordering
/// `(p_a, p_b, q_a, q_b)`.
fn daug_index(a: &ConeSpec, b: &ConeSpec, first: bool, i: usize) -> usize {
    let (pa, pb, qa) = (a.dim_p, b.dim_p, a.dim_q);
    if first {
        if i < pa {
            i
        } else {
            pa + pb + (i - pa)
        }
    } else if i < pb {
        pa + i
    } else {
        pa + pb + qa + (i - pb)
    }
}

/// Diagonal augmentation of two cones: `p` blocks first, then `q` blocks.
pub fn daug_cone(a: &ConeSpec, b: &ConeSpec) -> ConeSpec {
    let d = a.dim() + b.dim();
    let embed = |m: &Mat, first: bool| {
        let mut out = Mat::zeros(d, d);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(daug_index(a, b, first, i), daug_index(a, b, first, j))] = m[(i, j)];
            }
        }
        out
    };
    let na = a.n_params();
    let basis = a
        .basis
        .iter()
        .map(|m| embed(m, true))
        .chain(b.basis.iter().map(|m| embed(m, false)))
        .collect();
    let constraints = a
        .constraints
        .iter()
        .cloned()
        .chain(b.constraints.iter().map(|c| ConeConstraint {
            a0: c.a0.clone(),
            coeffs: c.coeffs.iter().map(|(j, m)| (j + na, m.clone())).collect(),
            strict: c.strict,
        }))
        .collect();
    ConeSpec {
        label: format!("daug({}, {})", a.label, b.label),
        dim_p: a.dim_p + b.dim_p,
        dim_q: a.dim_q + b.dim_q,
        basis,
        constraints,
        center: a.center.iter().chain(&b.center).copied().collect(),
    }
}

/// Diagonal augmentation of pairs; the dual exists when both duals do.
pub fn daug_pair(a: &ConePair, b: &ConePair) -> ConePair {
    let dual = match (&a.dual, &b.dual) {
        (Some(x), Some(y)) => Some(daug_cone(x, y)),
        _ => None,
    };
    ConePair {
        primal: daug_cone(&a.primal, &b.primal),
        dual,
        validity_conditions: a
            .validity_conditions
            .iter()
            .chain(&b.validity_conditions)
            .cloned()
            .collect(),
    }
}

/// Outcome of an incremental quadratic constraint sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct IqcCheck {
    pub ok: bool,
    /// `(q, q', form value)` of the first violation.
    pub witness: Option<(Vec64, Vec64, f64)>,
    pub theta: Vec<f64>,
}

/// Evaluate `[dp; dq]^T Theta [dp; dq]` on random pairs for one interior
/// cone element; `q` entries are drawn uniformly from `[-3, 3]`.
pub fn check_iqc_samples(cone: &ConeSpec, delta: &DeltaMap, n_samples: usize, seed: u64) -> Result<IqcCheck> {
    if delta.n_p != cone.dim_p || delta.n_q != cone.dim_q {
        return Err(Error::DimensionMismatch(format!(
            "cone is {}+{}, Delta is {}->{}",
            cone.dim_p, cone.dim_q, delta.n_q, delta.n_p
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = cone.sample_interior(&mut rng);
    let t = cone.element(&theta);
    let nq = delta.n_q;
    for _ in 0..n_samples {
        let q = Vec64::from_fn(nq, |_, _| rng.random_range(-3.0..3.0));
        let q2 = Vec64::from_fn(nq, |_, _| rng.random_range(-3.0..3.0));
        let dp = delta.eval(&q)? - delta.eval(&q2)?;
        let dq = &q - &q2;
        let z = Vec64::from_iterator(cone.dim(), dp.iter().chain(dq.iter()).copied());
        let v = z.dot(&(&t * &z));
        if v < -1e-10 {
            return Ok(IqcCheck {
                ok: false,
                witness: Some((q, q2, v)),
                theta,
            });
        }
    }
    Ok(IqcCheck {
        ok: true,
        witness: None,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_lfr(f: f64, g: f64, h: f64, j: f64) -> Lfr {
        make_lfr(s(f), s(g), s(h), s(j), Mat::zeros(1, 1), Mat::zeros(1, 1)).unwrap()
    }

    #[test]
    fn lti_recovery() {
        let dc = DcGains::new(Mat::identity(2, 3), Mat::from_element(2, 1, 1.0)).unwrap();
        let l = Lfr::lti(&dc);
        assert_eq!((l.n_p(), l.n_q(), l.m(), l.p(), l.n_w()), (0, 0, 3, 2, 1));
        let u = Vec64::from_vec(vec![1.0, 2.0, 3.0]);
        let w = Vec64::from_element(1, 0.5);
        let e = eval_pi_delta(&l, &DeltaMap::zero(0, 0), &u, &w).unwrap();
        assert_eq!(e, &dc.g0 * &u + &dc.gw0 * &w);
    }

    #[test]
    fn dimension_errors() {
        assert!(make_lfr(s(1.0), Mat::zeros(2, 1), s(1.0), s(0.0), s(0.0), s(0.0)).is_err());
        let l = make_lfr(
            Mat::zeros(1, 1),
            Mat::zeros(1, 2),
            Mat::zeros(3, 1),
            Mat::zeros(3, 2),
            Mat::zeros(1, 1),
            Mat::zeros(3, 1),
        )
        .unwrap();
        assert_eq!((l.n_p(), l.n_q()), (2, 3));
    }

    #[test]
    fn pi_delta_examples() {
        let l = scalar_lfr(0.0, 1.0, 1.0, 0.0);
        let sat = DeltaMap::diagonal(1, |_, x| saturation(x));
        let one = Vec64::from_element(1, 1.0);
        let zero = Vec64::zeros(1);
        assert_eq!(eval_pi_delta(&l, &sat, &(&one * 2.0), &zero).unwrap()[0], 1.0);
        assert_eq!(eval_pi_delta(&l, &sat, &(&one * 0.5), &zero).unwrap()[0], 0.5);
        let l = scalar_lfr(0.0, 1.0, 1.0, 0.5);
        let id = DeltaMap::linear(s(1.0));
        let e = eval_pi_delta(&l, &id, &one, &zero).unwrap()[0];
        assert!((e - 2.0).abs() < 1e-9);
        let l = scalar_lfr(0.0, 1.0, 1.0, 2.0);
        let e = eval_pi_delta(&l, &id, &one, &zero);
        assert!(matches!(e, Err(Error::FixedPointDivergence(_))));
    }

    #[test]
    fn well_posedness_examples() {
        let fam = DeltaFamily::ScalarGain { lo: -1.0, hi: 1.0 };
        let mk = |j: Mat| {
            let n = j.nrows();
            make_lfr(
                Mat::zeros(1, 1),
                Mat::zeros(1, n),
                Mat::zeros(n, 1),
                j,
                Mat::zeros(1, 0),
                Mat::zeros(n, 0),
            )
            .unwrap()
        };
        assert_eq!(
            well_posedness_check(&mk(Mat::zeros(2, 2)), &fam),
            WellPosedness::WellPosed
        );
        assert_eq!(
            well_posedness_check(&mk(Mat::identity(2, 2) * 2.0), &fam),
            WellPosedness::IllPosed
        );
        let j = Mat::from_row_slice(2, 2, &[0.3, 5.0, 0.0, -0.3]);
        assert_eq!(well_posedness_check(&mk(j.clone()), &fam), WellPosedness::WellPosed);
        assert_eq!(
            well_posedness_check(&mk(j), &DeltaFamily::Unknown),
            WellPosedness::Unverified
        );
        assert_eq!(
            well_posedness_check(&mk(Mat::identity(2, 2) * 0.4), &DeltaFamily::Lipschitz(2.0)),
            WellPosedness::WellPosed
        );
    }

    #[test]
    fn lipschitz_bases() {
        let c = lipschitz_cone(1.0, 1, 1).unwrap();
        assert_eq!(c.basis[0], Mat::from_diagonal(&Vec64::from_vec(vec![-1.0, 1.0])));
        let c = lipschitz_cone(2.0, 2, 2).unwrap();
        assert_eq!(
            c.basis[0],
            Mat::from_diagonal(&Vec64::from_vec(vec![-1.0, -1.0, 4.0, 4.0]))
        );
        assert!(lipschitz_cone(0.0, 1, 1).is_err());
    }

    #[test]
    fn sector_bases() {
        let p = sector_cone(0.0, 1.0).unwrap();
        assert_eq!(p.primal.basis[0], Mat::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, 0.0]));
        assert_eq!(
            p.dual.as_ref().unwrap().basis[0],
            Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 2.0])
        );
        assert_eq!(sector_cone(1.0, 1.0), Err(Error::SingularBasis));
        let p = sector_cone(1.0, 4.0).unwrap();
        let inv = Mat::from_row_slice(2, 2, &[-2.0, 5.0, 5.0, -8.0])
            .try_inverse()
            .unwrap();
        assert!((&p.dual.unwrap().basis[0] - inv).amax() < 1e-12);
    }

    #[test]
    fn parametric_identity_involution() {
        let pair = parametric_cone(2, false).unwrap();
        let th = [1.0, 0.0, 1.0];
        let expect = Mat::from_diagonal(&Vec64::from_vec(vec![-1.0, -1.0, 1.0, 1.0]));
        assert_eq!(pair.primal.element(&th), expect);
        assert_eq!(pair.dual.as_ref().unwrap().element(&th), expect);
        assert_eq!(pair.matched_dual(&th).unwrap(), vec![1.0, 0.0, 1.0]);
        let skew = parametric_cone(2, true).unwrap();
        assert_eq!(skew.dual_cone().unwrap_err(), Error::DualUnavailable);
        assert_eq!(skew.primal.n_params(), 4);
        assert!(parametric_cone(3, true).is_err());
        assert_eq!(parametric_cone(3, false).unwrap().primal.n_params(), 3);
    }

    #[test]
    fn daug_pattern() {
        let a = lipschitz_cone(1.0, 1, 1).unwrap();
        let b = lipschitz_cone(2.0, 1, 1).unwrap();
        let c = daug_cone(&a, &b);
        let el = c.element(&[0.5, 3.0]);
        assert_eq!(el, Mat::from_diagonal(&Vec64::from_vec(vec![-0.5, -3.0, 0.5, 12.0])));
        let sec = sector_primal(0.0, 1.0).unwrap();
        let d = daug_cone(&sec, &sec);
        let el = d.element(&[1.0, 2.0]);
        let expect = Mat::from_row_slice(
            4,
            4,
            &[
                -2.0, 0.0, 1.0, 0.0, 0.0, -4.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0,
            ],
        );
        assert_eq!(el, expect);
    }

    #[test]
    fn sign_conditions() {
        assert!(sector_cone(0.0, 1.0).unwrap().check_sign_conditions(20, 1).is_ok());
        assert!(matches!(
            sector_cone(1.0, 4.0).unwrap().check_sign_conditions(5, 1),
            Err(Error::DualConeInvalid(_))
        ));
        let pair = daug_pair(&sector_cone(0.0, 1.0).unwrap(), &parametric_cone(2, false).unwrap());
        assert!(pair.check_sign_conditions(20, 3).is_ok());
    }

    #[test]
    fn iqc_examples() {
        let sec = sector_primal(0.0, 1.0).unwrap();
        let sat = DeltaMap::diagonal(1, |_, x| saturation(x));
        assert!(check_iqc_samples(&sec, &sat, 10_000, 1).unwrap().ok);
        let lip = lipschitz_cone(1.0, 1, 1).unwrap();
        let double = DeltaMap::linear(s(2.0));
        let r = check_iqc_samples(&lip, &double, 100, 1).unwrap();
        assert!(!r.ok && r.witness.is_some());
        let zero = DeltaMap::zero(1, 1);
        assert!(check_iqc_samples(&lip, &zero, 100, 2).unwrap().ok);
    }

    #[test]
    fn sector_shift_preserves_map() {
        let l = make_lfr(s(0.3), s(0.5), s(1.0), s(0.2), s(-0.5), s(0.1)).unwrap();
        let phi = DeltaMap::diagonal(1, |_, x| 2.5 * x + 1.5 * x.sin());
        let shifted = shift_sector(&l, &[1.0]).unwrap();
        let phi2 = phi.shifted(&[1.0]).unwrap();
        for (u, w) in [(0.3, -1.0), (1.5, 0.2), (-2.0, 0.7)] {
            let u = Vec64::from_element(1, u);
            let w = Vec64::from_element(1, w);
            let a = eval_pi_delta(&l, &phi, &u, &w);
            let b = eval_pi_delta(&shifted, &phi2, &u, &w);
            match (a, b) {
                (Ok(a), Ok(b)) => assert!((a - b).amax() < 1e-8),
                (a, b) => panic!("{a:?} {b:?}"),
            }
        }
    }
}
