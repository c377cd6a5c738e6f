//! Plant and controller data model: LTI state space, DC gains, slow dynamics,
//! slow sensitivity frequency response and seeded random stable plants.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, norm2};
use crate::{Error, Mat, Result, Vec64};

/// Relative Hurwitz margin: eigenvalues must satisfy `Re < -1e-9 * ||A||`.
pub const HURWITZ_MARGIN_REL: f64 = 1e-9;

/// Continuous-time LTI plant
/// `x' = A x + B u + Bw w`, `e = C x + D u + Dw w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub bw: Mat,
    pub c: Mat,
    pub d: Mat,
    pub dw: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, bw: Mat, c: Mat, d: Mat, dw: Mat) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let nw = bw.ncols();
        let p = c.nrows();
        let checks = [
            ("A", a.shape(), (n, n)),
            ("B", b.shape(), (n, m)),
            ("Bw", bw.shape(), (n, nw)),
            ("C", c.shape(), (p, n)),
            ("D", d.shape(), (p, m)),
            ("Dw", dw.shape(), (p, nw)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        Ok(Self { a, b, bw, c, d, dw })
    }

    /// Plant without disturbance channels.
    pub fn without_disturbance(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let (n, p) = (a.nrows(), c.nrows());
        Self::new(a, b, Mat::zeros(n, 0), c, d, Mat::zeros(p, 0))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.bw.ncols()
    }

    pub fn hurwitz_margin(&self) -> f64 {
        HURWITZ_MARGIN_REL * norm2(&self.a)
    }
}

/// DC gains `G(0) = -C A^{-1} B + D` and `Gw(0) = -C A^{-1} Bw + Dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct DcGains {
    pub g0: Mat,
    pub gw0: Mat,
}

impl DcGains {
    pub fn new(g0: Mat, gw0: Mat) -> Result<Self> {
        if g0.nrows() != gw0.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "G0 has {} rows, Gw0 has {}",
                g0.nrows(),
                gw0.nrows()
            )));
        }
        Ok(Self { g0, gw0 })
    }
    pub fn p(&self) -> usize {
        self.g0.nrows()
    }
    pub fn m(&self) -> usize {
        self.g0.ncols()
    }
    pub fn n_w(&self) -> usize {
        self.gw0.ncols()
    }
}

/// Vector field / output map signature `(x, u, w) -> R^k`.
pub type PlantFn = Arc<dyn Fn(&Vec64, &Vec64, &Vec64) -> Vec64 + Send + Sync>;

/// Nonlinear time-invariant plant `x' = f(x,u,w)`, `e = h(x,u,w)`.
#[derive(Clone)]
pub struct NonlinearPlant {
    pub n: usize,
    pub m: usize,
    pub n_w: usize,
    pub p: usize,
    pub f: PlantFn,
    pub h: PlantFn,
    /// Optional symmetric state box `|x_i| <= bound` on which the plant
    /// assumptions are known to hold.
    pub state_bound: Option<f64>,
}

impl fmt::Debug for NonlinearPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearPlant")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("n_w", &self.n_w)
            .field("p", &self.p)
            .field("state_bound", &self.state_bound)
            .finish()
    }
}

impl NonlinearPlant {
    pub fn eval_f(&self, x: &Vec64, u: &Vec64, w: &Vec64) -> Result<Vec64> {
        let out = (self.f)(x, u, w);
        if out.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "f returned {} entries, expected {}",
                out.len(),
                self.n
            )));
        }
        Ok(out)
    }

    pub fn eval_h(&self, x: &Vec64, u: &Vec64, w: &Vec64) -> Result<Vec64> {
        let out = (self.h)(x, u, w);
        if out.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "h returned {} entries, expected {}",
                out.len(),
                self.p
            )));
        }
        Ok(out)
    }
}

impl From<StateSpace> for NonlinearPlant {
    fn from(ss: StateSpace) -> Self {
        let (n, m, n_w, p) = (ss.n(), ss.m(), ss.n_w(), ss.p());
        let ss = Arc::new(ss);
        let s1 = ss.clone();
        NonlinearPlant {
            n,
            m,
            n_w,
            p,
            f: Arc::new(move |x, u, w| &s1.a * x + &s1.b * u + &s1.bw * w),
            h: Arc::new(move |x, u, w| &ss.c * x + &ss.d * u + &ss.dw * w),
            state_bound: None,
        }
    }
}

/// Static feedback `u = k(eta)`.
#[derive(Clone)]
pub enum Gain {
    Linear(Mat),
    Nonlinear {
        m: usize,
        p: usize,
        k: Arc<dyn Fn(&Vec64) -> Vec64 + Send + Sync>,
    },
}

impl fmt::Debug for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gain::Linear(k) => f.debug_tuple("Linear").field(k).finish(),
            Gain::Nonlinear { m, p, .. } => write!(f, "Nonlinear({m}x{p})"),
        }
    }
}

impl Gain {
    pub fn apply(&self, eta: &Vec64) -> Vec64 {
        match self {
            Gain::Linear(k) => k * eta,
            Gain::Nonlinear { k, .. } => k(eta),
        }
    }
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Gain::Linear(k) => k.shape(),
            Gain::Nonlinear { m, p, .. } => (*m, *p),
        }
    }
}

/// Integral controller `eta' = -eps e`, `u = k(eta)`.
#[derive(Debug, Clone)]
pub struct IntegralController {
    pub gain: Gain,
    pub epsilon: f64,
}

impl IntegralController {
    pub fn new(gain: Gain, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "integrator speed must be positive, got {epsilon}"
            )));
        }
        Ok(Self { gain, epsilon })
    }

    pub fn linear(k: Mat, epsilon: f64) -> Result<Self> {
        Self::new(Gain::Linear(k), epsilon)
    }

    /// Controller with the integrator switched off (`eps = 0`); the input is
    /// held at `k(eta0)`.
    pub fn frozen(gain: Gain) -> Self {
        Self { gain, epsilon: 0.0 }
    }
}

/// True iff every eigenvalue of `a` has real part `< -margin`.
pub fn is_hurwitz(a: &Mat, margin: f64) -> Result<bool> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("is_hurwitz needs a square matrix".into()));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative margin {margin}")));
    }
    Ok(linalg::spectral_abscissa(a)? < -margin)
}

fn require_hurwitz(a: &Mat, margin: f64) -> Result<()> {
    let abscissa = linalg::spectral_abscissa(a)?;
    if abscissa < -margin {
        Ok(())
    } else {
        Err(Error::NotHurwitz { abscissa, margin })
    }
}

/// DC gains via LU solves of `A X = B` and `A X_w = Bw`.
pub fn dc_gains(ss: &StateSpace) -> Result<DcGains> {
    require_hurwitz(&ss.a, ss.hurwitz_margin())?;
    let lu = ss.a.clone().lu();
    let x = lu.solve(&ss.b).ok_or_else(|| Error::SingularSolve("A X = B".into()))?;
    let xw = lu
        .solve(&ss.bw)
        .ok_or_else(|| Error::SingularSolve("A X = Bw".into()))?;
    let scale = 1.0 + ss.b.norm().max(ss.bw.norm());
    let resid = (&ss.a * &x - &ss.b).norm() + (&ss.a * &xw - &ss.bw).norm();
    if !resid.is_finite() || resid > 1e-8 * scale * (1.0 + ss.a.norm()) {
        return Err(Error::SingularSolve(format!("residual {resid:e} too large")));
    }
    Ok(DcGains {
        g0: -&ss.c * x + &ss.d,
        gw0: -&ss.c * xw + &ss.dw,
    })
}

/// Slow dynamics of the integral loop with the plant replaced by its DC gain:
/// state `eta`, input `w`, output `e`. The returned system has no control
/// channels; `bw = -eps Gw0`, `c = G0 K`, `dw = Gw0`.
pub fn slow_dynamics_lti(dc: &DcGains, k: &Mat, epsilon: f64) -> Result<StateSpace> {
    check_gain(dc, k)?;
    let p = dc.p();
    let g0k = &dc.g0 * k;
    StateSpace::new(
        &g0k * (-epsilon),
        Mat::zeros(p, 0),
        &dc.gw0 * (-epsilon),
        g0k,
        Mat::zeros(p, 0),
        dc.gw0.clone(),
    )
}

fn check_gain(dc: &DcGains, k: &Mat) -> Result<()> {
    if k.shape() != (dc.m(), dc.p()) {
        return Err(Error::DimensionMismatch(format!(
            "K is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            dc.m(),
            dc.p()
        )));
    }
    Ok(())
}

/// `sigma_max` of the slow sensitivity over a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqResponse {
    pub omega: Vec<f64>,
    pub sigma_max: Vec<f64>,
}

impl FreqResponse {
    /// Grid supremum, used as an H-infinity norm estimate.
    pub fn peak(&self) -> (f64, f64) {
        self.omega.iter().zip(&self.sigma_max).fold(
            (f64::NAN, f64::NEG_INFINITY),
            |acc, (&w, &s)| {
                if s > acc.1 {
                    (w, s)
                } else {
                    acc
                }
            },
        )
    }
}

/// Default grid: 400 log-spaced points on `[1e-3 eps, 1e4 eps]`.
pub fn default_omega_grid(epsilon: f64) -> Vec<f64> {
    log_grid(1e-3 * epsilon, 1e4 * epsilon, 400)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// `sigma_max(S_slow(j w))` at a single frequency, where
/// `S_slow(s) = s (s I + eps G0 K)^{-1} Gw0`.
pub fn sensitivity_sigma(dc: &DcGains, k: &Mat, epsilon: f64, omega: f64) -> Result<f64> {
    let g0k = &dc.g0 * k * epsilon;
    sigma_at(&g0k, &dc.gw0, omega)
}

fn sigma_at(eps_g0k: &Mat, gw0: &Mat, omega: f64) -> Result<f64> {
    let p = eps_g0k.nrows();
    let lhs = DMatrix::<Complex<f64>>::from_fn(p, p, |i, j| {
        let diag = if i == j { omega } else { 0.0 };
        Complex::new(eps_g0k[(i, j)], diag)
    });
    let lu = lhs.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..p).map(|i| u[(i, i)].norm()).collect();
    let pmax = pivots.iter().copied().fold(0.0, f64::max);
    if pivots.iter().any(|&d| d <= 1e-13 * pmax.max(omega)) {
        return Err(Error::SingularAtFrequency(omega));
    }
    let rhs = gw0.map(|v| Complex::new(0.0, omega * v));
    let sol = lu.solve(&rhs).ok_or(Error::SingularAtFrequency(omega))?;
    if sol.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularAtFrequency(omega));
    }
    if sol.ncols() == 0 || p == 0 {
        return Ok(0.0);
    }
    Ok(SVD::new(sol, false, false).singular_values.max())
}

pub fn sensitivity_response(dc: &DcGains, k: &Mat, epsilon: f64, omega_grid: &[f64]) -> Result<FreqResponse> {
    check_gain(dc, k)?;
    let g0k = &dc.g0 * k * epsilon;
    let sigma_max = omega_grid
        .iter()
        .map(|&w| {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument(format!("non-positive frequency {w}")));
            }
            sigma_at(&g0k, &dc.gw0, w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FreqResponse {
        omega: omega_grid.to_vec(),
        sigma_max,
    })
}

/// Seeded random stable plant. `A` is a scaled Gaussian matrix shifted so its
/// spectral abscissa lies in `[-0.5, -0.1]`; `B`, `C` and `Bw` are Gaussian,
/// `D = 0` and `Dw = -I` (reference-tracking error). Draws are repeated until
/// `G0` has full row rank.
pub fn random_stable_system(seed: u64, n: usize, m: usize, p: usize, n_w: usize) -> Result<StateSpace> {
    if n == 0 || m == 0 || p == 0 || n_w == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    const MAX_RESAMPLES: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RESAMPLES {
        let scale = 1.0 / (n as f64).sqrt();
        let raw = gaussian(&mut rng, n, n) * scale;
        let abscissa = linalg::spectral_abscissa(&raw)?;
        let target = 0.1 + 0.4 * rng.random::<f64>();
        let a = raw - Mat::identity(n, n) * (abscissa + target);
        let b = gaussian(&mut rng, n, m);
        let c = gaussian(&mut rng, p, n);
        let bw = gaussian(&mut rng, n, n_w) * 0.5;
        let mut dw = Mat::zeros(p, n_w);
        for i in 0..p.min(n_w) {
            dw[(i, i)] = -1.0;
        }
        let ss = StateSpace::new(a, b, bw, c, Mat::zeros(p, m), dw)?;
        if !is_hurwitz(&ss.a, 0.1 - 1e-9)? {
            continue;
        }
        let dc = match dc_gains(&ss) {
            Ok(dc) => dc,
            Err(_) => continue,
        };
        let sv = linalg::singular_values(&dc.g0);
        if sv.len() >= p && sv[p - 1] > 1e-8 * sv[0].max(1.0) {
            return Ok(ss);
        }
    }
    Err(Error::RankDeficiencyAfterRetries(MAX_RESAMPLES))
}

pub(crate) fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}
