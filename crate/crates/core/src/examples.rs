//! Built-in instances: pendulum, power-system frequency regulation and the
//! saturated/uncertain LTI plant.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lfr::{
    daug_cone, daug_pair, make_lfr, parametric_cone, saturation, sector_cone, sector_primal, ConePair, ConeSpec,
    DeltaFamily, DeltaMap, Lfr,
};
use crate::linalg;
use crate::model::{self, DcGains, NonlinearPlant, StateSpace};
use crate::sdp::{LmiBlock, LmiProblem};
use crate::{Error, Mat, Result, Vec64};

/// Largest admissible pendulum angle (strictly below `pi/2`).
pub const PENDULUM_DOMAIN: f64 = 1.4;

/// `x' = -beta sin x + u - w`, `e = x`.
pub fn pendulum_plant(beta: f64) -> Result<NonlinearPlant> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    Ok(NonlinearPlant {
        n: 1,
        m: 1,
        n_w: 1,
        p: 1,
        f: Arc::new(move |x, u, w| Vec64::from_element(1, -beta * x[0].sin() + u[0] - w[0])),
        h: Arc::new(|x, _, _| Vec64::from_element(1, x[0])),
        state_bound: Some(PENDULUM_DOMAIN),
    })
}

/// Equilibrium state `arcsin((u - w) / beta)` inside the declared domain.
pub fn pendulum_equilibrium(beta: f64, u: f64, w: f64) -> Result<f64> {
    let s = (u - w) / beta;
    if s.abs() > PENDULUM_DOMAIN.sin() {
        return Err(Error::InvalidArgument(format!(
            "|u - w| = {} exceeds beta sin({PENDULUM_DOMAIN})",
            (u - w).abs()
        )));
    }
    Ok(s.asin())
}

/// `(1/beta) sqrt((kappa+1)^2 / (4 kappa))` with `kappa = L / mu`.
pub fn power_system_gamma_star(beta: f64, mu: f64, l: f64) -> Result<f64> {
    if !(beta > 0.0 && mu > 0.0 && l >= mu) {
        return Err(Error::InvalidArgument(format!(
            "need beta > 0 and 0 < mu <= L, got beta={beta}, mu={mu}, L={l}"
        )));
    }
    let kappa = l / mu;
    Ok(((kappa + 1.0).powi(2) / (4.0 * kappa)).sqrt() / beta)
}

/// The 3x3 LMI in `(P, theta)`: variables `x = [P, theta]`, both strictly
/// positive.
pub fn power_system_lmi(beta: f64, mu: f64, l: f64, gamma: f64) -> Result<LmiProblem> {
    if !(beta > 0.0 && mu > 0.0 && l >= mu && gamma >= 0.0) {
        return Err(Error::InvalidArgument(
            "power-system LMI parameters must be positive".into(),
        ));
    }
    let bi = 1.0 / beta;
    let b2 = bi * bi;
    let a0 = Mat::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, -b2, b2, 0.0, b2, gamma * gamma - b2]);
    let cp = Mat::from_row_slice(3, 3, &[0.0, bi, -bi, bi, 0.0, 0.0, -bi, 0.0, 0.0]);
    let ct = Mat::from_row_slice(
        3,
        3,
        &[2.0 * mu * l, -(mu + l), 0.0, -(mu + l), 2.0, 0.0, 0.0, 0.0, 0.0],
    );
    let one = Mat::from_element(1, 1, 1.0);
    let mut prob = LmiProblem::new(2);
    prob.add_block(LmiBlock::strict(a0, vec![(0, cp), (1, ct)]));
    prob.add_block(LmiBlock::strict(Mat::zeros(1, 1), vec![(0, one.clone())]));
    prob.add_block(LmiBlock::strict(Mat::zeros(1, 1), vec![(1, one)]));
    Ok(prob)
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Slope-restricted scalar map with its derivative.
#[derive(Clone)]
pub struct SectorMap {
    pub mu: f64,
    pub l: f64,
    pub f: ScalarFn,
    pub df: ScalarFn,
}

impl fmt::Debug for SectorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SectorMap[{}, {}]", self.mu, self.l)
    }
}

impl SectorMap {
    /// Linear map with the mid-sector slope.
    pub fn linear(mu: f64, l: f64) -> Self {
        let c = 0.5 * (mu + l);
        SectorMap {
            mu,
            l,
            f: Arc::new(move |q| c * q),
            df: Arc::new(move |_| c),
        }
    }

    /// `(mu+L)/2 q + (L-mu)/2 sin q`: slopes sweep the whole sector.
    pub fn smooth(mu: f64, l: f64) -> Self {
        let a = 0.5 * (mu + l);
        let b = 0.5 * (l - mu);
        SectorMap {
            mu,
            l,
            f: Arc::new(move |q| a * q + b * q.sin()),
            df: Arc::new(move |q| a + b * q.cos()),
        }
    }

    /// Sampled slope check on random pairs in `[-10, 10]`.
    pub fn check(&self, n: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n {
            let a: f64 = rng.random_range(-10.0..10.0);
            let b: f64 = rng.random_range(-10.0..10.0);
            if (a - b).abs() < 1e-6 {
                continue;
            }
            let slope = ((self.f)(a) - (self.f)(b)) / (a - b);
            let tol = 1e-9 * (1.0 + self.l.abs());
            if slope < self.mu - tol || slope > self.l + tol {
                return Err(Error::SectorViolation(format!(
                    "slope {slope} between {b} and {a} is outside [{}, {}]",
                    self.mu, self.l
                )));
            }
        }
        Ok(())
    }
}

/// Generators with frequency stiffness `beta` and slope-restricted
/// primary responses `phi_i`.
#[derive(Debug, Clone)]
pub struct PowerSystemSpec {
    pub beta: f64,
    pub phis: Vec<SectorMap>,
}

impl PowerSystemSpec {
    /// Linear mid-sector responses for the given sectors.
    pub fn new(beta: f64, mus: &[f64], ls: &[f64]) -> Result<Self> {
        if mus.len() != ls.len() || mus.is_empty() {
            return Err(Error::InvalidArgument("need matching, nonempty mu and L lists".into()));
        }
        let phis = mus.iter().zip(ls).map(|(&m, &l)| SectorMap::linear(m, l)).collect();
        Self::with_phis(beta, phis)
    }

    pub fn with_phis(beta: f64, phis: Vec<SectorMap>) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        if phis.is_empty() {
            return Err(Error::InvalidArgument("at least one generator is required".into()));
        }
        for (i, phi) in phis.iter().enumerate() {
            if !(phi.mu > 0.0 && phi.l >= phi.mu) {
                return Err(Error::InvalidArgument(format!(
                    "generator {i}: need 0 < mu <= L, got [{}, {}]",
                    phi.mu, phi.l
                )));
            }
            phi.check(1000, i as u64)?;
        }
        Ok(PowerSystemSpec { beta, phis })
    }

    pub fn mu_total(&self) -> f64 {
        self.phis.iter().map(|p| p.mu).sum()
    }

    pub fn l_total(&self) -> f64 {
        self.phis.iter().map(|p| p.l).sum()
    }

    pub fn gamma_star(&self) -> f64 {
        power_system_gamma_star(self.beta, self.mu_total(), self.l_total()).expect("validated spec")
    }

    fn sum_phi(&self, q: f64) -> f64 {
        self.phis.iter().map(|p| (p.f)(q)).sum()
    }

    fn sum_dphi(&self, q: f64) -> f64 {
        self.phis.iter().map(|p| (p.df)(q)).sum()
    }
}

/// Power-system LFR, its aggregate nonlinearity and multiplier cones.
#[derive(Debug, Clone)]
pub struct PowerSystemModel {
    pub lfr: Lfr,
    pub delta: DeltaMap,
    pub cones: ConePair,
}

/// `F = 0, G = 1/beta, E1 = -1/beta, H = 1, J = 0, E2 = 0` with
/// `Delta = sum_i phi_i` in the sector `[sum mu_i, sum L_i]`.
pub fn power_system_lfr(spec: &PowerSystemSpec) -> Result<PowerSystemModel> {
    let b = spec.beta;
    let s = |v: f64| Mat::from_element(1, 1, v);
    let lfr = make_lfr(s(0.0), s(1.0 / b), s(1.0), s(0.0), s(-1.0 / b), s(0.0))?;
    let spec2 = spec.clone();
    let (mu, l) = (spec.mu_total(), spec.l_total());
    let delta = DeltaMap::new(
        1,
        1,
        Arc::new(move |q: &Vec64| Vec64::from_element(1, spec2.sum_phi(q[0]))),
    )
    .declare(format!("sector({mu}, {l})"));
    let cones = if l > mu {
        sector_cone(mu, l)?
    } else {
        ConePair::primal_only(sector_primal(mu, l)?, "mu = L: sector basis is singular, no dual")
    };
    Ok(PowerSystemModel { lfr, delta, cones })
}

/// Reduced AGC dynamics `eta' = -(1/beta) sum phi_i(eta) + w / beta`.
#[derive(Clone)]
pub struct AgcReduced {
    pub spec: PowerSystemSpec,
    /// Contraction rate `sum mu_i / beta` in the absolute value norm.
    pub rho_s: f64,
}

impl fmt::Debug for AgcReduced {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgcReduced(beta={}, rho_s={})", self.spec.beta, self.rho_s)
    }
}

impl AgcReduced {
    pub fn field(&self, eta: &Vec64, w: &Vec64) -> Vec64 {
        Vec64::from_element(1, (-self.spec.sum_phi(eta[0]) + w[0]) / self.spec.beta)
    }

    pub fn jacobian(&self, eta: &Vec64, _w: &Vec64) -> Mat {
        Mat::from_element(1, 1, -self.spec.sum_dphi(eta[0]) / self.spec.beta)
    }

    /// Equilibrium input-to-error map `pi(u, w) = (sum phi_i(u) - w) / beta`.
    pub fn pi(&self, u: &Vec64, w: &Vec64) -> Vec64 {
        Vec64::from_element(1, (self.spec.sum_phi(u[0]) - w[0]) / self.spec.beta)
    }
}

pub fn agc_reduced(spec: &PowerSystemSpec) -> AgcReduced {
    AgcReduced {
        spec: spec.clone(),
        rho_s: spec.mu_total() / spec.beta,
    }
}

/// Plant used by the saturated example.
pub const SATURATED_DIMS: (usize, usize, usize, usize) = (30, 7, 5, 5);
const EXTRA_RANGE: f64 = 0.3;
const J_NORM_CAP: f64 = 0.45;

/// Saturated/uncertain instance: LTI plant data, three extra channels
/// `p = (sat q1, delta q2, delta q3)`, and its multiplier cones.
#[derive(Debug, Clone)]
pub struct SaturatedExample {
    pub seed: u64,
    pub delta_value: f64,
    pub plant: StateSpace,
    pub dc: DcGains,
    pub lfr: Lfr,
    pub delta: DeltaMap,
    /// Sector x parametric (no skew) pair used for synthesis.
    pub pair: ConePair,
    /// Primal cone with the skew parameter, for analysis.
    pub analysis_cone: ConeSpec,
}

fn uniform<R: Rng>(rng: &mut R, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-EXTRA_RANGE..EXTRA_RANGE))
}

/// Build the saturated example for a seed and uncertainty value `delta`.
pub fn saturated_uncertain_example(seed: u64, delta: f64) -> Result<SaturatedExample> {
    saturated_uncertain_example_dims(seed, delta, SATURATED_DIMS)
}

/// Same construction with custom plant dimensions `(n, m, p, n_w)`.
pub fn saturated_uncertain_example_dims(
    seed: u64,
    delta: f64,
    dims: (usize, usize, usize, usize),
) -> Result<SaturatedExample> {
    if !(delta.abs() <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in [-1, 1], got {delta}"
        )));
    }
    let (n, m, p, nw) = dims;
    let plant = model::random_stable_system(seed, n, m, p, nw)?;
    let dc = model::dc_gains(&plant)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5A7);
    let g = uniform(&mut rng, p, 3);
    let h = uniform(&mut rng, 3, m);
    let mut j = uniform(&mut rng, 3, 3);
    let e2 = uniform(&mut rng, 3, nw);
    let jn = linalg::norm2(&j);
    if jn > J_NORM_CAP {
        j *= J_NORM_CAP / jn;
    }
    let lfr = make_lfr(dc.g0.clone(), g, h, j, dc.gw0.clone(), e2)?.with_well_posedness(&DeltaFamily::Lipschitz(1.0));
    let delta_map = DeltaMap::new(
        3,
        3,
        Arc::new(move |q: &Vec64| Vec64::from_vec(vec![saturation(q[0]), delta * q[1], delta * q[2]])),
    )
    .declare("daug(sector(0,1), parametric(2))");
    let sector = sector_cone(0.0, 1.0)?;
    let pair = daug_pair(&sector, &parametric_cone(2, false)?);
    let analysis_cone = daug_cone(&sector.primal, &parametric_cone(2, true)?.primal);
    Ok(SaturatedExample {
        seed,
        delta_value: delta,
        plant,
        dc,
        lfr,
        delta: delta_map,
        pair,
        analysis_cone,
    })
}

impl SaturatedExample {
    /// Full-order plant whose equilibrium input-to-error map is the LFR:
    /// `x' = A x + B u + Bw w`, `e = C x + D u + Dw w + G p`,
    /// `p = Delta(H u + J p + E2 w)`.
    pub fn full_plant(&self) -> NonlinearPlant {
        let ss = Arc::new(self.plant.clone());
        let lfr = Arc::new(self.lfr.clone());
        let delta = self.delta.clone();
        let s1 = ss.clone();
        NonlinearPlant {
            n: ss.n(),
            m: ss.m(),
            n_w: ss.n_w(),
            p: ss.p(),
            f: Arc::new(move |x, u, w| &s1.a * x + &s1.b * u + &s1.bw * w),
            h: Arc::new(move |x, u, w| {
                let base = &ss.c * x + &ss.d * u + &ss.dw * w;
                match crate::lfr::solve_loop(&lfr, &delta, u, w) {
                    Ok((_, p)) => base + &lfr.g * p,
                    Err(_) => Vec64::from_element(ss.p(), f64::NAN),
                }
            }),
            state_bound: None,
        }
    }
}
