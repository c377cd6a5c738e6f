//! Closed-loop and reduced-model simulation.

use std::fmt;
use std::sync::Arc;

use crate::lfr::{eval_pi_delta, DeltaMap, Lfr};
use crate::model::{self, DcGains, IntegralController, NonlinearPlant};
use crate::{Error, Mat, Result, Vec64};

/// Exogenous signal `w(t)`.
#[derive(Clone)]
pub enum SignalSpec {
    Constant(Vec64),
    /// Piecewise-constant values held from each knot time.
    Steps(Vec<(f64, Vec64)>),
    Callable {
        dim: usize,
        f: Arc<dyn Fn(f64) -> Vec64 + Send + Sync>,
    },
}

impl fmt::Debug for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalSpec::Constant(v) => f.debug_tuple("Constant").field(&v.as_slice()).finish(),
            SignalSpec::Steps(k) => write!(f, "Steps({} knots)", k.len()),
            SignalSpec::Callable { dim, .. } => write!(f, "Callable(dim={dim})"),
        }
    }
}

impl SignalSpec {
    pub fn constant(v: Vec<f64>) -> Self {
        SignalSpec::Constant(Vec64::from_vec(v))
    }

    /// Step sequence; the first knot must be at `t = 0` and knot times must
    /// increase strictly.
    pub fn steps(knots: Vec<(f64, Vec64)>) -> Result<Self> {
        if knots.is_empty() || knots[0].0 != 0.0 {
            return Err(Error::InvalidArgument("step sequence must start at t = 0".into()));
        }
        let dim = knots[0].1.len();
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidArgument("knot times must increase strictly".into()));
            }
        }
        if knots.iter().any(|(t, v)| v.len() != dim || !t.is_finite()) {
            return Err(Error::DimensionMismatch("step values differ in length".into()));
        }
        Ok(SignalSpec::Steps(knots))
    }

    /// Unit steps applied to each channel in turn, `period` apart, starting
    /// with all channels at zero.
    pub fn sequential_unit_steps(dim: usize, period: f64) -> Result<Self> {
        let mut knots = vec![(0.0, Vec64::zeros(dim))];
        let mut v = Vec64::zeros(dim);
        for i in 0..dim {
            v[i] = 1.0;
            knots.push(((i + 1) as f64 * period, v.clone()));
        }
        Self::steps(knots)
    }

    pub fn dim(&self) -> usize {
        match self {
            SignalSpec::Constant(v) => v.len(),
            SignalSpec::Steps(k) => k[0].1.len(),
            SignalSpec::Callable { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, t: f64) -> Vec64 {
        match self {
            SignalSpec::Constant(v) => v.clone(),
            SignalSpec::Steps(k) => {
                let idx = k.partition_point(|(tk, _)| *tk <= t).max(1) - 1;
                k[idx].1.clone()
            }
            SignalSpec::Callable { f, .. } => f(t),
        }
    }

    /// Knot times strictly inside `(0, t_final)`.
    pub fn knots(&self, t_final: f64) -> Vec<f64> {
        match self {
            SignalSpec::Steps(k) => k.iter().map(|(t, _)| *t).filter(|t| *t > 0.0 && *t < t_final).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOpts {
    pub rtol: f64,
    pub atol: f64,
    /// Classical RK4 with this step instead of the adaptive pair.
    pub fixed_step: Option<f64>,
    /// Output samples per knot interval (inclusive of the left endpoint).
    pub samples_per_segment: usize,
    pub max_steps: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            rtol: 1e-8,
            atol: 1e-10,
            fixed_step: None,
            samples_per_segment: 512,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub x: Mat,
    pub eta: Mat,
    pub e: Mat,
    pub u: Mat,
    pub w: Mat,
    pub stats: SolverStats,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Largest `|e_i|` at the last sample before each knot and at the end.
    pub fn segment_end_errors(&self, knots: &[f64]) -> Vec<f64> {
        let mut ends: Vec<usize> = knots
            .iter()
            .filter_map(|k| {
                let idx = self.t.partition_point(|t| *t < *k);
                (idx > 0).then(|| idx - 1)
            })
            .collect();
        ends.push(self.t.len() - 1);
        ends.into_iter().map(|i| self.e.column(i).amax()).collect()
    }
}

type Rhs<'a> = dyn FnMut(f64, &Vec64) -> Result<Vec64> + 'a;

/// Output grid: each knot interval gets `samples_per_segment` equally spaced
/// samples (left endpoint included), plus the final time.
fn output_grid(t_final: f64, knots: &[f64], per_segment: usize) -> Vec<Vec<f64>> {
    let mut bounds = vec![0.0];
    bounds.extend(knots.iter().copied());
    bounds.push(t_final);
    bounds.dedup();
    let n = per_segment.max(2);
    let segs = bounds.len() - 1;
    (0..segs)
        .map(|s| {
            let (a, b) = (bounds[s], bounds[s + 1]);
            let mut pts: Vec<f64> = (0..n - 1).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
            if s == segs - 1 {
                pts.push(b);
            }
            pts
        })
        .collect()
}

fn check_finite(t: f64, y: &Vec64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState(t))
    }
}

const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince step from `t` to exactly `t_end`.
fn dp45_advance(
    f: &mut Rhs<'_>,
    t: f64,
    t_end: f64,
    y: &mut Vec64,
    h: &mut f64,
    opts: &SolverOpts,
    stats: &mut SolverStats,
) -> Result<()> {
    let mut t = t;
    while t < t_end {
        if stats.accepted + stats.rejected > opts.max_steps {
            return Err(Error::StepSizeUnderflow(t));
        }
        let last = t + *h >= t_end;
        let step = if last { t_end - t } else { *h };
        if step < 1e-14 * t.abs().max(1.0) && !last {
            return Err(Error::StepSizeUnderflow(t));
        }
        let mut k: Vec<Vec64> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = DP_A[s][j];
                if a != 0.0 {
                    ys.axpy(step * a, kj, 1.0);
                }
            }
            stats.evaluations += 1;
            let ks = f(t + DP_C[s] * step, &ys)?;
            check_finite(t, &ks)?;
            k.push(ks);
        }
        let mut y5 = y.clone();
        let mut err = 0.0;
        for i in 0..y.len() {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += DP_B5[s] * k[s][i];
                d4 += DP_B4[s] * k[s][i];
            }
            y5[i] += step * d5;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let r = step * (d5 - d4) / sc;
            err += r * r;
        }
        let err = if y.is_empty() {
            0.0
        } else {
            (err / y.len() as f64).sqrt()
        };
        if !err.is_finite() {
            return Err(Error::NonFiniteState(t));
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if err <= 1.0 {
            stats.accepted += 1;
            t = if last { t_end } else { t + step };
            *y = y5;
            check_finite(t, y)?;
            if !last || factor < 1.0 {
                *h = step * factor;
            }
        } else {
            stats.rejected += 1;
            *h = step * factor.min(1.0);
            if *h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow(t));
            }
        }
    }
    Ok(())
}

/// Classical RK4 with equal substeps no longer than `h` from `t` to `t_end`.
fn rk4_advance(f: &mut Rhs<'_>, t: f64, t_end: f64, y: &mut Vec64, h: f64, stats: &mut SolverStats) -> Result<()> {
    let n = ((t_end - t) / h).ceil().max(1.0) as usize;
    let dt = (t_end - t) / n as f64;
    for i in 0..n {
        let ti = t + i as f64 * dt;
        let k1 = f(ti, y)?;
        let k2 = f(ti + 0.5 * dt, &(&*y + &k1 * (0.5 * dt)))?;
        let k3 = f(ti + 0.5 * dt, &(&*y + &k2 * (0.5 * dt)))?;
        let k4 = f(ti + dt, &(&*y + &k3 * dt))?;
        *y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        stats.evaluations += 4;
        stats.accepted += 1;
        check_finite(ti + dt, y)?;
    }
    Ok(())
}

/// Integrate `y' = f(t, y)` and return the state at every output time.
/// Integration restarts at each knot.
fn integrate(
    f: &mut Rhs<'_>,
    y0: &Vec64,
    t_final: f64,
    knots: &[f64],
    opts: &SolverOpts,
) -> Result<(Vec<f64>, Vec<Vec64>, SolverStats)> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_final must be positive, got {t_final}"
        )));
    }
    if let Some(h) = opts.fixed_step {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("fixed step must be positive".into()));
        }
    }
    check_finite(0.0, y0)?;
    let grid = output_grid(t_final, knots, opts.samples_per_segment);
    let mut stats = SolverStats::default();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut y = y0.clone();
    for seg in &grid {
        // Fresh step-size guess after every discontinuity.
        let span = seg.last().copied().unwrap_or(t_final) - seg[0];
        let mut h = (span.max(1e-6) * 1e-3).min(1e-2);
        for (idx, &tp) in seg.iter().enumerate() {
            if idx > 0 || !times.is_empty() {
                let t_prev = *times.last().unwrap();
                match opts.fixed_step {
                    Some(fh) => rk4_advance(f, t_prev, tp, &mut y, fh, &mut stats)?,
                    None => dp45_advance(f, t_prev, tp, &mut y, &mut h, opts, &mut stats)?,
                }
            }
            times.push(tp);
            states.push(y.clone());
        }
    }
    // Close the last knot interval.
    if *times.last().unwrap() < t_final {
        let t_prev = *times.last().unwrap();
        let mut h = (t_final - t_prev) * 1e-2;
        match opts.fixed_step {
            Some(fh) => rk4_advance(f, t_prev, t_final, &mut y, fh, &mut stats)?,
            None => dp45_advance(f, t_prev, t_final, &mut y, &mut h, opts, &mut stats)?,
        }
        times.push(t_final);
        states.push(y.clone());
    }
    Ok((times, states, stats))
}

fn columns(rows: usize, cols: &[Vec64]) -> Mat {
    let mut m = Mat::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// Full closed loop `x' = f(x, k(eta), w)`, `eta' = -eps h(x, k(eta), w)`.
pub fn simulate_closed_loop(
    plant: &NonlinearPlant,
    ctrl: &IntegralController,
    w: &SignalSpec,
    t_final: f64,
    x0: &Vec64,
    eta0: &Vec64,
    opts: &SolverOpts,
) -> Result<SimResult> {
    let (m, p) = ctrl.gain.shape();
    if m != plant.m || p != plant.p || x0.len() != plant.n || eta0.len() != plant.p || w.dim() != plant.n_w {
        return Err(Error::DimensionMismatch(format!(
            "plant (n={}, m={}, p={}, n_w={}), gain {m}x{p}, x0 {}, eta0 {}, w {}",
            plant.n,
            plant.m,
            plant.p,
            plant.n_w,
            x0.len(),
            eta0.len(),
            w.dim()
        )));
    }
    let n = plant.n;
    let eps = ctrl.epsilon;
    let mut y0 = Vec64::zeros(n + p);
    y0.rows_mut(0, n).copy_from(x0);
    y0.rows_mut(n, p).copy_from(eta0);
    let mut rhs = |t: f64, y: &Vec64| -> Result<Vec64> {
        let x = y.rows(0, n).into_owned();
        let eta = y.rows(n, p).into_owned();
        let u = ctrl.gain.apply(&eta);
        let wt = w.eval(t);
        let dx = plant.eval_f(&x, &u, &wt)?;
        let e = plant.eval_h(&x, &u, &wt)?;
        let mut dy = Vec64::zeros(n + p);
        dy.rows_mut(0, n).copy_from(&dx);
        dy.rows_mut(n, p).copy_from(&(e * -eps));
        Ok(dy)
    };
    let knots = w.knots(t_final);
    let (times, states, stats) = integrate(&mut rhs, &y0, t_final, &knots, opts)?;
    let mut xs = Vec::with_capacity(times.len());
    let mut etas = Vec::with_capacity(times.len());
    let mut es = Vec::with_capacity(times.len());
    let mut us = Vec::with_capacity(times.len());
    let mut ws = Vec::with_capacity(times.len());
    for (t, y) in times.iter().zip(&states) {
        let x = y.rows(0, n).into_owned();
        let eta = y.rows(n, p).into_owned();
        let u = ctrl.gain.apply(&eta);
        let wt = w.eval(*t);
        let e = plant.eval_h(&x, &u, &wt)?;
        check_finite(*t, &e)?;
        xs.push(x);
        etas.push(eta);
        es.push(e);
        us.push(u);
        ws.push(wt);
    }
    Ok(SimResult {
        x: columns(n, &xs),
        eta: columns(p, &etas),
        e: columns(p, &es),
        u: columns(m, &us),
        w: columns(w.dim(), &ws),
        t: times,
        stats,
    })
}

/// Equilibrium input-to-error map `pi(u, w)`.
pub type PiFn<'a> = &'a (dyn Fn(&Vec64, &Vec64) -> Result<Vec64> + Sync);

/// `pi` of an LFR closed with `delta`.
pub fn lfr_pi<'a>(lfr: &'a Lfr, delta: &'a DeltaMap) -> impl Fn(&Vec64, &Vec64) -> Result<Vec64> + Sync + 'a {
    move |u, w| eval_pi_delta(lfr, delta, u, w)
}

fn simulate_reduced_knots(
    pi: PiFn<'_>,
    k: &Mat,
    w: &SignalSpec,
    eta0: &Vec64,
    t_final: f64,
    knots: &[f64],
    opts: &SolverOpts,
) -> Result<SimResult> {
    let (m, p) = k.shape();
    if eta0.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "eta0 has {} entries, K has {p} columns",
            eta0.len()
        )));
    }
    let mut rhs = |t: f64, eta: &Vec64| -> Result<Vec64> {
        let e = pi(&(k * eta), &w.eval(t))?;
        if e.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "pi returned {} entries, expected {p}",
                e.len()
            )));
        }
        Ok(-e)
    };
    let (times, states, stats) = integrate(&mut rhs, eta0, t_final, knots, opts)?;
    let mut es = Vec::with_capacity(times.len());
    let mut us = Vec::with_capacity(times.len());
    let mut ws = Vec::with_capacity(times.len());
    for (t, eta) in times.iter().zip(&states) {
        let u = k * eta;
        let wt = w.eval(*t);
        let e = pi(&u, &wt)?;
        check_finite(*t, &e)?;
        es.push(e);
        us.push(u);
        ws.push(wt);
    }
    Ok(SimResult {
        x: Mat::zeros(0, times.len()),
        eta: columns(p, &states),
        e: columns(p, &es),
        u: columns(m, &us),
        w: columns(w.dim(), &ws),
        t: times,
        stats,
    })
}

/// Reduced dynamics `eta' = -pi(K eta, w)`, `e = pi(K eta, w)`.
pub fn simulate_reduced(
    pi: PiFn<'_>,
    k: &Mat,
    w: &SignalSpec,
    eta0: &Vec64,
    t_final: f64,
    opts: &SolverOpts,
) -> Result<SimResult> {
    simulate_reduced_knots(pi, k, w, eta0, t_final, &w.knots(t_final), opts)
}

fn trapezoid(t: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..t.len()).map(|i| 0.5 * (t[i] - t[i - 1]) * (f(i) + f(i - 1))).sum()
}

/// `(int ||e_a - e_b||^2, int ||w_a - w_b||^2)` over `[0, t_final]`.
#[allow(clippy::too_many_arguments)]
pub fn incremental_energies(
    pi: PiFn<'_>,
    k: &Mat,
    w_a: &SignalSpec,
    w_b: &SignalSpec,
    eta0_a: &Vec64,
    eta0_b: &Vec64,
    t_final: f64,
    opts: &SolverOpts,
) -> Result<(f64, f64)> {
    let mut knots = w_a.knots(t_final);
    knots.extend(w_b.knots(t_final));
    knots.sort_by(|a, b| a.total_cmp(b));
    knots.dedup();
    let ra = simulate_reduced_knots(pi, k, w_a, eta0_a, t_final, &knots, opts)?;
    let rb = simulate_reduced_knots(pi, k, w_b, eta0_b, t_final, &knots, opts)?;
    let num = trapezoid(&ra.t, |i| (ra.e.column(i) - rb.e.column(i)).norm_squared());
    let den = trapezoid(&ra.t, |i| (ra.w.column(i) - rb.w.column(i)).norm_squared());
    Ok((num, den))
}

/// Empirical incremental L2 gain with equal initial conditions.
pub fn incremental_gain_estimate(
    pi: PiFn<'_>,
    k: &Mat,
    w_a: &SignalSpec,
    w_b: &SignalSpec,
    eta0: &Vec64,
    t_final: f64,
    opts: &SolverOpts,
) -> Result<f64> {
    let (num, den) = incremental_energies(pi, k, w_a, w_b, eta0, eta0, t_final, opts)?;
    if den <= 1e-300 {
        return Err(Error::ZeroDenominator);
    }
    Ok((num / den).sqrt())
}

/// First frequency at which `sigma_max(S_slow)` reaches `1/sqrt 2` of its
/// high-frequency value `||Gw0||_2`.
pub fn sensitivity_crossover(dc: &DcGains, k: &Mat, epsilon: f64) -> Result<f64> {
    let target = crate::linalg::norm2(&dc.gw0) / 2f64.sqrt();
    if target == 0.0 {
        return Err(Error::NoCrossover("G_w(0) is zero".into()));
    }
    let grid = model::log_grid(1e-6 * epsilon, 1e6 * epsilon, 1201);
    let mut prev = grid[0];
    if model::sensitivity_sigma(dc, k, epsilon, prev)? >= target {
        return Err(Error::NoCrossover(
            "gain already above the threshold at the lowest frequency".into(),
        ));
    }
    for &om in &grid[1..] {
        if model::sensitivity_sigma(dc, k, epsilon, om)? >= target {
            let (mut lo, mut hi) = (prev, om);
            for _ in 0..60 {
                let mid = (lo * hi).sqrt();
                if model::sensitivity_sigma(dc, k, epsilon, mid)? >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        prev = om;
    }
    Err(Error::NoCrossover("threshold not reached on the frequency grid".into()))
}

/// Integrator speed for `k_new` whose sensitivity crossover matches that of
/// `(k_ref, eps_ref)`, by bisection on `eps` (relative tolerance 1e-3).
pub fn match_bandwidth_epsilon(dc: &DcGains, k_ref: &Mat, eps_ref: f64, k_new: &Mat) -> Result<f64> {
    for k in [k_ref, k_new] {
        let a = -(&dc.g0 * k);
        if !model::is_hurwitz(&a, 0.0)? {
            return Err(Error::NotHurwitz {
                abscissa: crate::linalg::spectral_abscissa(&a)?,
                margin: 0.0,
            });
        }
    }
    let target = sensitivity_crossover(dc, k_ref, eps_ref)?;
    let cross = |e: f64| sensitivity_crossover(dc, k_new, e);
    let (mut lo, mut hi) = (eps_ref, eps_ref);
    while cross(lo)? > target {
        lo /= 2.0;
        if lo < eps_ref * 1e-12 {
            return Err(Error::NoCrossover("could not bracket epsilon".into()));
        }
    }
    while cross(hi)? < target {
        hi *= 2.0;
        if hi > eps_ref * 1e12 {
            return Err(Error::NoCrossover("could not bracket epsilon".into()));
        }
    }
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if cross(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{pendulum_equilibrium, pendulum_plant};

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn signals() {
        let st = SignalSpec::steps(vec![
            (0.0, Vec64::from_element(1, 0.0)),
            (2.0, Vec64::from_element(1, 1.0)),
        ])
        .unwrap();
        assert_eq!(st.eval(1.999)[0], 0.0);
        assert_eq!(st.eval(2.0)[0], 1.0);
        assert_eq!(st.knots(10.0), vec![2.0]);
        assert!(SignalSpec::steps(vec![(1.0, Vec64::zeros(1))]).is_err());
        assert!(SignalSpec::steps(vec![(0.0, Vec64::zeros(1)), (0.0, Vec64::zeros(1))]).is_err());
        let seq = SignalSpec::sequential_unit_steps(3, 5.0).unwrap();
        assert_eq!(seq.eval(11.0).as_slice(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn scalar_reduced_closed_form() {
        let pi = |u: &Vec64, w: &Vec64| Ok(u + w);
        let w = SignalSpec::constant(vec![1.0]);
        let eta0 = Vec64::from_element(1, 0.5);
        let r = simulate_reduced(&pi, &s(1.0), &w, &eta0, 5.0, &SolverOpts::default()).unwrap();
        for (i, t) in r.t.iter().enumerate() {
            let exact = -1.0 + 1.5 * (-t).exp();
            assert!((r.eta[(0, i)] - exact).abs() < 1e-8);
            assert!((r.e[(0, i)] - (r.eta[(0, i)] + 1.0)).abs() < 1e-15);
        }
        assert!(r.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn pendulum_regulates() {
        let plant = pendulum_plant(2.0).unwrap();
        let ctrl = IntegralController::linear(s(1.0), 0.05).unwrap();
        let w = SignalSpec::constant(vec![1.0]);
        let r = simulate_closed_loop(
            &plant,
            &ctrl,
            &w,
            1000.0,
            &Vec64::zeros(1),
            &Vec64::zeros(1),
            &SolverOpts::default(),
        )
        .unwrap();
        let last = r.len() - 1;
        assert!(r.e[(0, last)].abs() < 1e-6);
        assert_eq!(r.e[(0, last)], r.x[(0, last)]);
        assert!((r.u[(0, last)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn frozen_integrator() {
        let plant = pendulum_plant(2.0).unwrap();
        let ctrl = IntegralController::frozen(crate::model::Gain::Linear(s(1.0)));
        let w = SignalSpec::constant(vec![0.2]);
        let eta0 = Vec64::from_element(1, 1.0);
        let r = simulate_closed_loop(&plant, &ctrl, &w, 30.0, &Vec64::zeros(1), &eta0, &SolverOpts::default()).unwrap();
        let last = r.len() - 1;
        assert!(r.eta.row(0).iter().all(|v| *v == 1.0));
        let xbar = pendulum_equilibrium(2.0, 1.0, 0.2).unwrap();
        assert!((r.x[(0, last)] - xbar).abs() < 1e-8);
    }

    #[test]
    fn fixed_step_is_deterministic_and_close() {
        let plant = pendulum_plant(2.0).unwrap();
        let ctrl = IntegralController::linear(s(1.0), 0.2).unwrap();
        let w = SignalSpec::constant(vec![1.0]);
        let opts = SolverOpts {
            fixed_step: Some(1e-3),
            ..SolverOpts::default()
        };
        let run = |o: &SolverOpts| {
            simulate_closed_loop(&plant, &ctrl, &w, 20.0, &Vec64::zeros(1), &Vec64::zeros(1), o).unwrap()
        };
        let a = run(&opts);
        let b = run(&opts);
        assert_eq!(a, b);
        let c = run(&SolverOpts::default());
        assert!((&a.x - &c.x).amax() < 1e-5);
    }

    #[test]
    fn nonfinite_detected() {
        let pi = |u: &Vec64, _: &Vec64| Ok(u.map(|v| -v * v));
        let w = SignalSpec::constant(vec![0.0]);
        let r = simulate_reduced(
            &pi,
            &s(1.0),
            &w,
            &Vec64::from_element(1, 1.0),
            5.0,
            &SolverOpts::default(),
        );
        assert!(matches!(
            r,
            Err(Error::NonFiniteState(_)) | Err(Error::StepSizeUnderflow(_))
        ));
    }

    #[test]
    fn gain_estimate_scalar() {
        let pi = |u: &Vec64, w: &Vec64| Ok(u + w);
        let wa = SignalSpec::steps(vec![(0.0, Vec64::from_element(1, 1.0)), (2.0, Vec64::zeros(1))]).unwrap();
        let wb = SignalSpec::constant(vec![0.0]);
        let g =
            incremental_gain_estimate(&pi, &s(1.0), &wa, &wb, &Vec64::zeros(1), 30.0, &SolverOpts::default()).unwrap();
        assert!(g <= 1.0 + 1e-2 && g > 0.5, "{g}");
        let same = incremental_gain_estimate(&pi, &s(1.0), &wb, &wb, &Vec64::zeros(1), 3.0, &SolverOpts::default());
        assert_eq!(same, Err(Error::ZeroDenominator));
    }

    #[test]
    fn bandwidth_matching() {
        let dc = DcGains::new(s(2.0), s(1.0)).unwrap();
        let c = sensitivity_crossover(&dc, &s(0.5), 0.3).unwrap();
        assert!((c - 0.3).abs() < 1e-6, "{c}");
        let e = match_bandwidth_epsilon(&dc, &s(0.5), 0.3, &s(0.5)).unwrap();
        assert!((e / 0.3 - 1.0).abs() < 1e-3);
        let e = match_bandwidth_epsilon(&dc, &s(0.5), 0.3, &s(0.25)).unwrap();
        assert!((e / 0.6 - 1.0).abs() < 1e-3, "{e}");
        assert!(match_bandwidth_epsilon(&dc, &s(0.5), 0.3, &s(-1.0)).is_err());
    }
}
