//! Python bindings for the `lowgain` crate.
//!
//! Matrices cross the boundary as lists of rows. Infeasible problems raise
//! `InfeasibleError`, bad arguments raise `ValueError`, numerical breakdowns
//! raise `RuntimeError`.

use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lowgain::examples::{
    power_system_gamma_star as ps_gamma_star, power_system_lfr, saturated_uncertain_example, PowerSystemSpec,
};
use lowgain::io::{self, ExampleRef};
use lowgain::measures::{self, NormKind};
use lowgain::model::{self, DcGains, IntegralController, NonlinearPlant, StateSpace};
use lowgain::sim::{self, SignalSpec, SolverOpts};
use lowgain::synthesis::{self, AnalysisResult, StructureSpec, SynthesisResult};
use lowgain::{Error, Mat, Vec64};

pyo3::create_exception!(lowgain_py, InfeasibleError, PyException);

type Rows = Vec<Vec<f64>>;

fn err(e: Error) -> PyErr {
    if e.is_infeasibility() {
        return InfeasibleError::new_err(e.to_string());
    }
    match e {
        Error::Parse(_) | Error::DimensionMismatch(_) | Error::InvalidArgument(_) | Error::InvalidWeight(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(key: &str, rows: &Rows) -> PyResult<Mat> {
    io::mat_from_json(key, rows).map_err(err)
}

fn rows(m: &Mat) -> Rows {
    io::mat_to_json(m)
}

fn dc(g0: &Rows, gw0: &Rows) -> PyResult<DcGains> {
    DcGains::new(mat("G0", g0)?, mat("Gw0", gw0)?).map_err(err)
}

fn structure(row_blocks: Option<Vec<usize>>, col_blocks: Option<Vec<usize>>) -> PyResult<Option<StructureSpec>> {
    match (row_blocks, col_blocks) {
        (None, None) => Ok(None),
        (Some(r), Some(c)) => StructureSpec::block_diagonal(&r, &c).map(Some).map_err(err),
        _ => Err(PyValueError::new_err(
            "row_blocks and col_blocks must be given together",
        )),
    }
}

#[pyclass(name = "StateSpace", module = "lowgain_py")]
struct PyStateSpace {
    inner: StateSpace,
}

#[pymethods]
impl PyStateSpace {
    #[new]
    #[pyo3(signature = (a, b, c, d, bw, dw))]
    fn new(a: Rows, b: Rows, c: Rows, d: Rows, bw: Rows, dw: Rows) -> PyResult<Self> {
        let inner = StateSpace::new(
            mat("A", &a)?,
            mat("B", &b)?,
            mat("Bw", &bw)?,
            mat("C", &c)?,
            mat("D", &d)?,
            mat("Dw", &dw)?,
        )
        .map_err(err)?;
        Ok(PyStateSpace { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v = io::parse_json(text).map_err(err)?;
        Ok(PyStateSpace {
            inner: io::state_space_from_json(&v).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        io::state_space_to_json(&self.inner).to_string()
    }

    #[getter]
    fn a(&self) -> Rows {
        rows(&self.inner.a)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let s = &self.inner;
        (s.n(), s.m(), s.p(), s.n_w())
    }

    /// `(G0, Gw0)`.
    fn dc_gains(&self) -> PyResult<(Rows, Rows)> {
        let d = model::dc_gains(&self.inner).map_err(err)?;
        Ok((rows(&d.g0), rows(&d.gw0)))
    }

    fn __repr__(&self) -> String {
        let (n, m, p, nw) = self.shape();
        format!("StateSpace(n={n}, m={m}, p={p}, n_w={nw})")
    }
}

#[pyclass(name = "SynthesisResult", module = "lowgain_py", get_all)]
struct PySynthesis {
    k: Rows,
    gamma: f64,
    analysis_gamma: Option<f64>,
    status: String,
    multiplier_label: String,
    json: String,
}

impl From<&SynthesisResult> for PySynthesis {
    fn from(r: &SynthesisResult) -> Self {
        PySynthesis {
            k: rows(&r.k),
            gamma: r.gamma,
            analysis_gamma: r.analysis_gamma,
            status: r.status.clone(),
            multiplier_label: r.multiplier_label.clone(),
            json: io::synthesis_result_to_json(r).to_string(),
        }
    }
}

#[pymethods]
impl PySynthesis {
    fn __repr__(&self) -> String {
        format!("SynthesisResult(gamma={:.6e}, status={})", self.gamma, self.status)
    }
}

#[pyclass(name = "AnalysisResult", module = "lowgain_py", get_all)]
struct PyAnalysis {
    gamma: f64,
    p: Rows,
    theta: Vec<f64>,
    contraction_rate: f64,
    status: String,
}

impl From<&AnalysisResult> for PyAnalysis {
    fn from(r: &AnalysisResult) -> Self {
        PyAnalysis {
            gamma: r.gamma,
            p: rows(&r.p),
            theta: r.theta.clone(),
            contraction_rate: r.contraction_rate,
            status: r.status.as_str().to_string(),
        }
    }
}

#[pymethods]
impl PyAnalysis {
    fn __repr__(&self) -> String {
        format!("AnalysisResult(gamma={:.6e}, status={})", self.gamma, self.status)
    }
}

#[pyfunction]
fn random_stable_system(seed: u64, n: usize, m: usize, p: usize, n_w: usize) -> PyResult<PyStateSpace> {
    Ok(PyStateSpace {
        inner: model::random_stable_system(seed, n, m, p, n_w).map_err(err)?,
    })
}

/// Matrix measure for `norm` in {"1", "2", "inf"}. With `weight`, the
/// weighted variant: `P` for "2", `W` in `|W x|` for "1" and "inf".
#[pyfunction]
#[pyo3(signature = (a, norm = "2", weight = None))]
fn matrix_measure(a: Rows, norm: &str, weight: Option<Rows>) -> PyResult<f64> {
    let a = mat("A", &a)?;
    let w = weight.map(|w| mat("weight", &w)).transpose()?;
    let kind = match (norm, w) {
        ("1", None) => NormKind::One,
        ("2", None) => NormKind::Two,
        ("inf", None) => NormKind::Inf,
        ("1", Some(w)) => NormKind::weighted_one(w).map_err(err)?,
        ("2", Some(p)) => NormKind::weighted_two(p).map_err(err)?,
        ("inf", Some(w)) => NormKind::weighted_inf(w).map_err(err)?,
        (other, _) => return Err(PyValueError::new_err(format!("unknown norm {other:?}"))),
    };
    measures::mu(&a, &kind).map_err(err)
}

/// Largest certified exponential rate for `eta' = -M eta`.
#[pyfunction]
fn contraction_rate(m: Rows) -> PyResult<f64> {
    Ok(measures::contraction_lmi_linear(&mat("M", &m)?).map_err(err)?.rho)
}

#[pyfunction]
fn davison_gain(g0: Rows, gw0: Rows) -> PyResult<Rows> {
    Ok(rows(&synthesis::davison_gain(&dc(&g0, &gw0)?).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (g0, gw0, row_blocks = None, col_blocks = None))]
fn hinf_synthesis(
    g0: Rows,
    gw0: Rows,
    row_blocks: Option<Vec<usize>>,
    col_blocks: Option<Vec<usize>>,
) -> PyResult<PySynthesis> {
    let d = dc(&g0, &gw0)?;
    let s = structure(row_blocks, col_blocks)?;
    let r = synthesis::hinf_lti_synthesis(&d, s.as_ref()).map_err(err)?;
    Ok(PySynthesis::from(&r))
}

/// `sigma_max` of the slow sensitivity on the given frequencies.
#[pyfunction]
fn sensitivity_response(g0: Rows, gw0: Rows, k: Rows, eps: f64, omega: Vec<f64>) -> PyResult<Vec<f64>> {
    let d = dc(&g0, &gw0)?;
    let fr = model::sensitivity_response(&d, &mat("K", &k)?, eps, &omega).map_err(err)?;
    Ok(fr.sigma_max)
}

#[pyfunction]
fn power_system_gamma_star(beta: f64, mu: f64, l: f64) -> PyResult<f64> {
    ps_gamma_star(beta, mu, l).map_err(err)
}

/// Robust analysis of the aggregated power system with gain `k`.
#[pyfunction]
#[pyo3(signature = (beta, mu, l, k = 1.0))]
fn power_system_analysis(beta: f64, mu: Vec<f64>, l: Vec<f64>, k: f64) -> PyResult<PyAnalysis> {
    let spec = PowerSystemSpec::new(beta, &mu, &l).map_err(err)?;
    let model = power_system_lfr(&spec).map_err(err)?;
    let r = synthesis::robust_analysis(&model.lfr, &model.cones.primal, &Mat::from_element(1, 1, k)).map_err(err)?;
    Ok(PyAnalysis::from(&r))
}

/// Robust synthesis on the saturated example, followed by analysis with the
/// richer primal cone.
#[pyfunction]
#[pyo3(signature = (seed, delta, row_blocks = None, col_blocks = None))]
fn saturated_synthesis(
    seed: u64,
    delta: f64,
    row_blocks: Option<Vec<usize>>,
    col_blocks: Option<Vec<usize>>,
) -> PyResult<PySynthesis> {
    let ex = saturated_uncertain_example(seed, delta).map_err(err)?;
    let s = structure(row_blocks, col_blocks)?;
    let mut r = synthesis::robust_synthesis(&ex.lfr, &ex.pair, s.as_ref()).map_err(err)?;
    let post = synthesis::robust_analysis(&ex.lfr, &ex.analysis_cone, &r.k).map_err(err)?;
    r.analysis_gamma = Some(post.gamma);
    Ok(PySynthesis::from(&r))
}

/// Closed-loop step response of an LTI plant under `u = K eta`,
/// `eta' = -eps e`, with constant disturbance `w`. Returns `(t, e)` with one
/// row of `e` per sample.
#[pyfunction]
#[pyo3(signature = (plant, k, eps, w, t_final, fixed_step = None))]
fn simulate_lti(
    plant: &PyStateSpace,
    k: Rows,
    eps: f64,
    w: Vec<f64>,
    t_final: f64,
    fixed_step: Option<f64>,
) -> PyResult<(Vec<f64>, Rows)> {
    let ss = &plant.inner;
    let ctrl = IntegralController::linear(mat("K", &k)?, eps).map_err(err)?;
    let opts = SolverOpts {
        fixed_step,
        ..SolverOpts::default()
    };
    let r = sim::simulate_closed_loop(
        &NonlinearPlant::from(ss.clone()),
        &ctrl,
        &SignalSpec::constant(w),
        t_final,
        &Vec64::zeros(ss.n()),
        &Vec64::zeros(ss.p()),
        &opts,
    )
    .map_err(err)?;
    let e = (0..r.len()).map(|i| r.e.column(i).iter().copied().collect()).collect();
    Ok((r.t, e))
}

/// Problem document of a built-in example, as JSON text the CLI accepts.
#[pyfunction]
#[pyo3(signature = (name, seed = 1))]
fn example_document(name: &str, seed: u64) -> PyResult<String> {
    let ex = match name {
        "pendulum" => ExampleRef::Pendulum { beta: 2.0 },
        "power-system" => ExampleRef::PowerSystem {
            beta: 1.0,
            mu: vec![1.0],
            l: vec![1.0],
        },
        "saturated" => ExampleRef::Saturated { seed, delta: 0.5 },
        "random" => ExampleRef::Random {
            seed,
            n: 30,
            m: 7,
            p: 5,
            n_w: 5,
        },
        other => return Err(PyValueError::new_err(format!("unknown example {other:?}"))),
    };
    Ok(io::example_doc(&ex).map_err(err)?.to_json().to_string())
}

#[pymodule]
fn lowgain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyStateSpace>()?;
    m.add_class::<PySynthesis>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(random_stable_system, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_measure, m)?)?;
    m.add_function(wrap_pyfunction!(contraction_rate, m)?)?;
    m.add_function(wrap_pyfunction!(davison_gain, m)?)?;
    m.add_function(wrap_pyfunction!(hinf_synthesis, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_response, m)?)?;
    m.add_function(wrap_pyfunction!(power_system_gamma_star, m)?)?;
    m.add_function(wrap_pyfunction!(power_system_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(saturated_synthesis, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_lti, m)?)?;
    m.add_function(wrap_pyfunction!(example_document, m)?)?;
    Ok(())
}
