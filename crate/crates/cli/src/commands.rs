use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use log::{debug, info, warn};
use serde_json::{json, Value};

use lowgain::examples::{pendulum_plant, saturated_uncertain_example};
use lowgain::io::{self, ConeJson, ExampleRef, ProblemDoc};
use lowgain::lfr::{shift_sector, ConeSpec, DeltaMap, Lfr};
use lowgain::model::{
    dc_gains, default_omega_grid, is_hurwitz, log_grid, sensitivity_response, DcGains, IntegralController,
    NonlinearPlant,
};
use lowgain::sim::{lfr_pi, simulate_closed_loop, simulate_reduced, SignalSpec, SimResult, SolverOpts};
use lowgain::synthesis::{
    analysis_lmi_matrix, davison_gain, hinf_lti_synthesis, robust_analysis, robust_synthesis, StructureSpec,
    SynthesisResult,
};
use lowgain::{linalg, Error, Mat, Vec64};

use crate::config::{ExampleName, Mode, RunConfig};
use crate::InputError;

const DEFAULT_GAMMA_TOL: f64 = 1e-3;
const DEFAULT_SETTLE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Infeasible,
}

fn missing(key: &str) -> InputError {
    InputError(format!("missing key \"{key}\""))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    debug!("wrote {} bytes to {}", bytes.len(), path.display());
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    Ok(io::parse_json(&text)?)
}

/// Any JSON this tool writes, or a hand-written problem document.
pub fn doc_from_value(v: &Value) -> Result<ProblemDoc> {
    if let Some(obj) = v.as_object() {
        if obj.contains_key("status") && !obj.contains_key("Y") {
            let k = match obj.get("K") {
                Some(k) => {
                    let rows: io::MatJson =
                        serde_json::from_value(k.clone()).map_err(|e| Error::Parse(format!("\"K\": {e}")))?;
                    Some(io::mat_from_json("K", &rows)?)
                }
                None => None,
            };
            return Ok(ProblemDoc {
                k,
                ..Default::default()
            });
        }
    }
    Ok(ProblemDoc::from_json(v)?)
}

/// Fill the document from its example reference; `--seed` regenerates the
/// instance data of seeded examples.
fn resolve_example(mut doc: ProblemDoc, seed: Option<u64>) -> Result<ProblemDoc> {
    let Some(ex) = doc.example.clone() else {
        return Ok(doc);
    };
    let (ex, reseeded) = match (ex, seed) {
        (ExampleRef::Saturated { delta, .. }, Some(seed)) => (ExampleRef::Saturated { seed, delta }, true),
        (ExampleRef::Random { n, m, p, n_w, .. }, Some(seed)) => (ExampleRef::Random { seed, n, m, p, n_w }, true),
        (ex, _) => (ex, false),
    };
    let base = io::example_doc(&ex)?;
    if reseeded {
        info!("regenerating example data for seed {:?}", seed);
        doc.plant = base.plant.clone();
        doc.lfr = base.lfr.clone();
    }
    doc.example = Some(ex);
    doc.plant = doc.plant.or(base.plant);
    doc.lfr = doc.lfr.or(base.lfr);
    doc.cone = doc.cone.or(base.cone);
    doc.delta = doc.delta.or(base.delta);
    doc.k = doc.k.or(base.k);
    doc.eps = doc.eps.or(base.eps);
    doc.signal = doc.signal.or(base.signal);
    doc.x0 = doc.x0.or(base.x0);
    doc.eta0 = doc.eta0.or(base.eta0);
    doc.t_final = doc.t_final.or(base.t_final);
    doc.structure = doc.structure.or(base.structure);
    Ok(doc)
}

fn load_doc(cfg: &RunConfig) -> Result<ProblemDoc> {
    let path = cfg
        .input
        .as_deref()
        .ok_or_else(|| InputError("missing --input".into()))?;
    let doc = doc_from_value(&load_value(path)?)?;
    resolve_example(doc, cfg.seed)
}

fn gain(cfg: &RunConfig, doc: &ProblemDoc) -> Result<Option<Mat>> {
    match &cfg.gain {
        Some(path) => {
            let g = doc_from_value(&load_value(path)?)?;
            let k =
                g.k.ok_or_else(|| InputError(format!("--gain: {} has no key \"K\"", path.display())))?;
            Ok(Some(k))
        }
        None => Ok(doc.k.clone()),
    }
}

fn dc_of(doc: &ProblemDoc) -> Result<DcGains> {
    if let Some(plant) = &doc.plant {
        return Ok(dc_gains(plant)?);
    }
    if let Some(lfr) = &doc.lfr {
        return Ok(DcGains::new(lfr.f.clone(), lfr.e1.clone())?);
    }
    Err(InputError("need key \"plant\" or \"lfr\"".into()).into())
}

fn analysis_model(doc: &ProblemDoc) -> Result<(Lfr, ConeSpec)> {
    if let Some(lfr) = &doc.lfr {
        let cone = match &doc.cone {
            Some(c) => c.primal()?,
            None if lfr.n_p() == 0 => ConeSpec::empty(),
            None => return Err(missing("cone").into()),
        };
        return Ok((lfr.clone(), cone));
    }
    if let Some(plant) = &doc.plant {
        return Ok((Lfr::lti(&dc_gains(plant)?), ConeSpec::empty()));
    }
    Err(InputError("need key \"plant\" or \"lfr\"".into()).into())
}

fn check_gain_shape(k: &Mat, m: usize, p: usize) -> Result<()> {
    if k.shape() != (m, p) {
        return Err(InputError(format!("\"K\" is {}x{}, expected {m}x{p}", k.nrows(), k.ncols())).into());
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<Outcome> {
    let doc = load_doc(cfg)?;
    let k = gain(cfg, &doc)?.ok_or_else(|| missing("K"))?;
    let (lfr, cone) = analysis_model(&doc)?;
    check_gain_shape(&k, lfr.m(), lfr.p())?;
    let tol = cfg.gamma_tol.unwrap_or(DEFAULT_GAMMA_TOL);
    match robust_analysis(&lfr, &cone, &k) {
        Ok(r) => {
            let relaxed = (r.gamma * (1.0 + tol)).powi(2);
            let m = analysis_lmi_matrix(&lfr, &cone, &k, &r.p, &r.theta, relaxed)?;
            let verified = linalg::lambda_max(&linalg::sym(&m))? < 0.0;
            let mut out = io::analysis_result_to_json(&r);
            out["K"] = json!(io::mat_to_json(&k));
            out["cone"] = json!(cone.label);
            out["verified"] = json!(verified);
            out["gamma_tol"] = json!(tol);
            write_json(cfg.output(), &out)?;
            println!(
                "analyze: status={} gamma={:.6e} contraction_rate={:.4e} verified={} cone={}",
                r.status.as_str(),
                r.gamma,
                r.contraction_rate,
                verified,
                cone.label
            );
            Ok(Outcome::Done)
        }
        Err(e) if e.is_infeasibility() => {
            let out = json!({ "status": "infeasible", "error": e.to_string(), "K": io::mat_to_json(&k) });
            write_json(cfg.output(), &out)?;
            println!("analyze: infeasible ({e})");
            Ok(Outcome::Infeasible)
        }
        Err(e) => Err(e.into()),
    }
}

fn load_structure(cfg: &RunConfig, doc: &ProblemDoc) -> Result<Option<StructureSpec>> {
    match &cfg.structure {
        Some(p) => Ok(Some(io::structure_from_json(&load_value(p)?)?)),
        None => Ok(doc.structure.clone()),
    }
}

fn synthesize_robust(doc: &ProblemDoc, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    let lfr = doc.lfr.as_ref().ok_or_else(|| missing("lfr"))?;
    let cone: &ConeJson = doc.cone.as_ref().ok_or_else(|| missing("cone"))?;
    let shifts = cone.sector_shifts();
    let mut r = if shifts.iter().any(|s| *s != 0.0) {
        info!("shifting sectors by {shifts:?} before synthesis");
        let shifted = shift_sector(lfr, &shifts)?;
        robust_synthesis(&shifted, &cone.shifted_to_zero().pair()?, structure)?
    } else {
        robust_synthesis(lfr, &cone.pair()?, structure)?
    };
    let post = robust_analysis(lfr, &cone.primal()?, &r.k)?;
    r.analysis_gamma = Some(post.gamma);
    Ok(r)
}

fn synthesize_lti(doc: &ProblemDoc, structure: Option<&StructureSpec>) -> Result<SynthesisResult> {
    let dc = dc_of(doc)?;
    let mut r = hinf_lti_synthesis(&dc, structure)?;
    let post = robust_analysis(&Lfr::lti(&dc), &ConeSpec::empty(), &r.k)?;
    r.analysis_gamma = Some(post.gamma);
    Ok(r)
}

pub fn synthesize(cfg: &RunConfig) -> Result<Outcome> {
    let doc = load_doc(cfg)?;
    let structure = load_structure(cfg, &doc)?;
    let mode = cfg.mode.unwrap_or(if doc.lfr.is_some() && doc.cone.is_some() {
        Mode::Robust
    } else {
        Mode::LtiHinf
    });
    let mode_name = match mode {
        Mode::LtiHinf => "lti-hinf",
        Mode::Robust => "robust",
    };
    let tol = cfg.gamma_tol.unwrap_or(DEFAULT_GAMMA_TOL);
    let result = match mode {
        Mode::LtiHinf => synthesize_lti(&doc, structure.as_ref()),
        Mode::Robust => synthesize_robust(&doc, structure.as_ref()),
    };
    let r = match result {
        Ok(r) => r,
        Err(e) => {
            let lib = e.downcast_ref::<Error>();
            if lib.is_some_and(Error::is_infeasibility) {
                let out = json!({ "status": "infeasible", "mode": mode_name, "error": e.to_string() });
                write_json(cfg.output(), &out)?;
                println!("synthesize: infeasible in mode {mode_name}: {e}");
                return Ok(Outcome::Infeasible);
            }
            return Err(e);
        }
    };
    let post = r.analysis_gamma.expect("post-analysis is always run");
    let verified = post <= r.gamma * (1.0 + tol);
    let mut out = io::synthesis_result_to_json(&r);
    out["mode"] = json!(mode_name);
    out["verified"] = json!(verified);
    out["gamma_tol"] = json!(tol);
    write_json(cfg.output(), &out)?;
    let zeros = r.k.iter().filter(|v| **v == 0.0).count();
    println!(
        "synthesize: mode={mode_name} status={} gamma={:.6e} analysis_gamma={:.6e} verified={verified} K={}x{} ({zeros} zero entries) multiplier={}",
        r.status,
        r.gamma,
        post,
        r.k.nrows(),
        r.k.ncols(),
        r.multiplier_label
    );
    Ok(Outcome::Done)
}

enum SimModel {
    Full(NonlinearPlant),
    Reduced(Box<(Lfr, DeltaMap)>),
}

fn sim_model(doc: &ProblemDoc) -> Result<SimModel> {
    match &doc.example {
        Some(ExampleRef::Pendulum { beta }) => return Ok(SimModel::Full(pendulum_plant(*beta)?)),
        Some(ExampleRef::Saturated { seed, delta }) => {
            return Ok(SimModel::Full(saturated_uncertain_example(*seed, *delta)?.full_plant()))
        }
        _ => {}
    }
    if let Some(plant) = &doc.plant {
        return Ok(SimModel::Full(NonlinearPlant::from(plant.clone())));
    }
    if let (Some(lfr), Some(delta)) = (&doc.lfr, &doc.delta) {
        return Ok(SimModel::Reduced(Box::new((lfr.clone(), delta.build()?))));
    }
    Err(
        InputError("simulate needs key \"plant\", a pendulum/saturated \"example\", or \"lfr\" with \"delta\"".into())
            .into(),
    )
}

fn initial(key: &str, v: &Option<Vec<f64>>, n: usize) -> Result<Vec64> {
    match v {
        Some(v) if v.len() != n => Err(InputError(format!("\"{key}\" has {} entries, expected {n}", v.len())).into()),
        Some(v) => Ok(Vec64::from_column_slice(v)),
        None => Ok(Vec64::zeros(n)),
    }
}

/// A step in one disturbance channel and how the error recovered from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SettlingEvent {
    pub channel: usize,
    pub t_step: f64,
    pub settled_at: Option<f64>,
    pub worst_tail: f64,
}

/// Steps are the signal knots, plus `t = 0` for channels that start nonzero.
pub fn settling_events(r: &SimResult, w: &SignalSpec, t_final: f64, tol: f64) -> Vec<SettlingEvent> {
    let knots = w.knots(t_final);
    let mut steps: Vec<(f64, Vec<usize>)> = Vec::new();
    let w0 = w.eval(0.0);
    let initial: Vec<usize> = (0..w0.len()).filter(|&i| w0[i] != 0.0).collect();
    if !initial.is_empty() {
        steps.push((0.0, initial));
    }
    let mut prev = w0;
    for &tk in &knots {
        let cur = w.eval(tk);
        let changed: Vec<usize> = (0..cur.len()).filter(|&i| cur[i] != prev[i]).collect();
        if !changed.is_empty() {
            steps.push((tk, changed));
        }
        prev = cur;
    }
    let err = |i: usize| r.e.column(i).amax();
    let mut events = Vec::new();
    for (tk, channels) in steps {
        let end = knots.iter().copied().find(|&k| k > tk).unwrap_or(f64::INFINITY);
        let idx: Vec<usize> = (0..r.len()).filter(|&i| r.t[i] >= tk && r.t[i] < end).collect();
        let last_bad = idx.iter().rev().find(|&&i| err(i) > tol).copied();
        let settled_at = match last_bad {
            None => idx.first().map(|&i| r.t[i]),
            Some(i) if Some(&i) == idx.last() => None,
            Some(i) => Some(r.t[i + 1]),
        };
        let worst_tail = idx.last().map(|&i| err(i)).unwrap_or(f64::NAN);
        for channel in channels {
            events.push(SettlingEvent {
                channel,
                t_step: tk,
                settled_at,
                worst_tail,
            });
        }
    }
    events
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let doc = load_doc(cfg)?;
    let k = gain(cfg, &doc)?.ok_or_else(|| missing("K"))?;
    let w = doc.signal.as_ref().ok_or_else(|| missing("signal"))?.build()?;
    let t_final = cfg.t_final.or(doc.t_final).ok_or_else(|| missing("t_final"))?;
    let opts = SolverOpts {
        fixed_step: cfg.fixed_step,
        ..SolverOpts::default()
    };
    let eta0 = initial("eta0", &doc.eta0, k.ncols())?;
    let (r, with_state) = match sim_model(&doc)? {
        SimModel::Full(plant) => {
            check_gain_shape(&k, plant.m, plant.p)?;
            if w.dim() != plant.n_w {
                return Err(InputError(format!("\"signal\" has {} channels, expected {}", w.dim(), plant.n_w)).into());
            }
            let eps = cfg.eps.or(doc.eps).ok_or_else(|| missing("eps"))?;
            let x0 = initial("x0", &doc.x0, plant.n)?;
            let ctrl = IntegralController::linear(k.clone(), eps)?;
            info!("closed-loop simulation, eps = {eps}, t_final = {t_final}");
            (
                simulate_closed_loop(&plant, &ctrl, &w, t_final, &x0, &eta0, &opts)?,
                true,
            )
        }
        SimModel::Reduced(model) => {
            let (lfr, delta) = *model;
            check_gain_shape(&k, lfr.m(), lfr.p())?;
            if w.dim() != lfr.n_w() {
                return Err(InputError(format!("\"signal\" has {} channels, expected {}", w.dim(), lfr.n_w())).into());
            }
            info!("reduced-model simulation, t_final = {t_final}");
            let pi = lfr_pi(&lfr, &delta);
            (simulate_reduced(&pi, &k, &w, &eta0, t_final, &opts)?, false)
        }
    };
    let mut buf = Vec::new();
    io::write_sim_csv(&mut buf, &r, with_state)?;
    write_atomic(cfg.output(), &buf)?;

    let tol = cfg.settle_tol.unwrap_or(DEFAULT_SETTLE_TOL);
    let last = r.len() - 1;
    println!(
        "simulate: {} samples to t={} ({} accepted steps), final max |e| = {:.3e}",
        r.len(),
        r.t[last],
        r.stats.accepted,
        r.e.column(last).amax()
    );
    for ev in settling_events(&r, &w, t_final, tol) {
        match ev.settled_at {
            Some(ts) => println!(
                "settling: channel {} step at t={} settled at t={:.6} (after {:.6}, |e| <= {tol:e})",
                ev.channel,
                ev.t_step,
                ts,
                ts - ev.t_step
            ),
            None => {
                warn!(
                    "channel {} did not settle after the step at t={}",
                    ev.channel, ev.t_step
                );
                println!(
                    "settling: channel {} step at t={} not settled (|e| = {:.3e} at segment end)",
                    ev.channel, ev.t_step, ev.worst_tail
                )
            }
        }
    }
    Ok(Outcome::Done)
}

pub fn freqresp(cfg: &RunConfig) -> Result<Outcome> {
    let doc = load_doc(cfg)?;
    let dc = dc_of(&doc)?;
    let (k, label) = match gain(cfg, &doc)? {
        Some(k) => (k, "given"),
        None => (davison_gain(&dc)?, "davison"),
    };
    check_gain_shape(&k, dc.m(), dc.p())?;
    let eps = cfg.eps.or(doc.eps).unwrap_or(1.0);
    let grid = if cfg.omega_min.is_some() || cfg.omega_max.is_some() || cfg.n_omega.is_some() {
        let lo = cfg.omega_min.unwrap_or(1e-3 * eps);
        let hi = cfg.omega_max.unwrap_or(1e4 * eps);
        if lo >= hi {
            return Err(InputError(format!("frequency range [{lo}, {hi}] is empty")).into());
        }
        log_grid(lo, hi, cfg.n_omega.unwrap_or(400))
    } else {
        default_omega_grid(eps)
    };
    if !is_hurwitz(&(-(&dc.g0 * &k)), 0.0)? {
        warn!("-G0 K is not Hurwitz; the slow loop is unstable");
    }
    let fr = sensitivity_response(&dc, &k, eps, &grid)?;
    let mut buf = Vec::new();
    io::write_freq_csv(&mut buf, &fr)?;
    write_atomic(cfg.output(), &buf)?;
    let (w_peak, s_peak) = fr.peak();
    let floor = linalg::norm2(&dc.gw0);
    println!(
        "freqresp: K={label} eps={eps} peak sigma_max={s_peak:.6e} at omega={w_peak:.4e}, ||Gw0||={floor:.6e}, ratio={:.6}",
        s_peak / floor
    );
    Ok(Outcome::Done)
}

pub fn example(cfg: &RunConfig) -> Result<Outcome> {
    let name = cfg.name.ok_or_else(|| InputError("missing --name".into()))?;
    let seed = cfg.seed.unwrap_or(1);
    let ex = match name {
        ExampleName::Pendulum => ExampleRef::Pendulum {
            beta: cfg.beta.unwrap_or(2.0),
        },
        ExampleName::PowerSystem => ExampleRef::PowerSystem {
            beta: cfg.beta.unwrap_or(1.0),
            mu: vec![1.0],
            l: vec![1.0],
        },
        ExampleName::Saturated => ExampleRef::Saturated {
            seed,
            delta: cfg.delta.unwrap_or(0.5),
        },
        ExampleName::Random => ExampleRef::Random {
            seed,
            n: 30,
            m: 7,
            p: 5,
            n_w: 5,
        },
    };
    let mut doc = io::example_doc(&ex)?;
    doc.eps = cfg.eps.or(doc.eps);
    doc.t_final = cfg.t_final.or(doc.t_final);
    write_json(cfg.output(), &doc.to_json())?;
    println!("example: wrote {:?} to {}", name, cfg.output().display());
    Ok(Outcome::Done)
}
