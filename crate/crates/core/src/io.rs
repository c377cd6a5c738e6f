//! JSON and CSV formats.
//!
//! Matrices are row-major arrays of arrays. A matrix with zero rows is
//! written as `[]` and its column count is recovered from the surrounding
//! object.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::examples::{self, SectorMap};
use crate::lfr::{
    daug_cone, daug_pair, lipschitz_cone, make_lfr, parametric_cone, saturation, sector_cone, sector_primal, ConePair,
    ConeSpec, DeltaMap, Lfr,
};
use crate::model::{FreqResponse, StateSpace};
use crate::sim::{SignalSpec, SimResult};
use crate::synthesis::{AnalysisResult, StructureSpec, SynthesisResult, YConstraint};
use crate::{Error, Mat, Result, Vec64};

pub type MatJson = Vec<Vec<f64>>;

pub fn mat_to_json(m: &Mat) -> MatJson {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Parse a matrix, naming `key` in any error.
pub fn mat_from_json(key: &str, rows: &MatJson) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("\"{key}\": rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("\"{key}\": entries must be finite")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Parse and check the shape; `[]` is accepted for any `0 x cols` matrix.
fn mat_shaped(key: &str, rows: &MatJson, r: usize, c: usize) -> Result<Mat> {
    let m = mat_from_json(key, rows)?;
    if m.nrows() == 0 && r == 0 {
        return Ok(Mat::zeros(0, c));
    }
    if m.shape() != (r, c) {
        return Err(Error::Parse(format!(
            "\"{key}\": expected {r}x{c}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

fn finite_vec(key: &str, v: &[f64]) -> Result<Vec64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse(format!("\"{key}\": entries must be finite")));
    }
    Ok(Vec64::from_column_slice(v))
}

fn parse<T: for<'de> Deserialize<'de>>(what: &str, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

pub fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid JSON: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSpaceJson {
    #[serde(rename = "A")]
    a: MatJson,
    #[serde(rename = "B")]
    b: MatJson,
    #[serde(rename = "Bw", default, skip_serializing_if = "Option::is_none")]
    bw: Option<MatJson>,
    #[serde(rename = "C")]
    c: MatJson,
    #[serde(rename = "D")]
    d: MatJson,
    #[serde(rename = "Dw", default, skip_serializing_if = "Option::is_none")]
    dw: Option<MatJson>,
}

pub fn state_space_to_json(ss: &StateSpace) -> Value {
    json!({
        "A": mat_to_json(&ss.a),
        "B": mat_to_json(&ss.b),
        "Bw": mat_to_json(&ss.bw),
        "C": mat_to_json(&ss.c),
        "D": mat_to_json(&ss.d),
        "Dw": mat_to_json(&ss.dw),
    })
}

/// Missing `Bw`/`Dw` become zero blocks whose width is taken from the other
/// one, or zero when both are absent.
pub fn state_space_from_json(v: &Value) -> Result<StateSpace> {
    let raw: StateSpaceJson = parse("plant", v)?;
    let a = mat_from_json("A", &raw.a)?;
    let n = a.nrows();
    let b = mat_from_json("B", &raw.b)?;
    let c = mat_from_json("C", &raw.c)?;
    let (m, p) = (b.ncols(), c.nrows());
    let d = mat_shaped("D", &raw.d, p, m)?;
    let bw = raw.bw.as_ref().map(|x| mat_from_json("Bw", x)).transpose()?;
    let dw = raw.dw.as_ref().map(|x| mat_from_json("Dw", x)).transpose()?;
    let nw = bw
        .as_ref()
        .filter(|x| x.nrows() > 0)
        .map(|x| x.ncols())
        .or(dw.as_ref().filter(|x| x.nrows() > 0).map(|x| x.ncols()))
        .unwrap_or(0);
    let bw = bw.map_or_else(|| Ok(Mat::zeros(n, nw)), |x| reshape_empty("Bw", x, n, nw))?;
    let dw = dw.map_or_else(|| Ok(Mat::zeros(p, nw)), |x| reshape_empty("Dw", x, p, nw))?;
    StateSpace::new(a, b, bw, c, d, dw).map_err(|e| Error::Parse(format!("plant: {e}")))
}

fn reshape_empty(key: &str, m: Mat, r: usize, c: usize) -> Result<Mat> {
    if m.nrows() == 0 && r == 0 {
        return Ok(Mat::zeros(0, c));
    }
    if m.shape() != (r, c) {
        return Err(Error::Parse(format!(
            "\"{key}\": expected {r}x{c}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LfrJson {
    #[serde(rename = "F")]
    f: MatJson,
    #[serde(rename = "G")]
    g: MatJson,
    #[serde(rename = "H")]
    h: MatJson,
    #[serde(rename = "J")]
    j: MatJson,
    #[serde(rename = "E1")]
    e1: MatJson,
    #[serde(rename = "E2")]
    e2: MatJson,
}

pub fn lfr_to_json(l: &Lfr) -> Value {
    json!({
        "F": mat_to_json(&l.f),
        "G": mat_to_json(&l.g),
        "H": mat_to_json(&l.h),
        "J": mat_to_json(&l.j),
        "E1": mat_to_json(&l.e1),
        "E2": mat_to_json(&l.e2),
    })
}

pub fn lfr_from_json(v: &Value) -> Result<Lfr> {
    let raw: LfrJson = parse("lfr", v)?;
    let f = mat_from_json("F", &raw.f)?;
    let (p, m) = f.shape();
    let g = mat_from_json("G", &raw.g)?;
    let n_p = g.ncols();
    let g = reshape_empty("G", g, p, n_p)?;
    let h = mat_from_json("H", &raw.h)?;
    let n_q = h.nrows();
    let h = reshape_empty("H", h, n_q, m)?;
    let j = mat_shaped("J", &raw.j, n_q, n_p)?;
    let e1 = mat_from_json("E1", &raw.e1)?;
    let n_w = e1.ncols();
    let e1 = reshape_empty("E1", e1, p, n_w)?;
    let e2 = mat_shaped("E2", &raw.e2, n_q, n_w)?;
    make_lfr(f, g, h, j, e1, e2).map_err(|e| Error::Parse(format!("lfr: {e}")))
}

/// Multiplier cone catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConeJson {
    Sector {
        mu: f64,
        #[serde(rename = "L")]
        l: f64,
    },
    Lipschitz {
        #[serde(rename = "L")]
        l: f64,
        n_p: usize,
        n_q: usize,
    },
    Parametric {
        dim: usize,
        #[serde(default)]
        skew: bool,
    },
    Daug {
        parts: Vec<ConeJson>,
    },
    None,
}

impl ConeJson {
    pub fn from_json(v: &Value) -> Result<Self> {
        parse("cone", v)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("cone serializes")
    }

    pub fn primal(&self) -> Result<ConeSpec> {
        Ok(match self {
            ConeJson::Sector { mu, l } => sector_primal(*mu, *l)?,
            ConeJson::Lipschitz { l, n_p, n_q } => lipschitz_cone(*l, *n_p, *n_q)?,
            ConeJson::Parametric { dim, skew } => parametric_cone(*dim, *skew)?.primal,
            ConeJson::Daug { parts } => {
                let mut it = parts.iter();
                let first = it.next().ok_or_else(|| Error::Parse("cone: daug needs parts".into()))?;
                it.try_fold(first.primal()?, |acc, c| Ok::<_, Error>(daug_cone(&acc, &c.primal()?)))?
            }
            ConeJson::None => ConeSpec::empty(),
        })
    }

    /// Primal/dual pair; sectors with `mu = L` and Lipschitz cones have no dual.
    pub fn pair(&self) -> Result<ConePair> {
        Ok(match self {
            ConeJson::Sector { mu, l } => match sector_cone(*mu, *l) {
                Err(Error::SingularBasis) => {
                    ConePair::primal_only(sector_primal(*mu, *l)?, "mu = L: sector basis is singular, no dual")
                }
                r => r?,
            },
            ConeJson::Lipschitz { .. } => ConePair::primal_only(self.primal()?, "no dual for the Lipschitz cone"),
            ConeJson::Parametric { dim, skew } => parametric_cone(*dim, *skew)?,
            ConeJson::Daug { parts } => {
                let mut it = parts.iter();
                let first = it.next().ok_or_else(|| Error::Parse("cone: daug needs parts".into()))?;
                it.try_fold(first.pair()?, |acc, c| Ok::<_, Error>(daug_pair(&acc, &c.pair()?)))?
            }
            ConeJson::None => ConePair::empty(),
        })
    }

    /// Sector lower bounds per uncertainty channel (zero outside sectors).
    pub fn sector_shifts(&self) -> Vec<f64> {
        match self {
            ConeJson::Sector { mu, .. } => vec![*mu],
            ConeJson::Lipschitz { n_p, .. } => vec![0.0; *n_p],
            ConeJson::Parametric { dim, .. } => vec![0.0; *dim],
            ConeJson::Daug { parts } => parts.iter().flat_map(|p| p.sector_shifts()).collect(),
            ConeJson::None => Vec::new(),
        }
    }

    /// Same catalog entry with every sector `[mu, L]` moved to `[0, L - mu]`.
    pub fn shifted_to_zero(&self) -> ConeJson {
        match self {
            ConeJson::Sector { mu, l } => ConeJson::Sector { mu: 0.0, l: l - mu },
            ConeJson::Daug { parts } => ConeJson::Daug {
                parts: parts.iter().map(|p| p.shifted_to_zero()).collect(),
            },
            other => other.clone(),
        }
    }
}

/// Scalar nonlinearity used in a diagonal uncertainty map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarMapJson {
    Gain {
        value: f64,
    },
    Saturation,
    /// Smooth slope-restricted map in the sector `[mu, L]`.
    Smooth {
        mu: f64,
        #[serde(rename = "L")]
        l: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaJson {
    Linear {
        #[serde(rename = "M")]
        m: MatJson,
    },
    Diagonal {
        entries: Vec<ScalarMapJson>,
    },
}

impl DeltaJson {
    pub fn from_json(v: &Value) -> Result<Self> {
        parse("delta", v)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("delta serializes")
    }

    pub fn build(&self) -> Result<DeltaMap> {
        match self {
            DeltaJson::Linear { m } => Ok(DeltaMap::linear(mat_from_json("M", m)?)),
            DeltaJson::Diagonal { entries } => {
                let maps: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>> = entries
                    .iter()
                    .map(|e| -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
                        Ok(match e {
                            ScalarMapJson::Gain { value } => {
                                let v = *value;
                                Arc::new(move |x| v * x)
                            }
                            ScalarMapJson::Saturation => Arc::new(saturation),
                            ScalarMapJson::Smooth { mu, l } => {
                                if !(*mu >= 0.0 && l >= mu) {
                                    return Err(Error::Parse(format!(
                                        "delta: smooth map needs 0 <= mu <= L, got [{mu}, {l}]"
                                    )));
                                }
                                SectorMap::smooth(*mu, *l).f
                            }
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(DeltaMap::diagonal(maps.len(), move |i, x| maps[i](x)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalJson {
    Constant {
        value: Vec<f64>,
    },
    /// `(t, value)` knots; the first must be at `t = 0`.
    Steps {
        knots: Vec<(f64, Vec<f64>)>,
    },
    /// Unit steps on each channel in turn, `period` apart.
    SequentialSteps {
        dim: usize,
        period: f64,
    },
}

impl SignalJson {
    pub fn from_json(v: &Value) -> Result<Self> {
        parse("signal", v)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("signal serializes")
    }

    pub fn build(&self) -> Result<SignalSpec> {
        match self {
            SignalJson::Constant { value } => Ok(SignalSpec::Constant(finite_vec("signal.value", value)?)),
            SignalJson::Steps { knots } => SignalSpec::steps(
                knots
                    .iter()
                    .map(|(t, v)| Ok((*t, finite_vec("signal.knots", v)?)))
                    .collect::<Result<_>>()?,
            ),
            SignalJson::SequentialSteps { dim, period } => SignalSpec::sequential_unit_steps(*dim, *period),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum YJson {
    None,
    Diagonal,
    BlockDiagonal { blocks: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<Vec<Value>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_blocks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_blocks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<YJson>,
}

pub fn structure_to_json(s: &StructureSpec) -> Value {
    let mask: Vec<Vec<Value>> = (0..s.m)
        .map(|i| (0..s.p).map(|j| Value::Bool(s.is_free(i, j))).collect())
        .collect();
    let y = match &s.y_constraint {
        YConstraint::None => YJson::None,
        YConstraint::Diagonal => YJson::Diagonal,
        YConstraint::BlockDiagonal(b) => YJson::BlockDiagonal { blocks: b.clone() },
    };
    serde_json::to_value(StructureJson {
        mask: Some(mask),
        row_blocks: None,
        col_blocks: None,
        y: Some(y),
    })
    .expect("structure serializes")
}

/// Either `{"mask": [[bool|0|1, ...], ...]}` or
/// `{"row_blocks": [...], "col_blocks": [...]}`, with optional `"y"`.
pub fn structure_from_json(v: &Value) -> Result<StructureSpec> {
    let raw: StructureJson = parse("structure", v)?;
    let base = match (&raw.mask, &raw.row_blocks, &raw.col_blocks) {
        (Some(mask), None, None) => {
            let m = mask.len();
            let p = mask.first().map_or(0, Vec::len);
            if mask.iter().any(|r| r.len() != p) {
                return Err(Error::Parse("\"mask\": rows have different lengths".into()));
            }
            let flat = mask
                .iter()
                .flatten()
                .map(|x| match x {
                    Value::Bool(b) => Ok(*b),
                    Value::Number(n) if n.as_f64() == Some(0.0) => Ok(false),
                    Value::Number(n) if n.as_f64() == Some(1.0) => Ok(true),
                    _ => Err(Error::Parse("\"mask\": entries must be booleans or 0/1".into())),
                })
                .collect::<Result<Vec<bool>>>()?;
            StructureSpec::new(m, p, flat, YConstraint::None)?
        }
        (None, Some(r), Some(c)) => StructureSpec::block_diagonal(r, c)?,
        _ => {
            return Err(Error::Parse(
                "structure: give either \"mask\" or both \"row_blocks\" and \"col_blocks\"".into(),
            ))
        }
    };
    let y = match raw.y {
        Some(YJson::None) => YConstraint::None,
        Some(YJson::Diagonal) => YConstraint::Diagonal,
        Some(YJson::BlockDiagonal { blocks }) => YConstraint::BlockDiagonal(blocks),
        None => base.y_constraint.clone(),
    };
    StructureSpec::new(base.m, base.p, base.mask, y)
}

pub fn synthesis_result_to_json(r: &SynthesisResult) -> Value {
    json!({
        "K": mat_to_json(&r.k),
        "gamma": r.gamma,
        "Y": mat_to_json(&r.y),
        "Z": mat_to_json(&r.z),
        "multiplier": { "label": r.multiplier_label, "theta": r.multiplier },
        "certificate": r.certificate.as_ref().map(mat_to_json),
        "analysis_gamma": r.analysis_gamma,
        "status": r.status,
    })
}

#[derive(Debug, Deserialize)]
struct MultiplierJson {
    #[serde(default)]
    label: String,
    #[serde(default)]
    theta: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct SynthesisJson {
    #[serde(rename = "K")]
    k: MatJson,
    gamma: f64,
    #[serde(rename = "Y")]
    y: MatJson,
    #[serde(rename = "Z")]
    z: MatJson,
    multiplier: MultiplierJson,
    #[serde(default)]
    certificate: Option<MatJson>,
    #[serde(default)]
    analysis_gamma: Option<f64>,
    status: String,
}

pub fn synthesis_result_from_json(v: &Value) -> Result<SynthesisResult> {
    let raw: SynthesisJson = parse("synthesis result", v)?;
    Ok(SynthesisResult {
        k: mat_from_json("K", &raw.k)?,
        y: mat_from_json("Y", &raw.y)?,
        z: mat_from_json("Z", &raw.z)?,
        gamma: raw.gamma,
        multiplier: raw.multiplier.theta,
        multiplier_label: raw.multiplier.label,
        certificate: raw
            .certificate
            .as_ref()
            .map(|c| mat_from_json("certificate", c))
            .transpose()?,
        analysis_gamma: raw.analysis_gamma,
        status: raw.status,
    })
}

pub fn analysis_result_to_json(r: &AnalysisResult) -> Value {
    json!({
        "gamma": r.gamma,
        "P": mat_to_json(&r.p),
        "theta": r.theta,
        "contraction_rate": r.contraction_rate,
        "min_eig": r.min_eig,
        "status": r.status.as_str(),
    })
}

/// Reference to a built-in instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExampleRef {
    Pendulum {
        beta: f64,
    },
    PowerSystem {
        beta: f64,
        mu: Vec<f64>,
        #[serde(rename = "L")]
        l: Vec<f64>,
    },
    Saturated {
        seed: u64,
        delta: f64,
    },
    Random {
        seed: u64,
        n: usize,
        m: usize,
        p: usize,
        n_w: usize,
    },
}

/// Self-contained problem document consumed by the command-line tool.
#[derive(Debug, Clone, Default)]
pub struct ProblemDoc {
    pub example: Option<ExampleRef>,
    pub plant: Option<StateSpace>,
    pub lfr: Option<Lfr>,
    pub cone: Option<ConeJson>,
    pub delta: Option<DeltaJson>,
    pub k: Option<Mat>,
    pub eps: Option<f64>,
    pub signal: Option<SignalJson>,
    pub x0: Option<Vec<f64>>,
    pub eta0: Option<Vec<f64>>,
    pub t_final: Option<f64>,
    pub structure: Option<StructureSpec>,
}

const DOC_KEYS: [&str; 12] = [
    "example",
    "plant",
    "lfr",
    "cone",
    "delta",
    "K",
    "eps",
    "signal",
    "x0",
    "eta0",
    "t_final",
    "structure",
];

impl ProblemDoc {
    pub fn to_json(&self) -> Value {
        let mut o = serde_json::Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.insert(k.to_string(), v);
            }
        };
        put(
            "example",
            self.example
                .as_ref()
                .map(|e| serde_json::to_value(e).expect("example serializes")),
        );
        put("plant", self.plant.as_ref().map(state_space_to_json));
        put("lfr", self.lfr.as_ref().map(lfr_to_json));
        put("cone", self.cone.as_ref().map(ConeJson::to_json));
        put("delta", self.delta.as_ref().map(DeltaJson::to_json));
        put("K", self.k.as_ref().map(|k| json!(mat_to_json(k))));
        put("eps", self.eps.map(|v| json!(v)));
        put("signal", self.signal.as_ref().map(SignalJson::to_json));
        put("x0", self.x0.as_ref().map(|v| json!(v)));
        put("eta0", self.eta0.as_ref().map(|v| json!(v)));
        put("t_final", self.t_final.map(|v| json!(v)));
        put("structure", self.structure.as_ref().map(structure_to_json));
        Value::Object(o)
    }

    /// Parse a document. A bare state-space or LFR object is accepted as a
    /// document holding only that entry; a synthesis result contributes `K`.
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("top level must be a JSON object".into()))?;
        if obj.contains_key("A") {
            return Ok(ProblemDoc {
                plant: Some(state_space_from_json(v)?),
                ..Default::default()
            });
        }
        if obj.contains_key("F") {
            return Ok(ProblemDoc {
                lfr: Some(lfr_from_json(v)?),
                ..Default::default()
            });
        }
        if obj.contains_key("gamma") && obj.contains_key("Y") {
            let r = synthesis_result_from_json(v)?;
            return Ok(ProblemDoc {
                k: Some(r.k),
                ..Default::default()
            });
        }
        if let Some(k) = obj.keys().find(|k| !DOC_KEYS.contains(&k.as_str())) {
            return Err(Error::Parse(format!("unknown key \"{k}\"")));
        }
        let num = |key: &str| -> Result<Option<f64>> {
            obj.get(key)
                .map(|x| {
                    x.as_f64()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse(format!("\"{key}\": expected a finite number")))
                })
                .transpose()
        };
        let vec = |key: &str| -> Result<Option<Vec<f64>>> { obj.get(key).map(|x| parse(key, x)).transpose() };
        Ok(ProblemDoc {
            example: obj.get("example").map(|x| parse("example", x)).transpose()?,
            plant: obj.get("plant").map(state_space_from_json).transpose()?,
            lfr: obj.get("lfr").map(lfr_from_json).transpose()?,
            cone: obj.get("cone").map(ConeJson::from_json).transpose()?,
            delta: obj.get("delta").map(DeltaJson::from_json).transpose()?,
            k: obj
                .get("K")
                .map(|x| parse::<MatJson>("K", x).and_then(|m| mat_from_json("K", &m)))
                .transpose()?,
            eps: num("eps")?,
            signal: obj.get("signal").map(SignalJson::from_json).transpose()?,
            x0: vec("x0")?,
            eta0: vec("eta0")?,
            t_final: num("t_final")?,
            structure: obj.get("structure").map(structure_from_json).transpose()?,
        })
    }
}

/// Materialize a built-in instance as a problem document.
pub fn example_doc(ex: &ExampleRef) -> Result<ProblemDoc> {
    let s = |v: f64| Mat::from_element(1, 1, v);
    let mut doc = ProblemDoc {
        example: Some(ex.clone()),
        ..Default::default()
    };
    match ex {
        ExampleRef::Pendulum { beta } => {
            examples::pendulum_plant(*beta)?;
            doc.k = Some(s(1.0));
            doc.eps = Some(0.05);
            doc.signal = Some(SignalJson::Constant { value: vec![1.0] });
            doc.x0 = Some(vec![0.0]);
            doc.eta0 = Some(vec![0.0]);
            doc.t_final = Some(40.0 / 0.05);
        }
        ExampleRef::PowerSystem { beta, mu, l } => {
            let spec = examples::PowerSystemSpec::new(*beta, mu, l)?;
            let model = examples::power_system_lfr(&spec)?;
            doc.lfr = Some(model.lfr);
            doc.cone = Some(ConeJson::Sector {
                mu: spec.mu_total(),
                l: spec.l_total(),
            });
            doc.delta = Some(DeltaJson::Linear {
                m: vec![vec![0.5 * (spec.mu_total() + spec.l_total())]],
            });
            doc.k = Some(s(1.0));
            doc.signal = Some(SignalJson::Constant { value: vec![1.0] });
            doc.eta0 = Some(vec![0.0]);
            doc.t_final = Some(20.0 * beta / spec.mu_total());
        }
        ExampleRef::Saturated { seed, delta } => {
            let e = examples::saturated_uncertain_example(*seed, *delta)?;
            doc.plant = Some(e.plant.clone());
            doc.lfr = Some(e.lfr.clone());
            doc.cone = Some(ConeJson::Daug {
                parts: vec![
                    ConeJson::Sector { mu: 0.0, l: 1.0 },
                    ConeJson::Parametric { dim: 2, skew: false },
                ],
            });
            doc.delta = Some(DeltaJson::Diagonal {
                entries: vec![
                    ScalarMapJson::Saturation,
                    ScalarMapJson::Gain { value: *delta },
                    ScalarMapJson::Gain { value: *delta },
                ],
            });
            doc.eps = Some(0.01);
            doc.signal = Some(SignalJson::SequentialSteps {
                dim: e.dc.n_w(),
                period: 200.0,
            });
            doc.t_final = Some(200.0 * (e.dc.n_w() + 1) as f64);
        }
        ExampleRef::Random { seed, n, m, p, n_w } => {
            doc.plant = Some(crate::model::random_stable_system(*seed, *n, *m, *p, *n_w)?);
            doc.eps = Some(0.01);
            doc.signal = Some(SignalJson::SequentialSteps {
                dim: *n_w,
                period: 200.0,
            });
            doc.t_final = Some(200.0 * (*n_w + 1) as f64);
        }
    }
    Ok(doc)
}

pub fn write_sim_csv<W: Write>(out: &mut W, r: &SimResult, include_state: bool) -> std::io::Result<()> {
    let (p, m, n) = (r.eta.nrows(), r.u.nrows(), r.x.nrows());
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("eta_{i}")));
    header.extend((1..=p).map(|i| format!("e_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    if include_state {
        header.extend((1..=n).map(|i| format!("x_{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for (k, t) in r.t.iter().enumerate() {
        let mut row = vec![format!("{t:.17e}")];
        row.extend(r.eta.column(k).iter().map(|v| format!("{v:.17e}")));
        row.extend(r.e.column(k).iter().map(|v| format!("{v:.17e}")));
        row.extend(r.u.column(k).iter().map(|v| format!("{v:.17e}")));
        if include_state {
            row.extend(r.x.column(k).iter().map(|v| format!("{v:.17e}")));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_freq_csv<W: Write>(out: &mut W, fr: &FreqResponse) -> std::io::Result<()> {
    writeln!(out, "omega,sigma_max")?;
    for (o, s) in fr.omega.iter().zip(&fr.sigma_max) {
        writeln!(out, "{o:.17e},{s:.17e}")?;
    }
    Ok(())
}

/// Parse a CSV written by [`write_sim_csv`] or [`write_freq_csv`] into its
/// header and numeric rows.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row: Vec<f64> = l
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("CSV value {x:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != header.len() {
                return Err(Error::Parse("CSV row length differs from header".into()));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_stable_system;

    #[test]
    fn state_space_round_trip() {
        let ss = random_stable_system(4, 4, 2, 2, 3).unwrap();
        let v = state_space_to_json(&ss);
        let back = state_space_from_json(&v).unwrap();
        assert_eq!(back, ss);
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(state_space_from_json(&parse_json(&text).unwrap()).unwrap(), ss);
    }

    #[test]
    fn missing_disturbance_defaults() {
        let v = json!({"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]], "Dw": [[2.0, 0.0]]});
        let ss = state_space_from_json(&v).unwrap();
        assert_eq!(ss.bw, Mat::zeros(1, 2));
        let v = json!({"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]});
        assert_eq!(state_space_from_json(&v).unwrap().n_w(), 0);
    }

    #[test]
    fn errors_name_the_key() {
        let v = json!({"A": [[-1.0]], "B": [[1.0]], "C": [[1.0]]});
        let e = state_space_from_json(&v).unwrap_err().to_string();
        assert!(e.contains("`D`"), "{e}");
        let v = json!({"A": [[-1.0, 0.0], [1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]});
        let e = state_space_from_json(&v).unwrap_err().to_string();
        assert!(e.contains("\"A\""), "{e}");
        assert!(parse_json("{\"A\": [[1.0]").is_err());
    }

    #[test]
    fn lfr_round_trip_with_empty_channels() {
        let dc = crate::model::DcGains::new(Mat::identity(2, 2), Mat::from_element(2, 1, 1.0)).unwrap();
        let l = Lfr::lti(&dc);
        let back = lfr_from_json(&lfr_to_json(&l)).unwrap();
        assert_eq!(back.h.shape(), (0, 2));
        assert_eq!(back.g.shape(), (2, 0));
        assert_eq!(back.f, l.f);
        let e = examples::saturated_uncertain_example(3, 0.5).unwrap();
        let back = lfr_from_json(&lfr_to_json(&e.lfr)).unwrap();
        assert_eq!(back.j, e.lfr.j);
    }

    #[test]
    fn cones_resolve() {
        let c = ConeJson::from_json(&json!({"kind": "sector", "mu": 1.0, "L": 1.0})).unwrap();
        assert!(c.pair().unwrap().dual.is_none());
        let d = ConeJson::from_json(&json!({"kind": "daug", "parts": [
            {"kind": "sector", "mu": 0.5, "L": 2.0}, {"kind": "parametric", "dim": 2}]}))
        .unwrap();
        assert_eq!(d.primal().unwrap().dim_p, 3);
        assert!(d.pair().unwrap().dual.is_some());
        assert_eq!(d.sector_shifts(), vec![0.5, 0.0, 0.0]);
        assert_eq!(d.shifted_to_zero().sector_shifts(), vec![0.0, 0.0, 0.0]);
        assert_eq!(ConeJson::from_json(&d.to_json()).unwrap(), d);
        assert!(ConeJson::from_json(&json!({"kind": "cubic"})).is_err());
    }

    #[test]
    fn structure_forms() {
        let s = structure_from_json(&json!({"row_blocks": [1, 1], "col_blocks": [1, 1]})).unwrap();
        assert!(s.is_free(0, 0) && !s.is_free(0, 1));
        let back = structure_from_json(&structure_to_json(&s)).unwrap();
        assert_eq!(back, s);
        let m = structure_from_json(&json!({"mask": [[1, 0], [true, 1]], "y": {"kind": "diagonal"}})).unwrap();
        assert!(m.is_free(1, 0));
        assert_eq!(m.y_constraint, YConstraint::Diagonal);
        assert!(structure_from_json(&json!({"mask": [[2]]})).is_err());
    }

    #[test]
    fn signal_and_delta() {
        let s = SignalJson::from_json(&json!({"kind": "steps", "knots": [[0.0, [0.0]], [1.0, [2.0]]]})).unwrap();
        assert_eq!(s.build().unwrap().eval(1.5)[0], 2.0);
        assert!(SignalJson::Steps {
            knots: vec![(1.0, vec![0.0])]
        }
        .build()
        .is_err());
        let d = DeltaJson::Diagonal {
            entries: vec![ScalarMapJson::Saturation, ScalarMapJson::Gain { value: -0.5 }],
        };
        let out = d.build().unwrap().eval(&Vec64::from_vec(vec![3.0, 2.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn docs_round_trip() {
        for ex in [
            ExampleRef::Pendulum { beta: 2.0 },
            ExampleRef::PowerSystem {
                beta: 1.0,
                mu: vec![1.0],
                l: vec![1.0],
            },
            ExampleRef::Saturated { seed: 1, delta: 0.5 },
            ExampleRef::Random {
                seed: 2,
                n: 5,
                m: 2,
                p: 2,
                n_w: 2,
            },
        ] {
            let doc = example_doc(&ex).unwrap();
            let v = doc.to_json();
            let back = ProblemDoc::from_json(&v).unwrap();
            assert_eq!(back.to_json(), v);
        }
        assert!(ProblemDoc::from_json(&json!({"plnt": {}}))
            .unwrap_err()
            .to_string()
            .contains("plnt"));
    }

    #[test]
    fn csv_layout() {
        let pi = |u: &Vec64, w: &Vec64| Ok(u + w);
        let w = SignalSpec::constant(vec![1.0]);
        let r = crate::sim::simulate_reduced(
            &pi,
            &Mat::identity(1, 1),
            &w,
            &Vec64::zeros(1),
            1.0,
            &Default::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_sim_csv(&mut buf, &r, false).unwrap();
        let (h, rows) = read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(h, vec!["t", "eta_1", "e_1", "u_1"]);
        assert_eq!(rows.len(), r.len());
        assert_eq!(rows[5][1], r.eta[(0, 5)]);
    }
}
