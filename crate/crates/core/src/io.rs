//! JSON documents: model files, state-family files and built-in generators.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Deserialize;
use serde_json::Value;

use crate::classical::{uniform_weights, DiscreteModel};
use crate::error::{Error, Result};
use crate::linalg::HermMatrix;
use crate::quantum::{planar_qubit_state, BiasSpec, StateFamily};
use crate::repetition::{product_model, BinaryModel};

/// Parses JSON text, turning syntax errors into `origin:line:col` messages.
pub fn parse_json(text: &str, origin: &str) -> Result<Value> {
    serde_json::from_str(text)
        .map_err(|e| Error::validation(format!("{origin}:{}:{}: {e}", e.line(), e.column())))
}

/// 1-based line on which element `row` of the top-level array `key` starts.
pub fn locate_row(text: &str, key: &str, row: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let start = text.find(&needle)? + needle.len();
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut seen = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut line = 1 + text[..start].matches('\n').count();
    for &ch in &bytes[start..] {
        if ch == b'\n' {
            line += 1;
        }
        if in_string {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            b'"' => in_string = true,
            b'[' => {
                depth += 1;
                if depth == 2 {
                    if seen == row {
                        return Some(line);
                    }
                    seen += 1;
                }
            }
            b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return None;
                }
            }
            _ => {}
        }
    }
    None
}

/// Prefixes `row N` validation messages with the file line of that row.
fn with_line(err: Error, text: &str, origin: &str) -> Error {
    let Error::Validation(msg) = err else {
        return err;
    };
    for key in ["probs", "derivs"] {
        let tag = format!("{key} row ");
        if let Some(pos) = msg.find(&tag) {
            let digits: String = msg[pos + tag.len()..]
                .chars()
                .take_while(|c| c.is_ascii_digit())
                .collect();
            if let Some(line) = digits.parse().ok().and_then(|r| locate_row(text, key, r)) {
                return Error::Validation(format!("{origin}:{line}: {msg}"));
            }
        }
    }
    Error::Validation(format!("{origin}: {msg}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    outcomes: Vec<Value>,
    params: Vec<f64>,
    probs: Vec<Vec<f64>>,
    #[serde(default)]
    derivs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads a tabulated model document.  Missing derivative tables are filled
/// by finite differences across the grid itself (three-point, second order).
pub fn model_from_json(text: &str, origin: &str) -> Result<DiscreteModel> {
    let value = parse_json(text, origin)?;
    model_from_value(&value).map_err(|e| with_line(e, text, origin))
}

/// Like [`model_from_json`] but also accepts a generator document and the
/// run keys of a classical config.
pub fn classical_model_from_json(text: &str, origin: &str) -> Result<DiscreteModel> {
    let value = parse_json(text, origin)?;
    classical_model_from_value(&value).map_err(|e| with_line(e, text, origin))
}

pub fn model_from_value(value: &Value) -> Result<DiscreteModel> {
    let doc: ModelDoc =
        serde_json::from_value(value.clone()).map_err(|e| Error::validation(e.to_string()))?;
    let n = doc.params.len();
    let derivs = match doc.derivs {
        Some(d) => d,
        None => grid_derivatives(&doc.params, &doc.probs)?,
    };
    let weights = doc.weights.unwrap_or_else(|| uniform_weights(n));
    DiscreteModel::new(
        doc.outcomes.iter().map(label).collect(),
        doc.params,
        doc.probs,
        derivs,
        weights,
    )
}

/// Non-uniform three-point differences of a tabulated probability grid.
pub fn grid_derivatives(params: &[f64], probs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = params.len();
    if n < 3 || probs.len() != n {
        return Err(Error::validation(
            "derivs may be omitted only for grids of at least three points",
        ));
    }
    let nx = probs[0].len();
    let stencil = |i0: usize, at: usize| -> Vec<f64> {
        let (a, b, c) = (params[i0], params[i0 + 1], params[i0 + 2]);
        let t = params[at];
        // derivative of the Lagrange interpolant through three nodes
        let la = ((t - b) + (t - c)) / ((a - b) * (a - c));
        let lb = ((t - a) + (t - c)) / ((b - a) * (b - c));
        let lc = ((t - a) + (t - b)) / ((c - a) * (c - b));
        (0..nx)
            .map(|x| la * probs[i0][x] + lb * probs[i0 + 1][x] + lc * probs[i0 + 2][x])
            .collect()
    };
    Ok((0..n)
        .map(|i| stencil(i.saturating_sub(1).min(n - 3), i))
        .collect())
}

/// `θ_k = lo + k(hi − lo)/n`: left-closed uniform grid.
pub fn left_closed_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|k| lo + k as f64 * (hi - lo) / n as f64)
        .collect()
}

fn get_f64(v: &Value, key: &str) -> Result<Option<f64>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(x) => x
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::validation(format!("{key} must be a number"))),
    }
}

fn get_vec(v: &Value, key: &str) -> Result<Option<Vec<f64>>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(x) => serde_json::from_value(x.clone())
            .map(Some)
            .map_err(|_| Error::validation(format!("{key} must be an array of numbers"))),
    }
}

fn get_usize(v: &Value, key: &str) -> Result<Option<usize>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(x) => x
            .as_u64()
            .map(|u| Some(u as usize))
            .ok_or_else(|| Error::validation(format!("{key} must be a non-negative integer"))),
    }
}

fn grid_from(cfg: &Value, default_n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let params = match get_vec(cfg, "params")? {
        Some(p) => p,
        None => {
            let n = get_usize(cfg, "n")?.unwrap_or(default_n);
            if n == 0 {
                return Err(Error::validation("n must be positive"));
            }
            let dom = get_vec(cfg, "domain")?.unwrap_or_else(|| vec![0.0, PI]);
            if dom.len() != 2 || !(dom[1] > dom[0]) {
                return Err(Error::validation("domain must be [lo, hi] with lo < hi"));
            }
            left_closed_grid(n, dom[0], dom[1])
        }
    };
    let weights = get_vec(cfg, "weights")?.unwrap_or_else(|| uniform_weights(params.len()));
    Ok((params, weights))
}

/// `{"generator": "binary_sine", "d", "n" | "params", "domain", "weights", "m"}`.
pub fn binary_sine_from_value(cfg: &Value) -> Result<BinaryModel> {
    let d = get_f64(cfg, "d")?.unwrap_or(0.5);
    let (params, weights) = grid_from(cfg, 8)?;
    BinaryModel::sine(d, params, weights)
}

/// Classical model from a config: either a generator or a tabulated table,
/// extended to `m` shots when `"m"` is present.
pub fn classical_model_from_value(cfg: &Value) -> Result<DiscreteModel> {
    let base = match cfg.get("generator").and_then(Value::as_str) {
        Some("binary_sine") => binary_sine_from_value(cfg)?.to_discrete(),
        Some(other) => {
            return Err(Error::validation(format!(
                "unknown classical generator {other:?}"
            )))
        }
        None => {
            let mut table = cfg.clone();
            if let Some(obj) = table.as_object_mut() {
                for k in ["m", "estimator", "seed", "shots"] {
                    obj.remove(k);
                }
            }
            model_from_value(&table)?
        }
    };
    match get_usize(cfg, "m")? {
        Some(m) if m > 1 => product_model(&base, m as u32),
        _ => Ok(base),
    }
}

fn complex_matrix(v: &Value, what: &str) -> Result<HermMatrix> {
    let rows: Vec<Vec<[f64; 2]>> = serde_json::from_value(v.clone())
        .map_err(|_| Error::validation(format!("{what}: expected [[[re, im], ...], ...]")))?;
    let rows: Vec<Vec<Complex64>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(|[a, b]| Complex64::new(a, b)).collect())
        .collect();
    let dim = rows.len();
    for j in 0..dim {
        for k in 0..dim {
            if rows.get(k).and_then(|r| r.get(j)).is_none() || rows[j].len() != dim {
                return Err(Error::validation(format!("{what}: matrix is not square")));
            }
            if (rows[j][k] - rows[k][j].conj()).norm() > 1e-12 {
                return Err(Error::validation(format!(
                    "{what}: matrix is not Hermitian at ({j},{k})"
                )));
            }
        }
    }
    HermMatrix::from_rows(&rows)
}

pub fn matrix_to_value(m: &HermMatrix) -> Value {
    Value::Array(
        m.to_rows()
            .into_iter()
            .map(|r| {
                Value::Array(
                    r.into_iter()
                        .map(|z| serde_json::json!([z.re, z.im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// State family from a config: `{"generator": "planar_qubit", "d", ...}` or a
/// file document with `"states"` and optional `"dstates"` /
/// `"state_generator"`.
pub fn family_from_value(cfg: &Value) -> Result<StateFamily> {
    if let Some(name) = cfg.get("generator").and_then(Value::as_str) {
        if name != "planar_qubit" {
            return Err(Error::validation(format!(
                "unknown quantum generator {name:?}"
            )));
        }
        let d = get_f64(cfg, "d")?.unwrap_or(0.5);
        let (params, weights) = grid_from(cfg, 2)?;
        return StateFamily::planar_qubit(d, params, weights);
    }
    let params =
        get_vec(cfg, "params")?.ok_or_else(|| Error::validation("state file needs \"params\""))?;
    let weights = get_vec(cfg, "weights")?.unwrap_or_else(|| uniform_weights(params.len()));
    let generator = cfg.get("state_generator");
    let gen_d = match generator {
        Some(g) => {
            let name = g.get("name").and_then(Value::as_str).unwrap_or("");
            if name != "planar_qubit" {
                return Err(Error::validation(format!(
                    "unknown state_generator {name:?}"
                )));
            }
            Some(get_f64(g, "d")?.ok_or_else(|| Error::validation("state_generator needs \"d\""))?)
        }
        None => None,
    };
    let states = match cfg.get("states") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| complex_matrix(v, &format!("states[{i}]")))
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::validation("\"states\" must be an array")),
        None => match gen_d {
            Some(d) => params.iter().map(|&t| planar_qubit_state(d, t)).collect(),
            None => {
                return Err(Error::validation(
                    "state file needs \"states\" or a \"state_generator\"",
                ))
            }
        },
    };
    if let Some(dim) = get_usize(cfg, "dim")? {
        if states.iter().any(|s| s.dim() != dim) {
            return Err(Error::validation(format!(
                "states do not match dim = {dim}"
            )));
        }
    }
    match cfg.get("dstates") {
        Some(Value::Array(items)) => {
            let dstates = items
                .iter()
                .enumerate()
                .map(|(i, v)| complex_matrix(v, &format!("dstates[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            StateFamily::new(params, weights, states, dstates)
        }
        Some(_) => Err(Error::validation("\"dstates\" must be an array")),
        None => match gen_d {
            Some(d) => {
                let fam =
                    StateFamily::from_generator(params, weights, |t| planar_qubit_state(d, t))?;
                StateFamily::new(
                    fam.params().to_vec(),
                    fam.weights().to_vec(),
                    states,
                    (0..fam.n()).map(|i| fam.dstate(i).clone()).collect(),
                )
            }
            None => Err(Error::validation(
                "\"dstates\" missing and no \"state_generator\" for finite differences",
            )),
        },
    }
}

pub fn bias_from_value(cfg: &Value) -> Result<BiasSpec> {
    let b = cfg
        .get("bias")
        .ok_or_else(|| Error::validation("config needs \"bias\""))?;
    serde_json::from_value(b.clone())
        .map_err(|_| Error::validation("\"bias\" must be a vector or a list of vectors"))
}
