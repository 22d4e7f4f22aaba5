//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::bayesian::{self, BayesKernelConfig};
use crate::classical::{self, BoundReport, Estimator};
use crate::error::{Error, Result};
use crate::estimators;
use crate::io;
use crate::quantum::{self, ScoreOperators};
use crate::repetition::{self, BinaryModel, Repeated};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const OVERRIDE_KEYS: &[&str] = &[
    "d", "sigma_p", "n", "m", "m_list", "n_list", "eps_grid", "weights", "params", "bias", "seed",
    "shots",
];

#[derive(Debug, Parser)]
#[command(
    name = "global-score",
    version,
    about = "Global-score precision bounds on finite parameter grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON configuration or model file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file (a directory for fig1). Reports go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for Monte-Carlo cross-checks; recorded in the provenance.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Replace a config value, e.g. `--override d=0.3` or `--override m_list=[1,5]`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bounds for a classical model file or generator.
    Classical {
        #[arg(long, value_enum)]
        estimator: Option<EstimatorKind>,
    },
    /// Quantum bounds for a state family.
    Quantum,
    /// Quantum bounds plus the optimal parameter-independent measurement.
    Povm,
    /// Repetition sweeps of the binary model.
    Fig1,
    /// Kernel-width sweep of the Bayesian bound.
    Fig2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Mle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub gcr: f64,
    pub gbar: f64,
    pub fg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: Value,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub bounds: Bounds,
    pub diagnostics: Map<String, Value>,
    pub provenance: Provenance,
}

impl ReportDocument {
    /// Parses and checks a report: finite bounds, neither partial level above
    /// the fully global one.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        let Bounds { gcr, gbar, fg } = doc.bounds;
        let slack = 1e-9 * (1.0 + fg.abs());
        if ![gcr, gbar, fg].iter().all(|v| v.is_finite() && *v >= 0.0)
            || gcr > fg + slack
            || gbar > fg + slack
        {
            return Err(Error::validation(format!(
                "report bounds out of order: gcr={gcr}, gbar={gbar}, fg={fg}"
            )));
        }
        Ok(doc)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.  Errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing any files and returning the text meant
/// for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let seed = match cli.seed {
        Some(s) => Some(s),
        None => field::<u64>(&config, "seed")?,
    };
    match &cli.command {
        Command::Classical { estimator } => {
            let doc = cmd_classical(&config, *estimator, seed)?;
            emit_report(&doc, cli.out.as_deref())
        }
        Command::Quantum => emit_report(&cmd_quantum(&config, false, seed)?, cli.out.as_deref()),
        Command::Povm => emit_report(&cmd_quantum(&config, true, seed)?, cli.out.as_deref()),
        Command::Fig1 => {
            let (ab, c) = cmd_fig1(&config)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("fig1_ab.csv"), &ab)?;
            std::fs::write(dir.join("fig1_c.csv"), &c)?;
            Ok(format!(
                "wrote {} and {}\n",
                dir.join("fig1_ab.csv").display(),
                dir.join("fig1_c.csv").display()
            ))
        }
        Command::Fig2 => {
            let (csv, summary) = cmd_fig2(&config)?;
            match &cli.out {
                Some(path) => {
                    std::fs::write(path, csv)?;
                    Ok(summary + "\n")
                }
                None => {
                    eprintln!("{summary}");
                    Ok(csv)
                }
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Value> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
            let origin = path.display().to_string();
            let value = io::parse_json(&text, &origin)?;
            if !value.is_object() {
                return Err(Error::validation(format!(
                    "{origin}: top level must be an object"
                )));
            }
            // Parsed here as well so that model errors carry file line numbers.
            if matches!(cli.command, Command::Classical { .. }) {
                io::classical_model_from_json(&text, &origin)?;
            }
            value
        }
        None => match cli.command {
            Command::Fig1 | Command::Fig2 => Value::Object(Map::new()),
            _ => return Err(Error::validation("--config is required for this command")),
        },
    };
    apply_overrides(&mut config, &cli.overrides)?;
    Ok(config)
}

/// Applies `key=value` overrides; values are parsed as JSON when possible.
pub fn apply_overrides(config: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("override {item:?} is not key=value")))?;
        let key = key.trim();
        if !OVERRIDE_KEYS.contains(&key) {
            return Err(Error::validation(format!(
                "unknown override key {key:?} (allowed: {})",
                OVERRIDE_KEYS.join(", ")
            )));
        }
        let value: Value = serde_json::from_str(raw.trim()).map_err(|_| {
            Error::validation(format!(
                "override {key}: {raw:?} is not a number or JSON array"
            ))
        })?;
        let ok = match key {
            "d" => value.as_f64().is_some_and(|d| d.abs() < 1.0),
            "sigma_p" => value.as_f64().is_some_and(|s| s > 0.0),
            "n" | "m" | "seed" | "shots" => value.as_u64().is_some(),
            "m_list" | "n_list" => value
                .as_array()
                .is_some_and(|a| a.iter().all(|v| v.as_u64().is_some())),
            _ => value.is_array(),
        };
        if !ok {
            return Err(Error::validation(format!(
                "override {key}: value {raw:?} out of range"
            )));
        }
        config
            .as_object_mut()
            .ok_or_else(|| Error::validation("config must be a JSON object"))?
            .insert(key.to_string(), value);
    }
    Ok(())
}

fn emit_report(doc: &ReportDocument, out: Option<&Path>) -> Result<String> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match out {
        Some(path) => {
            std::fs::write(path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

fn provenance(config: &Value, seed: Option<u64>) -> Provenance {
    Provenance {
        config: config.clone(),
        version: VERSION.to_string(),
        seed,
    }
}

fn bounds_of(r: &BoundReport) -> Bounds {
    Bounds {
        gcr: r.gcr,
        gbar: r.gbar,
        fg: r.fg,
    }
}

fn field<T: for<'de> Deserialize<'de>>(config: &Value, key: &str) -> Result<Option<T>> {
    match config.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::validation(format!("{key}: {e}"))),
    }
}

fn saturating_value(r: &BoundReport) -> Value {
    r.saturating_a
        .as_ref()
        .map_or(Value::Null, |a| json!(a.columns()))
}

pub fn cmd_classical(
    config: &Value,
    estimator: Option<EstimatorKind>,
    seed: Option<u64>,
) -> Result<ReportDocument> {
    let model = io::classical_model_from_value(config)?;
    let g = classical::local_scores(&model);
    let (est, est_name) = match field::<Vec<f64>>(config, "estimator")? {
        Some(v) if estimator.is_none() => {
            if v.len() != model.n_outcomes() {
                return Err(Error::validation(format!(
                    "estimator has {} entries for {} outcomes",
                    v.len(),
                    model.n_outcomes()
                )));
            }
            (Estimator::new(v), "supplied")
        }
        _ => (estimators::mle(&model).to_estimator(), "mle"),
    };
    let report = classical::bound_report(&model, &g, &est)?;
    let mut diag = Map::new();
    diag.insert("n_params".into(), json!(model.n_params()));
    diag.insert("n_outcomes".into(), json!(model.n_outcomes()));
    diag.insert(
        "estimator".into(),
        json!({"kind": est_name, "values": est.values()}),
    );
    diag.insert("ranks".into(), json!(report.ranks));
    diag.insert("saturating_a".into(), saturating_value(&report));
    if estimator == Some(EstimatorKind::Mle) || est_name == "supplied" {
        let var = estimators::exact_variance(&model, &est)?;
        diag.insert("weighted_variance".into(), json!(var));
        diag.insert(
            "saturation".into(),
            json!(classical::check_saturation(&model, &g, &est)?),
        );
        diag.insert(
            "saturating_a_exists".into(),
            json!(classical::check_existence(&model, &g, &est)?),
        );
        if let Some(seed) = seed {
            let shots = field::<u64>(config, "shots")?.unwrap_or(100_000);
            diag.insert(
                "monte_carlo_variance".into(),
                json!(estimators::mc_variance(&model, &est, shots, seed)?),
            );
        }
    }
    Ok(ReportDocument {
        bounds: bounds_of(&report),
        diagnostics: diag,
        provenance: provenance(config, seed),
    })
}

pub fn cmd_quantum(config: &Value, with_povm: bool, seed: Option<u64>) -> Result<ReportDocument> {
    let family = io::family_from_value(config)?;
    let bias = io::bias_from_value(config)?;
    let scores = ScoreOperators::local(&family);
    let report = quantum::q_bounds(&family, &scores, &bias)?;
    let mut diag = Map::new();
    diag.insert("dim".into(), json!(family.dim()));
    diag.insert("ranks".into(), json!(report.ranks));
    diag.insert("saturating_a".into(), saturating_value(&report));
    if with_povm {
        let opt = quantum::optimal_povm(&family, &scores, &bias)?;
        let check = quantum::verify_quantum_optimality(&family, &scores, &opt.povm, &bias)?;
        let (induced, g) = quantum::induced_model(&family, &opt.povm, &scores)?;
        let b = bias
            .common()
            .expect("optimal_povm accepts only a common bias")
            .to_vec();
        let info = (0..family.n())
            .map(|i| classical::info_matrix(&induced, &g, i))
            .collect::<Result<Vec<_>>>()?;
        let sys =
            classical::ScoreSystem::new(family.weights().to_vec(), info, vec![b; family.n()])?;
        let induced_report = sys.report()?;
        diag.insert("m_fg".into(), io::matrix_to_value(&opt.m_fg));
        diag.insert("m_fg_eigenvalues".into(), json!(opt.eigenvalues));
        diag.insert("coefficients".into(), json!(opt.coefficients));
        diag.insert(
            "povm".into(),
            Value::Array(
                opt.povm
                    .elements()
                    .iter()
                    .map(io::matrix_to_value)
                    .collect(),
            ),
        );
        diag.insert("induced_bounds".into(), json!(bounds_of(&induced_report)));
        diag.insert("optimality".into(), json!(check));
    }
    Ok(ReportDocument {
        bounds: bounds_of(&report),
        diagnostics: diag,
        provenance: provenance(config, seed),
    })
}

/// Full-precision float for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Returns the two CSV documents `(panels a/b, panel c)`.
pub fn cmd_fig1(config: &Value) -> Result<(String, String)> {
    let d = field::<f64>(config, "d")?.unwrap_or(0.5);
    let n = field::<usize>(config, "n")?.unwrap_or(8);
    let m_list = field::<Vec<u32>>(config, "m_list")?
        .unwrap_or_else(|| vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]);
    let n_list =
        field::<Vec<usize>>(config, "n_list")?.unwrap_or_else(|| vec![2, 4, 6, 8, 10, 12, 14, 16]);
    let m_c = field::<u32>(config, "m")?.unwrap_or(10);
    if n == 0 || n_list.contains(&0) || m_list.is_empty() || n_list.is_empty() {
        return Err(Error::validation(
            "grid sizes must be positive and sweep lists non-empty",
        ));
    }
    let weights =
        field::<Vec<f64>>(config, "weights")?.unwrap_or_else(|| classical::uniform_weights(n));
    let model = BinaryModel::sine(d, repetition::uniform_grid(n), weights)?;

    let mut ab = String::from("m,b_fg,b_gcr,b_gbar,ratio\n");
    for row in repetition::obs1_diag(Repeated::Binary(&model), &m_list)? {
        let _ = writeln!(
            ab,
            "{},{},{},{},{}",
            row.m,
            fmt_f64(row.b_fg),
            fmt_f64(row.b_gcr),
            fmt_f64(row.b_gbar),
            fmt_f64(row.ratio_fg_gcr)
        );
    }

    let mut c = String::from("n,mle_var,b_fg,b_gcr,b_gbar\n");
    for &nc in &n_list {
        let model = BinaryModel::sine(
            d,
            repetition::uniform_grid(nc),
            classical::uniform_weights(nc),
        )?;
        let est = estimators::binary_mle_table(&model, m_c)?;
        let var = estimators::count_estimator_variance(&model, m_c, &est);
        let sys = repetition::binary_score_system(&model, m_c, &est)?;
        let _ = writeln!(
            c,
            "{},{},{},{},{}",
            nc,
            fmt_f64(var),
            fmt_f64(sys.fg()?),
            fmt_f64(sys.gcr()?),
            fmt_f64(sys.gbar()?)
        );
    }
    Ok((ab, c))
}

/// Returns the CSV document and a one-line summary.
pub fn cmd_fig2(config: &Value) -> Result<(String, String)> {
    let d = field::<f64>(config, "d")?.unwrap_or(0.5);
    let sigma_p = field::<f64>(config, "sigma_p")?.unwrap_or(5.0);
    let grid = field::<Vec<f64>>(config, "eps_grid")?
        .unwrap_or_else(|| bayesian::logspace(1e-3, 20.0, 41));
    let cfg = BayesKernelConfig::new(d, sigma_p, 0.0)?;
    let curve = bayesian::sweep(&cfg, &grid)?;
    let mut csv = String::from("eps,bound,vantrees_ref\n");
    for (e, b) in curve.eps_grid.iter().zip(&curve.bounds) {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_f64(*e),
            fmt_f64(*b),
            fmt_f64(curve.vantrees_ref)
        );
    }
    let summary = format!(
        "argmax_eps={} max_bound={} vantrees={} vantrees_ref={}",
        fmt_f64(curve.argmax_eps),
        fmt_f64(curve.max_bound),
        fmt_f64(curve.vantrees),
        fmt_f64(curve.vantrees_ref)
    );
    Ok((csv, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed_and_checked() {
        let mut cfg = json!({});
        apply_overrides(&mut cfg, &["d=0.3".into(), "m_list=[1,2]".into()]).unwrap();
        assert_eq!(cfg, json!({"d": 0.3, "m_list": [1, 2]}));
        assert!(apply_overrides(&mut cfg, &["d=1.5".into()]).is_err());
        assert!(apply_overrides(&mut cfg, &["colour=3".into()]).is_err());
        assert!(apply_overrides(&mut cfg, &["n".into()]).is_err());
    }

    #[test]
    fn csv_floats_carry_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn fig1_first_row_has_unit_ratio() {
        let (ab, _) = cmd_fig1(&json!({"m_list": [1], "n_list": [2]})).unwrap();
        let row: Vec<&str> = ab.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert!((row[4].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reports_reject_broken_ordering() {
        let doc = json!({
            "bounds": {"gcr": 2.0, "gbar": 4.0, "fg": 3.0},
            "diagnostics": {},
            "provenance": {"config": {}, "version": VERSION}
        });
        assert!(ReportDocument::from_json(&doc.to_string()).is_err());
    }
}
