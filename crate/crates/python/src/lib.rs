//! Python bindings for the `tsrate` library.
//!
//! Functions take and return plain Python values (lists, tuples, dicts).
//! Library errors surface as `ValueError` for bad input and `RuntimeError`
//! for everything else.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tsrate::metrics::{self, Scope};
use tsrate::perturb::{self, SlopeSignProvider};
use tsrate::{imaging, pipeline, rating, stats, Direction, Error, Perturbation, RawScore, RatingTable, RunConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::LengthMismatch { .. }
        | Error::NonFinite { .. }
        | Error::Config { .. }
        | Error::Degenerate(_)
        | Error::Parse { .. }
        | Error::UnknownConfounder(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_perturbation(s: &str) -> PyResult<Perturbation> {
    s.parse().map_err(to_py)
}

fn parse_scope(s: &str) -> PyResult<Scope> {
    match s {
        "company" => Ok(Scope::Company),
        "industry" => Ok(Scope::Industry),
        "none" | "" => Ok(Scope::None),
        other => Err(PyValueError::new_err(format!("unknown confounder scope `{other}`"))),
    }
}

fn parse_direction(s: Option<&str>) -> PyResult<Option<Direction>> {
    s.map(|d| d.parse::<Direction>().map_err(to_py)).transpose()
}

fn scope_str(s: Scope) -> &'static str {
    match s {
        Scope::Company => "company",
        Scope::Industry => "industry",
        Scope::None => "none",
    }
}

/// metric -> perturbation -> [(model_id, score, rating)]
type TableDict = BTreeMap<String, BTreeMap<String, Vec<(String, f64, usize)>>>;

fn tables_dict(tables: &[RatingTable]) -> TableDict {
    tables
        .iter()
        .map(|t| {
            let per = t
                .perturbations
                .iter()
                .map(|(p, entries)| {
                    let rows = entries.iter().map(|e| (e.model_id.clone(), e.score, e.rating)).collect();
                    (p.as_str().to_owned(), rows)
                })
                .collect();
            (t.metric.clone(), per)
        })
        .collect()
}

#[pyfunction]
fn smape(truth: Vec<f64>, prediction: Vec<f64>) -> PyResult<f64> {
    metrics::smape(&truth, &prediction).map_err(to_py)
}

#[pyfunction]
fn mase(train: Vec<f64>, truth: Vec<f64>, prediction: Vec<f64>) -> PyResult<f64> {
    metrics::mase(&train, &truth, &prediction).map_err(to_py)
}

#[pyfunction]
fn sign_accuracy(truth: Vec<f64>, prediction: Vec<f64>, anchor: f64) -> PyResult<f64> {
    metrics::sign_accuracy(&truth, &prediction, anchor).map_err(to_py)
}

/// Pooled two-sample t-test. Returns `(t, dof, p_two_sided)`.
#[pyfunction]
fn students_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::students_t(&a, &b).map_err(to_py)?;
    Ok((r.t, r.dof, r.p_two_sided))
}

#[pyfunction]
fn t_critical(ci: f64, dof: f64) -> PyResult<f64> {
    stats::t_critical(ci, dof).map_err(to_py)
}

/// Weighted rejection score over named residual groups.
#[pyfunction]
#[pyo3(signature = (groups, cis=None, weights=None))]
fn wrs(groups: Vec<(String, Vec<f64>)>, cis: Option<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    let mut cfg = metrics::WrsConfig::default();
    if let Some(c) = cis {
        cfg.cis = c;
    }
    if let Some(w) = weights {
        cfg.weights = w;
    }
    let borrowed: Vec<(&str, Vec<f64>)> = groups.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    metrics::wrs_groups(&borrowed, &cfg).map_err(to_py)
}

/// Matched and observational effect of `treated` on `outcome` given one
/// categorical confounder.
#[pyfunction]
fn estimate_effect(
    py: Python<'_>,
    treated: Vec<bool>,
    confounder: Vec<String>,
    outcome: Vec<f64>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let conf: Vec<&str> = confounder.iter().map(String::as_str).collect();
    let est = metrics::estimate_effect(&treated, &conf, &outcome).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("ape", est.ape())?;
    d.set_item("ape_signed", est.ape_signed)?;
    d.set_item("observational", est.ape_observational())?;
    d.set_item("pie_percent", est.pie_percent())?;
    d.set_item("n_treated", est.n_treated)?;
    d.set_item("n_control", est.n_control)?;
    d.set_item("n_matched", est.n_matched)?;
    d.set_item("unmatchable", est.unmatchable)?;
    Ok(d.unbind())
}

/// Group boundaries as `(start, end)` pairs; larger groups come first.
#[pyfunction]
fn array_split(n: usize, levels: usize) -> PyResult<Vec<(usize, usize)>> {
    let ranges = rating::array_split(n, levels).map_err(to_py)?;
    Ok(ranges.into_iter().map(|r| (r.start, r.end)).collect())
}

/// Rate raw scores given as `(metric, model_id, perturbation, confounder, value)`
/// tuples. Returns `{metric: {perturbation: [(model_id, score, rating)]}}`.
#[pyfunction]
#[pyo3(signature = (scores, levels=rating::DEFAULT_LEVELS, direction=None))]
fn rate(scores: Vec<(String, String, String, String, f64)>, levels: usize, direction: Option<&str>) -> PyResult<TableDict> {
    let raw = scores
        .into_iter()
        .map(|(metric, model_id, p, c, value)| {
            Ok(RawScore {
                metric,
                model_id,
                perturbation: parse_perturbation(&p)?,
                confounder: parse_scope(&c)?,
                value,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let tables = pipeline::rate_scores(&raw, levels, parse_direction(direction)?).map_err(to_py)?;
    Ok(tables_dict(&tables))
}

#[pyfunction]
#[pyo3(signature = (x, s, omega0=imaging::DEFAULT_OMEGA0))]
fn morlet(x: f64, s: f64, omega0: f64) -> PyResult<(f64, f64)> {
    let z = imaging::morlet(x, s, omega0).map_err(to_py)?;
    Ok((z.re, z.im))
}

/// Continuous wavelet magnitudes, one row per scale.
#[pyfunction]
#[pyo3(signature = (values, scales, omega0=imaging::DEFAULT_OMEGA0))]
fn cwt_magnitude(values: Vec<f64>, scales: Vec<f64>, omega0: f64) -> PyResult<Vec<Vec<f64>>> {
    let spec = imaging::cwt(&values, &scales, omega0).map_err(to_py)?;
    Ok(spec.magnitudes)
}

/// Apply P1, P2 or P3 to a clean history. Missing points come back as `None`.
#[pyfunction]
#[pyo3(signature = (kind, history, period, phase=0))]
fn perturb_numeric(kind: &str, history: Vec<f64>, period: usize, phase: usize) -> PyResult<Vec<Option<f64>>> {
    let some = |v: Vec<f64>| v.into_iter().map(Some).collect();
    match parse_perturbation(kind)? {
        Perturbation::P0 => Ok(some(history)),
        Perturbation::P1 => perturb::drop_to_zero_with_phase(&history, period, phase).map(some).map_err(to_py),
        Perturbation::P2 => perturb::halve_with_phase(&history, period, phase).map(some).map_err(to_py),
        Perturbation::P3 => perturb::missing_with_phase(&history, period, phase).map_err(to_py),
        other => Err(PyValueError::new_err(format!("{other} is not a numeric perturbation"))),
    }
}

/// Run the pipeline for a TOML config. Writes all reports when `out_dir` is
/// given. Returns counts, raw scores and rating tables.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None, levels=None))]
fn run(
    py: Python<'_>,
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    levels: Option<usize>,
) -> PyResult<Py<pyo3::types::PyDict>> {
    let mut cfg = RunConfig::from_path(&config_path).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = levels {
        cfg.metrics.levels = l;
    }
    let issues = cfg.validate();
    if !issues.is_empty() {
        let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
        return Err(PyValueError::new_err(lines.join("; ")));
    }
    let report = py
        .detach(|| {
            let report = pipeline::run(&cfg, &SlopeSignProvider::default())?;
            if let Some(dir) = &out_dir {
                pipeline::write_report(&report, &cfg, dir)?;
            }
            Ok::<_, Error>(report)
        })
        .map_err(to_py)?;
    let scores: Vec<(String, String, String, &str, f64)> = report
        .scores
        .iter()
        .map(|s| {
            (s.metric.clone(), s.model_id.clone(), s.perturbation.as_str().to_owned(), scope_str(s.confounder), s.value)
        })
        .collect();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("windows", report.assignments.len())?;
    d.set_item("predictions", report.predictions.len())?;
    d.set_item("scores", scores)?;
    d.set_item("ratings", tables_dict(&report.ratings))?;
    Ok(d.unbind())
}

#[pymodule]
fn tsrate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("DEFAULT_LEVELS", rating::DEFAULT_LEVELS)?;
    m.add_function(wrap_pyfunction!(smape, m)?)?;
    m.add_function(wrap_pyfunction!(mase, m)?)?;
    m.add_function(wrap_pyfunction!(sign_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(students_t, m)?)?;
    m.add_function(wrap_pyfunction!(t_critical, m)?)?;
    m.add_function(wrap_pyfunction!(wrs, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_effect, m)?)?;
    m.add_function(wrap_pyfunction!(array_split, m)?)?;
    m.add_function(wrap_pyfunction!(rate, m)?)?;
    m.add_function(wrap_pyfunction!(morlet, m)?)?;
    m.add_function(wrap_pyfunction!(cwt_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_numeric, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
