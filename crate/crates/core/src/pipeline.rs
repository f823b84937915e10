//! End-to-end orchestration: data to predictions, predictions to ratings,
//! and the on-disk report layout.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Baseline, RunConfig};
use crate::error::{Error, Result};
use crate::forecast::{
    checked_predict, company_ranges, export_predictions, impute_locf, load_external_predictions, ArBaseline,
    BiasedSystem, ForecastInput, Forecaster, HttpForecaster, RandomSystem, Reject,
};
use crate::imaging::{render_lineplot, spectrogram_image, RgbImage};
use crate::metrics::{
    estimate_effect, mase, sign_accuracy, smape, summarize_accuracy, wrs, AccuracyObservation, CausalEstimate,
    Metric, RawScore, Scope,
};
use crate::perturb::{
    assign_treatments, overlay_stripe, pixel_center_black, saturation_x10, sentiment_stripe, Perturbation,
    PerturbationKind, SentimentProvider, TreatmentDistribution,
};
use crate::rating::{create_partial_order, invert_direction, rate_metric, Direction, PartialOrder, RatingTable};
use crate::series::{
    build_causal_frame, residuals, slide_windows, CausalFrame, ConfounderField, EvalWindow, LabeledSeries,
    PredictionRecord, ResidualRecord, WindowLabels,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Loaded series and their evaluation windows, sorted by window id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: Vec<LabeledSeries>,
    pub windows: Vec<EvalWindow>,
    pub labels: WindowLabels,
}

pub fn prepare(config: &RunConfig) -> Result<Dataset> {
    let series = config.data.load(&config.base_dir).map_err(|e| e.at_stage("ingest"))?;
    let mut windows = Vec::new();
    for s in &series {
        let w = slide_windows(s, config.window.n, config.window.d, config.window.stride)
            .map_err(|e| e.at_stage("window"))?;
        windows.extend(w);
    }
    windows.sort_by(|a, b| a.window_id.cmp(&b.window_id));
    let labels = WindowLabels::from_windows(&windows);
    Ok(Dataset {
        series,
        windows,
        labels,
    })
}

/// History handed to models under `p`.
pub fn perturbed_history(config: &RunConfig, window: &EvalWindow, p: Perturbation) -> Result<Vec<Option<f64>>> {
    PerturbationKind {
        tag: p,
        period: config.period(),
        phase: config.perturbations.phase,
    }
    .apply_numeric(&window.history)
}

/// Image input under `p`: the composed spectrogram, or for P6 the line plot
/// with its sentiment stripe.
pub fn window_image(
    history: &[Option<f64>],
    clean: &[f64],
    p: Perturbation,
    omega0: f64,
    provider: &dyn SentimentProvider,
) -> Result<RgbImage> {
    match p {
        Perturbation::P4 => pixel_center_black(&spectrogram_image(clean, omega0)?),
        Perturbation::P5 => Ok(saturation_x10(&spectrogram_image(clean, omega0)?)),
        Perturbation::P6 => {
            let plot = render_lineplot(clean)?;
            let stripe = sentiment_stripe(&plot, clean, provider)?;
            Ok(overlay_stripe(&plot, &stripe))
        }
        _ => spectrogram_image(&impute_locf(history)?, omega0),
    }
}

pub fn build_models(config: &RunConfig, series: &[LabeledSeries]) -> Result<Vec<Box<dyn Forecaster>>> {
    let mut models: Vec<Box<dyn Forecaster>> = Vec::new();
    for b in &config.models.baselines {
        models.push(match b {
            Baseline::Ar => Box::new(ArBaseline {
                p: config.models.ar.p,
                d_diff: config.models.ar.d_diff,
                ..ArBaseline::default()
            }),
            Baseline::Biased => Box::new(BiasedSystem {
                offsets: config.models.biased.offsets.clone(),
                default_offset: config.models.biased.default_offset,
                ..BiasedSystem::default()
            }),
            Baseline::Random => Box::new(RandomSystem::new(company_ranges(series), config.seed)),
        });
    }
    for h in &config.models.http {
        models.push(Box::new(HttpForecaster::new(h.clone())?));
    }
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub distribution: String,
    pub window_id: String,
    pub confounder: String,
    pub perturbation: Perturbation,
}

/// Matched and observational estimates for one distribution, model and arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRow {
    pub distribution: String,
    pub field: ConfounderField,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub estimate: CausalEstimate,
    pub treated_windows: Vec<String>,
    pub control_windows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub metric: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub mean: f64,
    pub std: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOrders {
    pub metric: String,
    pub orders: Vec<PartialOrder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceInputs {
    Windows { windows: Vec<String> },
    Causal { estimates: Vec<TraceEstimate> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub distribution: String,
    pub value: f64,
    pub ape_signed: f64,
    pub observational_signed: f64,
    pub treated_windows: Vec<String>,
    pub control_windows: Vec<String>,
}

/// Rating → raw score → inputs for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub metric: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub value: f64,
    pub rating: Option<usize>,
    pub inputs: TraceInputs,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub predictions: Vec<PredictionRecord>,
    pub residuals: Vec<ResidualRecord>,
    pub frame: CausalFrame,
    pub assignments: Vec<Assignment>,
    pub causal: Vec<CausalRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub scores: Vec<RawScore>,
    pub partial_orders: Vec<MetricOrders>,
    pub ratings: Vec<RatingTable>,
    /// Higher-is-better tables re-rated in ascending order.
    pub ascending_ratings: Vec<RatingTable>,
    pub trace: Vec<TraceEntry>,
    pub rejects: Vec<Reject>,
    pub notes: Vec<String>,
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::param("jobs", e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Run every stage and keep all intermediate tables in memory.
pub fn run(config: &RunConfig, provider: &dyn SentimentProvider) -> Result<RunReport> {
    let issues = config.validate();
    if let Some(first) = issues.first() {
        return Err(Error::Config {
            path: first.path.clone(),
            reason: first.reason.clone(),
        });
    }
    with_pool(config.jobs, || run_stages(config, provider))?
}

fn run_stages(config: &RunConfig, provider: &dyn SentimentProvider) -> Result<RunReport> {
    let data = prepare(config)?;
    if data.windows.is_empty() {
        return Err(Error::Insufficient("no series is long enough for one window".into()).at_stage("window"));
    }
    info!("{} series, {} windows", data.series.len(), data.windows.len());
    let mut report = RunReport::default();

    let models = build_models(config, &data.series).map_err(|e| e.at_stage("models"))?;
    let mut predictions = predict_all(config, &data, &models, provider).map_err(|e| e.at_stage("forecast"))?;
    for src in &config.models.external {
        let path = config.resolve(&src.path);
        let ext = load_external_predictions(&path, &data.labels, config.window.d).map_err(|e| e.at_stage("external"))?;
        predictions.extend(
            ext.records
                .into_iter()
                .filter(|r| config.perturbations.enabled.contains(&r.perturbation)),
        );
        report.rejects.extend(ext.rejects);
    }
    predictions.sort_by(|a, b| {
        (&a.model_id, a.perturbation, &a.window_id).cmp(&(&b.model_id, b.perturbation, &b.window_id))
    });
    let before = predictions.len();
    predictions.dedup_by(|b, a| a.model_id == b.model_id && a.perturbation == b.perturbation && a.window_id == b.window_id);
    if predictions.len() != before {
        report
            .notes
            .push(format!("{} duplicate prediction rows dropped (first kept)", before - predictions.len()));
    }

    let by_id: BTreeMap<&str, &EvalWindow> = data.windows.iter().map(|w| (w.window_id.as_str(), w)).collect();
    let resid: Vec<ResidualRecord> = predictions
        .par_iter()
        .map(|p| residuals(p, by_id[p.window_id.as_str()], config.metrics.residual_mode))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("residuals"))?;
    let frame = build_causal_frame(&resid, &data.labels).map_err(|e| e.at_stage("residuals"))?;

    let model_ids: BTreeSet<&str> = frame.rows.iter().map(|r| r.model_id.as_str()).collect();
    let enabled = &config.perturbations.enabled;

    // Statistical bias.
    let mut scores = Vec::new();
    for &m in &model_ids {
        for &p in enabled {
            if frame.select(m, p).next().is_none() {
                continue;
            }
            for field in [ConfounderField::Industry, ConfounderField::Company] {
                match wrs(&frame, m, p, field, &config.metrics.wrs) {
                    Ok(s) => scores.push(s),
                    Err(Error::Insufficient(why)) => report.notes.push(format!("WRS skipped: {why}")),
                    Err(e) => return Err(e.at_stage("wrs")),
                }
            }
        }
    }

    // Causal effects under each treatment distribution.
    let distributions = config.treatment_distributions();
    let (assignments, causal) = causal_rows(&data, &frame, &model_ids, enabled, &distributions, &mut report.notes)
        .map_err(|e| e.at_stage("causal"))?;
    for &m in &model_ids {
        for &p in enabled {
            for field in [ConfounderField::Industry, ConfounderField::Company] {
                let cells: Vec<&CausalRow> = causal
                    .iter()
                    .filter(|c| c.model_id == m && c.perturbation == p && c.field == field)
                    .collect();
                if cells.is_empty() {
                    continue;
                }
                let max_of = |f: fn(&CausalEstimate) -> f64| cells.iter().map(|c| f(&c.estimate)).fold(f64::MIN, f64::max);
                let (ape_m, pie_m) = match field {
                    ConfounderField::Industry => (Metric::ApeIndustry, Metric::PieIndustry),
                    ConfounderField::Company => (Metric::ApeCompany, Metric::PieCompany),
                };
                for (metric, value) in [(ape_m, max_of(CausalEstimate::ape)), (pie_m, max_of(CausalEstimate::pie_percent))] {
                    scores.push(RawScore {
                        metric: metric.as_str().into(),
                        model_id: m.into(),
                        perturbation: p,
                        confounder: field.into(),
                        value,
                    });
                }
            }
        }
    }

    // Accuracy.
    let accuracy = accuracy_rows(&predictions, &by_id, &mut report.notes).map_err(|e| e.at_stage("accuracy"))?;
    for a in &accuracy {
        scores.push(RawScore {
            metric: a.metric.clone(),
            model_id: a.model_id.clone(),
            perturbation: a.perturbation,
            confounder: Scope::None,
            value: a.mean,
        });
    }
    sort_scores(&mut scores);

    // Ratings.
    let levels = config.metrics.levels;
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| scores.iter().any(|s| s.metric == m.as_str()))
        .collect();
    for m in &metrics {
        let own: Vec<RawScore> = scores.iter().filter(|s| s.metric == m.as_str()).cloned().collect();
        let ps: BTreeSet<Perturbation> = own.iter().map(|s| s.perturbation).collect();
        report.partial_orders.push(MetricOrders {
            metric: m.as_str().into(),
            orders: ps.into_iter().map(|p| create_partial_order(&own, p)).collect(),
        });
        let table = rate_metric(m.as_str(), &scores, levels, m.direction()).map_err(|e| e.at_stage("rating"))?;
        if m.direction() == Direction::HigherIsBetter {
            report.ascending_ratings.push(invert_direction(&table).map_err(|e| e.at_stage("rating"))?);
        }
        report.ratings.push(table);
    }

    report.trace = trace(&scores, &report.ratings, &frame, &causal);
    report.predictions = predictions;
    report.residuals = resid;
    report.frame = frame;
    report.assignments = assignments;
    report.causal = causal;
    report.accuracy = accuracy;
    report.scores = scores;
    Ok(report)
}

fn predict_all(
    config: &RunConfig,
    data: &Dataset,
    models: &[Box<dyn Forecaster>],
    provider: &dyn SentimentProvider,
) -> Result<Vec<PredictionRecord>> {
    let per_window: Vec<Vec<PredictionRecord>> = data
        .windows
        .par_iter()
        .map(|w| {
            let mut out = Vec::new();
            for &p in &config.perturbations.enabled {
                let users: Vec<&dyn Forecaster> = models.iter().map(|m| &**m).filter(|m| m.supports(p)).collect();
                if users.is_empty() {
                    continue;
                }
                let history = perturbed_history(config, w, p)?;
                let image = if users.iter().any(|m| m.uses_image()) {
                    Some(window_image(&history, &w.history, p, config.metrics.omega0, provider)?)
                } else {
                    None
                };
                for m in users {
                    let input = ForecastInput {
                        window: w,
                        perturbation: p,
                        history: &history,
                        image: image.as_ref(),
                    };
                    out.push(PredictionRecord {
                        window_id: w.window_id.clone(),
                        model_id: m.model_id().to_string(),
                        perturbation: p,
                        prediction: checked_predict(m, &input)?,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

fn causal_rows(
    data: &Dataset,
    frame: &CausalFrame,
    model_ids: &BTreeSet<&str>,
    enabled: &[Perturbation],
    distributions: &[TreatmentDistribution],
    notes: &mut Vec<String>,
) -> Result<(Vec<Assignment>, Vec<CausalRow>)> {
    let outcome: HashMap<(&str, &str, Perturbation), f64> = frame
        .rows
        .iter()
        .map(|r| ((r.model_id.as_str(), r.window_id.as_str(), r.perturbation), r.max_residual))
        .collect();
    let mut assignments = Vec::new();
    let mut rows = Vec::new();
    for dist in distributions {
        let values: Vec<&str> = data
            .windows
            .iter()
            .map(|w| match dist.field {
                ConfounderField::Company => w.company.as_str(),
                ConfounderField::Industry => w.industry.as_str(),
            })
            .collect();
        let arms = assign_treatments(&values, enabled, dist)?;
        for ((w, v), p) in data.windows.iter().zip(&values).zip(&arms) {
            assignments.push(Assignment {
                distribution: dist.name.clone(),
                window_id: w.window_id.clone(),
                confounder: v.to_string(),
                perturbation: *p,
            });
        }
        for &m in model_ids {
            // The observed world: each window seen only under its assigned arm.
            let observed: Vec<(usize, Perturbation, f64)> = arms
                .iter()
                .enumerate()
                .filter_map(|(i, &p)| {
                    outcome
                        .get(&(m, data.windows[i].window_id.as_str(), p))
                        .map(|&y| (i, p, y))
                })
                .collect();
            for &p in enabled.iter().filter(|p| **p != Perturbation::P0) {
                let cell: Vec<&(usize, Perturbation, f64)> = observed
                    .iter()
                    .filter(|(_, q, _)| *q == p || *q == Perturbation::P0)
                    .collect();
                if !cell.iter().any(|c| c.1 == p) {
                    continue;
                }
                let treated: Vec<bool> = cell.iter().map(|c| c.1 == p).collect();
                let conf: Vec<&str> = cell.iter().map(|c| values[c.0]).collect();
                let y: Vec<f64> = cell.iter().map(|c| c.2).collect();
                match estimate_effect(&treated, &conf, &y) {
                    Ok(estimate) => {
                        let ids = |want: bool| {
                            cell.iter()
                                .zip(&treated)
                                .filter(|(_, t)| **t == want)
                                .map(|(c, _)| data.windows[c.0].window_id.clone())
                                .collect()
                        };
                        rows.push(CausalRow {
                            distribution: dist.name.clone(),
                            field: dist.field,
                            model_id: m.into(),
                            perturbation: p,
                            treated_windows: ids(true),
                            control_windows: ids(false),
                            estimate,
                        });
                    }
                    Err(e @ (Error::Insufficient(_) | Error::Degenerate(_))) => {
                        notes.push(format!("{} {m} {p}: {e}", dist.name));
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok((assignments, rows))
}

fn accuracy_rows(
    predictions: &[PredictionRecord],
    windows: &BTreeMap<&str, &EvalWindow>,
    notes: &mut Vec<String>,
) -> Result<Vec<AccuracyRow>> {
    let mut obs: BTreeMap<(Metric, &str), Vec<AccuracyObservation>> = BTreeMap::new();
    let mut degenerate = 0usize;
    for rec in predictions {
        let w = windows[rec.window_id.as_str()];
        let mut push = |metric: Metric, value: f64| {
            obs.entry((metric, rec.model_id.as_str())).or_default().push(AccuracyObservation {
                company: w.company.clone(),
                perturbation: rec.perturbation,
                value,
            })
        };
        push(Metric::Smape, smape(&w.truth, &rec.prediction)?);
        match mase(&w.history, &w.truth, &rec.prediction) {
            Ok(v) => push(Metric::Mase, v),
            Err(Error::Degenerate(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
        push(Metric::SignAccuracy, sign_accuracy(&w.truth, &rec.prediction, w.anchor())?);
    }
    if degenerate > 0 {
        notes.push(format!("MASE undefined on {degenerate} prediction(s) with a constant history"));
    }
    let mut rows = Vec::new();
    for ((metric, model), o) in obs {
        for cell in summarize_accuracy(&o)?.cells {
            rows.push(AccuracyRow {
                metric: metric.as_str().into(),
                model_id: model.into(),
                perturbation: cell.perturbation,
                mean: cell.mean,
                std: cell.std,
                windows: cell.windows,
            });
        }
    }
    Ok(rows)
}

fn metric_rank(name: &str) -> usize {
    Metric::ALL.iter().position(|m| m.as_str() == name).unwrap_or(usize::MAX)
}

pub fn sort_scores(scores: &mut [RawScore]) {
    scores.sort_by(|a, b| {
        (metric_rank(&a.metric), &a.metric, &a.model_id, a.perturbation).cmp(&(
            metric_rank(&b.metric),
            &b.metric,
            &b.model_id,
            b.perturbation,
        ))
    });
}

fn trace(scores: &[RawScore], ratings: &[RatingTable], frame: &CausalFrame, causal: &[CausalRow]) -> Vec<TraceEntry> {
    scores
        .iter()
        .map(|s| {
            let rating = ratings
                .iter()
                .find(|t| t.metric == s.metric)
                .and_then(|t| t.rating(s.perturbation, &s.model_id));
            let metric: Option<Metric> = s.metric.parse().ok();
            let inputs = match metric {
                Some(Metric::ApeIndustry | Metric::ApeCompany | Metric::PieIndustry | Metric::PieCompany) => {
                    let field = if s.confounder == Scope::Industry {
                        ConfounderField::Industry
                    } else {
                        ConfounderField::Company
                    };
                    let is_ape = matches!(metric, Some(Metric::ApeIndustry | Metric::ApeCompany));
                    TraceInputs::Causal {
                        estimates: causal
                            .iter()
                            .filter(|c| c.model_id == s.model_id && c.perturbation == s.perturbation && c.field == field)
                            .map(|c| TraceEstimate {
                                distribution: c.distribution.clone(),
                                value: if is_ape { c.estimate.ape() } else { c.estimate.pie_percent() },
                                ape_signed: c.estimate.ape_signed,
                                observational_signed: c.estimate.observational_signed,
                                treated_windows: c.treated_windows.clone(),
                                control_windows: c.control_windows.clone(),
                            })
                            .collect(),
                    }
                }
                _ => TraceInputs::Windows {
                    windows: frame
                        .select(&s.model_id, s.perturbation)
                        .map(|r| r.window_id.clone())
                        .collect(),
                },
            };
            TraceEntry {
                metric: s.metric.clone(),
                model_id: s.model_id.clone(),
                perturbation: s.perturbation,
                value: s.value,
                rating,
                inputs,
            }
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[RawScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a raw-score CSV (`metric, model_id, perturbation, confounder, value`).
pub fn read_scores(path: &Path) -> Result<Vec<RawScore>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    for col in ["metric", "model_id", "perturbation", "confounder", "value"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: col.into(),
                available: headers.iter().collect::<Vec<_>>().join(", "),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<RawScore>().enumerate() {
        let s = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        if s.value.is_nan() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                reason: "value is NaN".into(),
            });
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::EmptyFile { path: path.to_path_buf() });
    }
    Ok(out)
}

/// Rating tables straight from a raw-score file. Direction defaults to the
/// metric's own (higher is better for sign accuracy, lower otherwise).
pub fn rate_scores(scores: &[RawScore], levels: usize, direction: Option<Direction>) -> Result<Vec<RatingTable>> {
    let mut names: Vec<&str> = scores.iter().map(|s| s.metric.as_str()).collect();
    names.sort_by_key(|n| (metric_rank(n), *n));
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let dir = direction.unwrap_or_else(|| {
                name.parse::<Metric>()
                    .map(Metric::direction)
                    .unwrap_or(Direction::LowerIsBetter)
            });
            rate_metric(name, scores, levels, dir)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub status: String,
    pub seed: u64,
    pub config_sha256: String,
    pub created_at: String,
    pub windows: usize,
    pub predictions: usize,
    pub scores: usize,
    pub files: Vec<String>,
    pub notes: Vec<String>,
    pub rejects: Vec<Reject>,
    pub artifact_choices: Vec<String>,
}

fn artifact_choices(config: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    if config.models.baselines.contains(&Baseline::Biased) {
        if let Some(off) = config.models.biased.default_offset {
            v.push(format!("S_b offset for companies without an explicit offset: {off}"));
        }
    }
    v.push(format!("residual mode: {:?}", config.metrics.residual_mode));
    v.push(format!("perturbation period: {}, phase {}", config.period(), config.perturbations.phase));
    v
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Write every report table into `dir`; returns the file names written.
pub fn write_report(report: &RunReport, config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut add = |name: &str| {
        files.push(name.to_string());
        dir.join(name)
    };

    export_predictions(&add("predictions.csv"), &report.predictions)?;

    let mut w = csv::Writer::from_path(add("residuals.csv"))?;
    w.write_record(["window_id", "model_id", "perturbation", "company", "industry", "max_residual"])?;
    for r in &report.frame.rows {
        w.write_record([
            r.window_id.as_str(),
            &r.model_id,
            r.perturbation.as_str(),
            &r.company,
            &r.industry,
            &r.max_residual.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(add("assignments.csv"))?;
    for a in &report.assignments {
        w.serialize(a)?;
    }
    w.flush()?;

    write_scores(&add("scores.csv"), &report.scores)?;

    let mut w = csv::Writer::from_path(add("causal_estimates.csv"))?;
    w.write_record([
        "distribution",
        "field",
        "model_id",
        "perturbation",
        "ape",
        "ape_signed",
        "ape_observational",
        "pie_percent",
        "n_treated",
        "n_control",
        "n_matched",
        "unmatchable",
    ])?;
    for c in &report.causal {
        let e = &c.estimate;
        w.write_record([
            c.distribution.clone(),
            c.field.to_string(),
            c.model_id.clone(),
            c.perturbation.to_string(),
            e.ape().to_string(),
            e.ape_signed.to_string(),
            e.ape_observational().to_string(),
            e.pie_percent().to_string(),
            e.n_treated.to_string(),
            e.n_control.to_string(),
            e.n_matched.to_string(),
            e.unmatchable.join(";"),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(add("accuracy_summary.csv"))?;
    for a in &report.accuracy {
        w.serialize(a)?;
    }
    w.flush()?;

    write_json(&add("partial_orders.json"), &report.partial_orders)?;
    write_json(
        &add("ratings.json"),
        &serde_json::json!({ "tables": report.ratings, "ascending_tables": report.ascending_ratings }),
    )?;
    write_json(&add("radar.json"), &radar(&report.scores, &config.perturbations.enabled))?;
    write_json(&add("trace.json"), &report.trace)?;

    files.push("manifest.json".into());
    let manifest = RunManifest {
        tool: "tsrate",
        version: TOOL_VERSION,
        status: "ok".into(),
        seed: config.seed,
        config_sha256: config.digest(),
        created_at: timestamp(),
        windows: report.frame.rows.iter().map(|r| &r.window_id).collect::<BTreeSet<_>>().len(),
        predictions: report.predictions.len(),
        scores: report.scores.len(),
        files: files.clone(),
        notes: report.notes.clone(),
        rejects: report.rejects.clone(),
        artifact_choices: artifact_choices(config),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(files)
}

/// Manifest for a run that aborted; lists whatever files already exist.
pub fn write_failure_manifest(config: &RunConfig, dir: &Path, error: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    files.sort();
    let mut notes = vec![format!("run failed: {error}")];
    if !files.is_empty() {
        notes.push("files listed here are partial and may predate this run".into());
    }
    let manifest = RunManifest {
        tool: "tsrate",
        version: TOOL_VERSION,
        status: "failed".into(),
        seed: config.seed,
        config_sha256: config.digest(),
        created_at: timestamp(),
        windows: 0,
        predictions: 0,
        scores: 0,
        files,
        notes,
        rejects: Vec::new(),
        artifact_choices: artifact_choices(config),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Metric → model → values in `perturbations` order (null where absent),
/// plus each model's mean over the perturbations it has.
pub fn radar(scores: &[RawScore], perturbations: &[Perturbation]) -> serde_json::Value {
    let mut metrics: BTreeMap<&str, BTreeMap<&str, Vec<Option<f64>>>> = BTreeMap::new();
    for s in scores {
        let Some(i) = perturbations.iter().position(|p| *p == s.perturbation) else {
            continue;
        };
        let row = metrics
            .entry(&s.metric)
            .or_default()
            .entry(&s.model_id)
            .or_insert_with(|| vec![None; perturbations.len()]);
        row[i] = Some(s.value);
    }
    let body: serde_json::Map<String, serde_json::Value> = metrics
        .into_iter()
        .map(|(metric, models)| {
            let models: serde_json::Map<String, serde_json::Value> = models
                .into_iter()
                .map(|(model, values)| {
                    let present: Vec<f64> = values.iter().flatten().copied().collect();
                    let average = present.iter().sum::<f64>() / present.len().max(1) as f64;
                    (model.to_string(), serde_json::json!({ "values": values, "average": average }))
                })
                .collect();
            (metric.to_string(), serde_json::Value::Object(models))
        })
        .collect();
    serde_json::json!({
        "perturbations": perturbations.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
        "metrics": body,
    })
}

/// Composed images for P0 and every enabled image perturbation, plus one
/// line plot, per window. Returns the paths written.
pub fn write_images(
    config: &RunConfig,
    dir: &Path,
    provider: &dyn SentimentProvider,
    limit: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let data = prepare(config)?;
    std::fs::create_dir_all(dir)?;
    let kinds: Vec<Perturbation> = config
        .perturbations
        .enabled
        .iter()
        .copied()
        .filter(|p| *p == Perturbation::P0 || p.is_image())
        .collect();
    let take = limit.unwrap_or(data.windows.len());
    let written: Vec<Vec<PathBuf>> = with_pool(config.jobs, || {
        data.windows[..take.min(data.windows.len())]
            .par_iter()
            .map(|w| {
                let mut out = Vec::new();
                let history: Vec<Option<f64>> = w.history.iter().copied().map(Some).collect();
                for &p in &kinds {
                    let img = window_image(&history, &w.history, p, config.metrics.omega0, provider)?;
                    let path = dir.join(format!("{}_{}.png", w.window_id, p));
                    img.write_png(&path)?;
                    out.push(path);
                }
                let path = dir.join(format!("{}_lineplot.png", w.window_id));
                render_lineplot(&w.history)?.write_png(&path)?;
                out.push(path);
                Ok(out)
            })
            .collect::<Result<_>>()
    })?
    .map_err(|e: Error| e.at_stage("images"))?;
    Ok(written.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Scope;

    fn score(metric: &str, model: &str, p: Perturbation, v: f64) -> RawScore {
        RawScore {
            metric: metric.into(),
            model_id: model.into(),
            perturbation: p,
            confounder: Scope::None,
            value: v,
        }
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let scores = vec![
            score("WRS_I", "a", Perturbation::P0, 4.6),
            RawScore {
                confounder: Scope::Industry,
                ..score("APE_I", "b", Perturbation::P1, f64::INFINITY)
            },
        ];
        write_scores(&path, &scores).unwrap();
        assert_eq!(read_scores(&path).unwrap(), scores);
    }

    #[test]
    fn malformed_scores_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(
            &path,
            "metric,model_id,perturbation,confounder,value\nM,a,P0,none,1\nM,b,P9,none,2\n",
        )
        .unwrap();
        match read_scores(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "metric,model_id,value\n").unwrap();
        assert!(matches!(read_scores(&path), Err(Error::MissingColumn { .. })));
    }

    #[test]
    fn single_model_files() {
        let zero = rate_scores(&[score("X", "a", Perturbation::P0, 0.0)], 3, None).unwrap();
        assert_eq!(zero[0].rating(Perturbation::P0, "a"), Some(1));
        let seven = rate_scores(&[score("X", "a", Perturbation::P0, 7.0)], 3, None).unwrap();
        assert_eq!(seven[0].rating(Perturbation::P0, "a"), Some(3));
    }

    #[test]
    fn radar_layout() {
        let v = radar(
            &[score("SMAPE", "a", Perturbation::P0, 1.0), score("SMAPE", "a", Perturbation::P2, 3.0)],
            &[Perturbation::P0, Perturbation::P1, Perturbation::P2],
        );
        assert_eq!(v["metrics"]["SMAPE"]["a"]["values"], serde_json::json!([1.0, null, 3.0]));
        assert_eq!(v["metrics"]["SMAPE"]["a"]["average"], serde_json::json!(2.0));
    }
}
