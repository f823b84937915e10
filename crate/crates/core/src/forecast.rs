//! Forecaster interface, the three built-in baselines, and adapters for
//! predictions produced outside the process (CSV exchange files and HTTP).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::perturb::Perturbation;
use crate::series::{EvalWindow, LabeledSeries, PredictionRecord, WindowLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Numeric,
    NumericImage,
}

/// Everything a model may look at when forecasting one window.
#[derive(Debug, Clone, Copy)]
pub struct ForecastInput<'a> {
    pub window: &'a EvalWindow,
    pub perturbation: Perturbation,
    /// Possibly perturbed history; `None` marks a missing value.
    pub history: &'a [Option<f64>],
    pub image: Option<&'a RgbImage>,
}

pub trait Forecaster: Send + Sync {
    fn model_id(&self) -> &str;

    fn modality(&self) -> Modality;

    /// Whether this model receives the input that `p` perturbs.
    fn supports(&self, p: Perturbation) -> bool {
        match self.modality() {
            Modality::Numeric => !p.is_image(),
            Modality::NumericImage => true,
        }
    }

    /// Whether `predict` reads `input.image`; when false the pipeline skips
    /// rendering.
    fn uses_image(&self) -> bool {
        self.modality() == Modality::NumericImage
    }

    /// Exactly `input.window.d()` values.
    fn predict(&self, input: &ForecastInput<'_>) -> Result<Vec<f64>>;
}

/// Check a model's output against the horizon contract.
pub fn checked_predict(model: &dyn Forecaster, input: &ForecastInput<'_>) -> Result<Vec<f64>> {
    let out = model.predict(input)?;
    let d = input.window.d();
    if out.len() != d {
        return Err(Error::Forecast {
            model: model.model_id().to_string(),
            reason: format!("returned {} values for a horizon of {d}", out.len()),
        });
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Forecast {
            model: model.model_id().to_string(),
            reason: format!("non-finite value at step {i}"),
        });
    }
    Ok(out)
}

/// Last observation carried forward; leading gaps take the first observation.
pub fn impute_locf(history: &[Option<f64>]) -> Result<Vec<f64>> {
    let first = history
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or_else(|| Error::Insufficient("history has no observed values".into()))?;
    let mut last = first;
    Ok(history
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

fn difference(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

fn drift(history: &[f64], d: usize) -> Vec<f64> {
    let last = *history.last().expect("non-empty history");
    let slope = if history.len() > 1 {
        (last - history[0]) / (history.len() - 1) as f64
    } else {
        0.0
    };
    (1..=d).map(|h| last + slope * h as f64).collect()
}

/// AR(p) with intercept fit by least squares on the `d_diff`-times
/// differenced history, forecast recursively and integrated back.
///
/// A rank-deficient design falls back to a drift forecast.
pub fn ar_baseline(history: &[f64], p: usize, d_diff: usize, horizon: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::param("p", "lag order must be at least 1"));
    }
    if history.len() <= p + d_diff {
        return Err(Error::SeriesTooShort {
            len: history.len(),
            required: p + d_diff + 1,
        });
    }
    let mut levels = vec![history.to_vec()];
    for _ in 0..d_diff {
        levels.push(difference(levels.last().expect("at least one level")));
    }
    let z = levels.last().expect("at least one level");
    let rows = z.len() - p;
    let cols = p + 1;
    if rows < cols {
        warn!("AR({p}) has {rows} equations for {cols} unknowns; using drift forecast");
        return Ok(drift(history, horizon));
    }
    let x = DMatrix::from_fn(rows, cols, |r, c| if c == 0 { 1.0 } else { z[p + r - c] });
    let y = DVector::from_iterator(rows, z[p..].iter().copied());
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-10 * rows.max(cols) as f64;
    if max_sv == 0.0 || svd.rank(eps) < cols {
        debug!("AR({p}) design is rank deficient; using drift forecast");
        return Ok(drift(history, horizon));
    }
    let beta = svd
        .solve(&y, eps)
        .map_err(|e| Error::Degenerate(format!("least squares failed: {e}")))?;
    let radius = spectral_radius(&beta.as_slice()[1..]);
    if radius > 1.0 + 1e-6 {
        debug!("AR({p}) fit is explosive (spectral radius {radius:.4}); using drift forecast");
        return Ok(drift(history, horizon));
    }

    let mut ext = z.clone();
    for _ in 0..horizon {
        let n = ext.len();
        let next = beta[0] + (1..=p).map(|i| beta[i] * ext[n - i]).sum::<f64>();
        ext.push(next);
    }
    let mut forecast: Vec<f64> = ext[z.len()..].to_vec();
    // Integrate each differencing level back, anchored at its last value.
    for level in levels.iter().rev().skip(1) {
        let mut acc = *level.last().expect("non-empty level");
        forecast = forecast
            .iter()
            .map(|dv| {
                acc += dv;
                acc
            })
            .collect();
    }
    if forecast.iter().any(|v| !v.is_finite()) {
        warn!("AR({p}) forecast diverged; using drift forecast");
        return Ok(drift(history, horizon));
    }
    Ok(forecast)
}

/// Largest root modulus of the AR polynomial, via its companion matrix.
fn spectral_radius(phi: &[f64]) -> f64 {
    let p = phi.len();
    let companion = DMatrix::from_fn(p, p, |r, c| {
        if r == 0 {
            phi[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Autoregressive baseline with differencing (`S_a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArBaseline {
    pub model_id: String,
    pub p: usize,
    pub d_diff: usize,
}

impl Default for ArBaseline {
    fn default() -> Self {
        Self {
            model_id: "S_a".into(),
            p: 5,
            d_diff: 1,
        }
    }
}

impl Forecaster for ArBaseline {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn modality(&self) -> Modality {
        Modality::Numeric
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<Vec<f64>> {
        let history = impute_locf(input.history)?;
        ar_baseline(&history, self.p, self.d_diff, input.window.d())
    }
}

pub const DEFAULT_BIASED_OFFSET: f64 = 400.0;

/// Oracle that adds a fixed per-company offset to the truth (`S_b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedSystem {
    pub model_id: String,
    pub offsets: BTreeMap<String, f64>,
    pub default_offset: Option<f64>,
}

impl Default for BiasedSystem {
    fn default() -> Self {
        Self {
            model_id: "S_b".into(),
            offsets: BTreeMap::from([("META".into(), 0.0), ("GOOG".into(), 200.0)]),
            default_offset: Some(DEFAULT_BIASED_OFFSET),
        }
    }
}

impl BiasedSystem {
    pub fn offset(&self, company: &str) -> Result<f64> {
        self.offsets
            .get(company)
            .copied()
            .or(self.default_offset)
            .ok_or_else(|| Error::UnknownCompany(company.to_string()))
    }
}

impl Forecaster for BiasedSystem {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn uses_image(&self) -> bool {
        false
    }

    fn modality(&self) -> Modality {
        Modality::NumericImage
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<Vec<f64>> {
        let off = self.offset(&input.window.company)?;
        Ok(input.window.truth.iter().map(|t| t + off).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompanyRange {
    pub min: f64,
    pub max: f64,
}

impl CompanyRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::param("range", format!("need finite min <= max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }
}

pub fn company_ranges(series: &[LabeledSeries]) -> BTreeMap<String, CompanyRange> {
    series
        .iter()
        .filter_map(|s| s.range().map(|(lo, hi)| (s.company.clone(), CompanyRange { min: lo, max: hi })))
        .collect()
}

/// 64-bit seed derived from a global seed and a key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Uniform draws inside the company's historical price range (`S_r`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSystem {
    pub model_id: String,
    pub ranges: BTreeMap<String, CompanyRange>,
    pub seed: u64,
}

impl RandomSystem {
    pub fn new(ranges: BTreeMap<String, CompanyRange>, seed: u64) -> Self {
        Self {
            model_id: "S_r".into(),
            ranges,
            seed,
        }
    }

    pub fn draw(&self, company: &str, window_id: &str, d: usize) -> Result<Vec<f64>> {
        let range = self
            .ranges
            .get(company)
            .ok_or_else(|| Error::UnknownCompany(company.to_string()))?;
        if range.min == range.max {
            return Ok(vec![range.min; d]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, window_id));
        Ok((0..d).map(|_| rng.random_range(range.min..=range.max)).collect())
    }
}

impl Forecaster for RandomSystem {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn uses_image(&self) -> bool {
        false
    }

    fn modality(&self) -> Modality {
        Modality::NumericImage
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<Vec<f64>> {
        let w = input.window;
        self.draw(&w.company, &w.window_id, w.d())
    }
}

/// A row of an exchange file that could not be used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub window_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalPredictions {
    pub records: Vec<PredictionRecord>,
    pub rejects: Vec<Reject>,
}

/// Read a prediction exchange CSV (`window_id, model_id, perturbation, v1..vd`).
///
/// Unknown windows and wrong-length rows are rejected and reported; rows that
/// cannot be parsed at all are an error.
pub fn load_external_predictions(path: &Path, known: &WindowLabels, d: usize) -> Result<ExternalPredictions> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
                available: headers.iter().collect::<Vec<_>>().join(", "),
            })
    };
    let (wi, mi, pi) = (col("window_id")?, col("model_id")?, col("perturbation")?);
    let value_cols: Vec<usize> = (1..)
        .map_while(|k| headers.iter().position(|h| h.eq_ignore_ascii_case(&format!("v{k}"))))
        .collect();

    let mut out = ExternalPredictions::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let field = |c: usize| rec.get(c).unwrap_or("");
        let window_id = field(wi).to_string();
        let model_id = field(mi).to_string();
        if window_id.is_empty() || model_id.is_empty() {
            return Err(parse_err("empty window_id or model_id".into()));
        }
        let perturbation: Perturbation = field(pi).parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let mut prediction = Vec::with_capacity(d);
        for &c in &value_cols {
            let cell = field(c);
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("`{cell}` in {} is not a number", &headers[c])))?;
            prediction.push(v);
        }
        if !known.contains(&window_id) {
            out.rejects.push(Reject {
                line,
                window_id,
                reason: "unknown window id".into(),
            });
            continue;
        }
        if prediction.len() != d {
            out.rejects.push(Reject {
                line,
                window_id,
                reason: format!("{} values, expected {d}", prediction.len()),
            });
            continue;
        }
        out.records.push(PredictionRecord {
            window_id,
            model_id,
            perturbation,
            prediction,
        });
    }
    Ok(out)
}

/// Write records in the exchange format read by [`load_external_predictions`].
pub fn export_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let width = records.iter().map(|r| r.prediction.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["window_id".to_string(), "model_id".into(), "perturbation".into()];
    header.extend((1..=width).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.window_id.clone(), r.model_id.clone(), r.perturbation.to_string()];
        row.extend(r.prediction.iter().map(|v| v.to_string()));
        row.resize(header.len(), String::new());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Find the last maximal run of exactly `d` numbers separated only by
/// whitespace, commas, semicolons or brackets.
pub fn parse_numbers(text: &str, d: usize) -> Option<Vec<f64>> {
    static NUMBER: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"));
    let is_sep = |s: &str| s.chars().all(|c| c.is_whitespace() || ",;[]()".contains(c));
    let mut runs: Vec<Vec<f64>> = Vec::new();
    let mut prev_end: Option<usize> = None;
    for m in re.find_iter(text) {
        let v: f64 = match m.as_str().parse() {
            Ok(v) => v,
            Err(_) => continue,
        };
        let joined = prev_end.is_some_and(|e| is_sep(&text[e..m.start()]));
        if joined {
            runs.last_mut().expect("run exists").push(v);
        } else {
            runs.push(vec![v]);
        }
        prev_end = Some(m.end());
    }
    runs.into_iter().rev().find(|r| r.len() == d)
}

/// Serialize a history for a prompt; missing values become `null`.
pub fn serialize_history(history: &[Option<f64>]) -> String {
    history
        .iter()
        .map(|v| match v {
            Some(v) => format!("{v}"),
            None => "null".into(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub const DEFAULT_PROMPT: &str = "Given the past {n} time steps: [{series}], can you forecast the next {d} time steps? Provide a list of {d} numeric values only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    pub model_id: String,
    pub url: String,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    #[serde(default = "default_prompt")]
    pub prompt_template: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Name of the environment variable holding the secret for `auth_header`.
    #[serde(default)]
    pub secret_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_modality() -> Modality {
    Modality::Numeric
}
fn default_prompt() -> String {
    DEFAULT_PROMPT.into()
}
fn default_timeout() -> f64 {
    60.0
}
fn default_in_flight() -> usize {
    4
}
fn default_attempts() -> usize {
    3
}
fn default_backoff() -> u64 {
    250
}

impl HttpEndpoint {
    pub fn new(model_id: impl Into<String>, url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            url: url.into(),
            modality: default_modality(),
            prompt_template: default_prompt(),
            auth_header: None,
            secret_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            attempts: default_attempts(),
            backoff_ms: default_backoff(),
        }
    }
}

struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Remote model reached over HTTP. The request body is JSON
/// `{"model", "prompt", "image_png_base64"?}`; the response is either plain
/// text or JSON with a string field `text`, `output`, or `response`.
pub struct HttpForecaster {
    endpoint: HttpEndpoint,
    secret: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
    audit: Mutex<Vec<(String, String)>>,
}

impl HttpForecaster {
    pub fn new(endpoint: HttpEndpoint) -> Result<Self> {
        if endpoint.attempts == 0 {
            return Err(Error::param("attempts", "must be at least 1"));
        }
        if endpoint.max_in_flight == 0 {
            return Err(Error::param("max_in_flight", "must be at least 1"));
        }
        if !(endpoint.timeout_secs > 0.0) {
            return Err(Error::param("timeout_secs", "must be positive"));
        }
        let secret = match (&endpoint.auth_header, &endpoint.secret_env) {
            (Some(_), Some(var)) => Some(std::env::var(var).map_err(|_| Error::Config {
                path: format!("models.http.{}.secret_env", endpoint.model_id),
                reason: format!("environment variable `{var}` is not set"),
            })?),
            _ => None,
        };
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            gate: Gate {
                free: Mutex::new(endpoint.max_in_flight),
                cv: Condvar::new(),
            },
            agent: ureq::Agent::new_with_config(config),
            secret,
            endpoint,
            audit: Mutex::new(Vec::new()),
        })
    }

    pub fn prompt(&self, history: &[Option<f64>], d: usize) -> String {
        self.endpoint
            .prompt_template
            .replace("{series}", &serialize_history(history))
            .replace("{n}", &history.len().to_string())
            .replace("{d}", &d.to_string())
    }

    /// `(window_id/perturbation, raw response)` pairs received so far.
    pub fn audit_log(&self) -> Vec<(String, String)> {
        self.audit.lock().expect("audit lock").clone()
    }

    fn call_once(&self, body: &[u8]) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.endpoint.url).header("content-type", "application/json");
        if let (Some(h), Some(s)) = (&self.endpoint.auth_header, &self.secret) {
            req = req.header(h.as_str(), s.as_str());
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {text}"));
        }
        Ok(text)
    }
}

fn response_text(raw: &str) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(raw) {
        for key in ["text", "output", "response"] {
            if let Some(serde_json::Value::String(s)) = map.get(key) {
                return s.clone();
            }
        }
    }
    raw.to_string()
}

impl Forecaster for HttpForecaster {
    fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    fn modality(&self) -> Modality {
        self.endpoint.modality
    }

    fn predict(&self, input: &ForecastInput<'_>) -> Result<Vec<f64>> {
        let d = input.window.d();
        let mut body = serde_json::json!({
            "model": self.endpoint.model_id,
            "prompt": self.prompt(input.history, d),
        });
        if let (Modality::NumericImage, Some(img)) = (self.endpoint.modality, input.image) {
            body["image_png_base64"] = base64::engine::general_purpose::STANDARD.encode(img.encode_png()?).into();
        }
        let body = serde_json::to_vec(&body)?;
        let key = format!("{}/{}", input.window.window_id, input.perturbation);
        let mut last_reason = String::new();
        let mut last_raw = None;
        for attempt in 0..self.endpoint.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.endpoint.backoff_ms << (attempt - 1)));
            }
            let outcome = {
                let _slot = self.gate.acquire();
                self.call_once(&body)
            };
            match outcome {
                Ok(raw) => {
                    self.audit.lock().expect("audit lock").push((key.clone(), raw.clone()));
                    if let Some(v) = parse_numbers(&response_text(&raw), d) {
                        return Ok(v);
                    }
                    last_reason = format!("no run of exactly {d} numbers in response");
                    last_raw = Some(raw);
                }
                Err(e) => last_reason = e,
            }
            warn!("{key}: attempt {} failed: {last_reason}", attempt + 1);
        }
        Err(Error::Http {
            attempts: self.endpoint.attempts,
            reason: last_reason,
            raw: last_raw,
        })
    }
}
