//! Time-series samples, sliding windows, residuals and the causal frame.
//!
//! Everything here is immutable after construction. A [`LabeledSeries`] is
//! cut into [`EvalWindow`]s of `n` history values followed by `d` truth
//! values; a forecaster's [`PredictionRecord`] for a window is turned into a
//! [`ResidualRecord`], and residual records are joined with the window
//! labels into a [`CausalFrame`] that all robustness metrics consume.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::Perturbation;

pub const DEFAULT_HISTORY: usize = 80;
pub const DEFAULT_HORIZON: usize = 20;

/// A univariate daily price series tagged with its company and industry.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub values: Vec<f64>,
    pub timestamps: Vec<NaiveDate>,
    pub company: String,
    pub industry: String,
}

impl LabeledSeries {
    pub fn new(
        values: Vec<f64>,
        timestamps: Vec<NaiveDate>,
        company: impl Into<String>,
        industry: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != timestamps.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                got: timestamps.len(),
            });
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "timestamps",
                format!("not strictly increasing at index {}", i + 1),
            ));
        }
        Ok(Self {
            values,
            timestamps,
            company: company.into(),
            industry: industry.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest and largest price in the series.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values.iter().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// One sliding-window sample: `n` history values and the `d` values after them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub window_id: String,
    pub company: String,
    pub industry: String,
    /// Offset of the first history value in the source series.
    pub offset: usize,
    pub history: Vec<f64>,
    pub truth: Vec<f64>,
}

impl EvalWindow {
    pub fn n(&self) -> usize {
        self.history.len()
    }

    pub fn d(&self) -> usize {
        self.truth.len()
    }

    /// Last observed history value; anchors first-difference metrics.
    pub fn anchor(&self) -> f64 {
        *self.history.last().expect("windows have n >= 1")
    }
}

pub fn window_id(company: &str, offset: usize) -> String {
    format!("{company}-{offset:05}")
}

/// Cut `series` into contiguous windows of `n` history values and `d` truth values.
///
/// Produces `floor((len - n - d) / stride) + 1` windows starting at offsets
/// `0, stride, 2*stride, ...`.
pub fn slide_windows(
    series: &LabeledSeries,
    n: usize,
    d: usize,
    stride: usize,
) -> Result<Vec<EvalWindow>> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    if d == 0 {
        return Err(Error::param("d", "must be >= 1"));
    }
    if stride == 0 {
        return Err(Error::param("stride", "must be >= 1"));
    }
    let required = n + d;
    if series.len() < required {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            required,
        });
    }
    let count = (series.len() - required) / stride + 1;
    Ok((0..count)
        .map(|k| {
            let offset = k * stride;
            EvalWindow {
                window_id: window_id(&series.company, offset),
                company: series.company.clone(),
                industry: series.industry.clone(),
                offset,
                history: series.values[offset..offset + n].to_vec(),
                truth: series.values[offset + n..offset + required].to_vec(),
            }
        })
        .collect())
}

/// A model's forecast for one window under one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub window_id: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub prediction: Vec<f64>,
}

/// How the per-window worst residual is reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `max |r_i|`
    #[default]
    Absolute,
    /// `max r_i`
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub window_id: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

pub fn max_residual(residuals: &[f64], mode: ResidualMode) -> f64 {
    match mode {
        ResidualMode::Absolute => residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        ResidualMode::Signed => residuals
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// `residuals[i] = prediction[i] - truth[i]`, reduced to the window's worst residual.
pub fn residuals(
    pred: &PredictionRecord,
    window: &EvalWindow,
    mode: ResidualMode,
) -> Result<ResidualRecord> {
    if pred.window_id != window.window_id {
        return Err(Error::WindowMismatch {
            prediction: pred.window_id.clone(),
            window: window.window_id.clone(),
        });
    }
    if pred.prediction.len() != window.truth.len() {
        return Err(Error::LengthMismatch {
            expected: window.truth.len(),
            got: pred.prediction.len(),
        });
    }
    if let Some(index) = pred.prediction.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let res: Vec<f64> = pred
        .prediction
        .iter()
        .zip(&window.truth)
        .map(|(p, t)| p - t)
        .collect();
    Ok(ResidualRecord {
        window_id: pred.window_id.clone(),
        model_id: pred.model_id.clone(),
        perturbation: pred.perturbation,
        max_residual: max_residual(&res, mode),
        residuals: res,
    })
}

/// Which label a robustness analysis groups or adjusts by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfounderField {
    Company,
    Industry,
}

impl ConfounderField {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfounderField::Company => "company",
            ConfounderField::Industry => "industry",
        }
    }
}

impl std::fmt::Display for ConfounderField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConfounderField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "company" => Ok(ConfounderField::Company),
            "industry" => Ok(ConfounderField::Industry),
            other => Err(Error::param(
                "confounder",
                format!("expected `company` or `industry`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub window_id: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub company: String,
    pub industry: String,
    pub max_residual: f64,
}

impl FrameRow {
    pub fn confounder(&self, field: ConfounderField) -> &str {
        match field {
            ConfounderField::Company => &self.company,
            ConfounderField::Industry => &self.industry,
        }
    }
}

/// Window id → (company, industry).
#[derive(Debug, Clone, Default)]
pub struct WindowLabels {
    labels: BTreeMap<String, (String, String)>,
}

impl WindowLabels {
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a EvalWindow>) -> Self {
        Self {
            labels: windows
                .into_iter()
                .map(|w| {
                    (
                        w.window_id.clone(),
                        (w.company.clone(), w.industry.clone()),
                    )
                })
                .collect(),
        }
    }

    pub fn insert(&mut self, window_id: impl Into<String>, company: impl Into<String>, industry: impl Into<String>) {
        self.labels
            .insert(window_id.into(), (company.into(), industry.into()));
    }

    pub fn get(&self, window_id: &str) -> Option<(&str, &str)> {
        self.labels
            .get(window_id)
            .map(|(c, i)| (c.as_str(), i.as_str()))
    }

    pub fn contains(&self, window_id: &str) -> bool {
        self.labels.contains_key(window_id)
    }
}

/// Flat table of `(model, perturbation, company, industry, R_max)` rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalFrame {
    pub rows: Vec<FrameRow>,
}

impl CausalFrame {
    pub fn new(rows: Vec<FrameRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select<'a>(
        &'a self,
        model: &'a str,
        perturbation: Perturbation,
    ) -> impl Iterator<Item = &'a FrameRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model_id == model && r.perturbation == perturbation)
    }

    pub fn by_perturbation(&self) -> BTreeMap<Perturbation, Vec<&FrameRow>> {
        let mut out: BTreeMap<Perturbation, Vec<&FrameRow>> = BTreeMap::new();
        for row in &self.rows {
            out.entry(row.perturbation).or_default().push(row);
        }
        out
    }
}

pub fn build_causal_frame(records: &[ResidualRecord], labels: &WindowLabels) -> Result<CausalFrame> {
    let rows = records
        .iter()
        .map(|rec| {
            let (company, industry) = labels
                .get(&rec.window_id)
                .ok_or_else(|| Error::UnknownWindow(rec.window_id.clone()))?;
            Ok(FrameRow {
                window_id: rec.window_id.clone(),
                model_id: rec.model_id.clone(),
                perturbation: rec.perturbation,
                company: company.to_string(),
                industry: industry.to_string(),
                max_residual: rec.max_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CausalFrame { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize) -> LabeledSeries {
        let start = NaiveDate::from_ymd_opt(2023, 3, 28).unwrap();
        LabeledSeries::new(
            (0..len).map(|i| 100.0 + i as f64).collect(),
            (0..len)
                .map(|i| start + chrono::Duration::days(i as i64))
                .collect(),
            "META",
            "tech",
        )
        .unwrap()
    }

    fn window(truth: Vec<f64>) -> EvalWindow {
        EvalWindow {
            window_id: "w".into(),
            company: "META".into(),
            industry: "tech".into(),
            offset: 0,
            history: vec![1.0],
            truth,
        }
    }

    fn pred(prediction: Vec<f64>) -> PredictionRecord {
        PredictionRecord {
            window_id: "w".into(),
            model_id: "m".into(),
            perturbation: Perturbation::P0,
            prediction,
        }
    }

    #[test]
    fn exact_length_gives_one_window() {
        let w = slide_windows(&series(100), 80, 20, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].history.len(), 80);
        assert_eq!(w[0].truth.len(), 20);
    }

    #[test]
    fn window_count_matches_offset_enumeration() {
        for (len, stride) in [(102, 1), (130, 3), (100, 7), (157, 5)] {
            let s = series(len);
            let w = slide_windows(&s, 80, 20, stride).unwrap();
            let offsets: Vec<usize> = (0..len).step_by(stride).filter(|o| o + 100 <= len).collect();
            assert_eq!(w.iter().map(|w| w.offset).collect::<Vec<_>>(), offsets);
        }
        let offsets: Vec<usize> = slide_windows(&series(102), 80, 20, 1)
            .unwrap()
            .iter()
            .map(|w| w.offset)
            .collect();
        assert_eq!(offsets, vec![0, 1, 2]);
    }

    #[test]
    fn defaults_follow_prompt_lengths() {
        assert_eq!((DEFAULT_HISTORY, DEFAULT_HORIZON), (80, 20));
    }

    #[test]
    fn short_series_names_minimum() {
        let err = slide_windows(&series(99), 80, 20, 1).unwrap_err();
        assert!(err.to_string().contains("at least 100"), "{err}");
    }

    #[test]
    fn zero_parameters_rejected() {
        assert!(slide_windows(&series(100), 0, 20, 1).is_err());
        assert!(slide_windows(&series(100), 80, 0, 1).is_err());
        assert!(slide_windows(&series(100), 80, 20, 0).is_err());
    }

    #[test]
    fn timestamps_must_increase() {
        let d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        assert!(LabeledSeries::new(vec![1.0, 2.0], vec![d, d], "A", "x").is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_residual() {
        let r = residuals(&pred(vec![5.0, 6.0]), &window(vec![5.0, 6.0]), ResidualMode::Absolute).unwrap();
        assert_eq!(r.residuals, vec![0.0, 0.0]);
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn absolute_max_picks_negative_error() {
        let r = residuals(&pred(vec![12.0, 7.0]), &window(vec![10.0, 10.0]), ResidualMode::Absolute).unwrap();
        assert_eq!(r.residuals, vec![2.0, -3.0]);
        assert_eq!(r.max_residual, 3.0);
        let s = residuals(&pred(vec![12.0, 7.0]), &window(vec![10.0, 10.0]), ResidualMode::Signed).unwrap();
        assert_eq!(s.max_residual, 2.0);
    }

    #[test]
    fn residual_errors() {
        assert!(matches!(
            residuals(&pred(vec![1.0]), &window(vec![1.0, 2.0]), ResidualMode::Absolute),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            residuals(&pred(vec![1.0, f64::NAN]), &window(vec![1.0, 2.0]), ResidualMode::Absolute),
            Err(Error::NonFinite { index: 1 })
        ));
        let mut p = pred(vec![1.0]);
        p.window_id = "other".into();
        assert!(residuals(&p, &window(vec![1.0]), ResidualMode::Absolute).is_err());
    }

    #[test]
    fn frame_join() {
        assert!(build_causal_frame(&[], &WindowLabels::default()).unwrap().is_empty());

        let mut labels = WindowLabels::default();
        labels.insert("a", "META", "tech");
        labels.insert("b", "PFE", "pharma");
        let rec = |w: &str| ResidualRecord {
            window_id: w.into(),
            model_id: "m".into(),
            perturbation: Perturbation::P0,
            residuals: vec![1.0],
            max_residual: 1.0,
        };
        let frame = build_causal_frame(&[rec("a"), rec("b"), rec("a")], &labels).unwrap();
        let industries: Vec<&str> = frame.rows.iter().map(|r| r.industry.as_str()).collect();
        assert_eq!(industries, vec!["tech", "pharma", "tech"]);
        assert!(matches!(
            build_causal_frame(&[rec("zzz")], &labels),
            Err(Error::UnknownWindow(_))
        ));
    }

    #[test]
    fn frame_groups_by_perturbation() {
        let mut labels = WindowLabels::default();
        let companies = ["META", "GOOG", "PFE", "MRK", "WFC", "C"];
        let mut records = Vec::new();
        for c in companies {
            labels.insert(c, c, "x");
            for p in Perturbation::ALL {
                records.push(ResidualRecord {
                    window_id: c.into(),
                    model_id: "m".into(),
                    perturbation: p,
                    residuals: vec![0.0],
                    max_residual: 0.0,
                });
            }
        }
        let frame = build_causal_frame(&records, &labels).unwrap();
        let groups = frame.by_perturbation();
        assert_eq!(groups.len(), 7);
        assert!(groups.values().all(|g| g.len() == 6));
    }

    proptest! {
        #[test]
        fn windows_are_contiguous_slices(len in 100usize..200, n in 1usize..60, d in 1usize..30, stride in 1usize..9) {
            let s = series(len);
            for w in slide_windows(&s, n, d, stride).unwrap() {
                let joined: Vec<f64> = w.history.iter().chain(&w.truth).copied().collect();
                prop_assert_eq!(&joined[..], &s.values[w.offset..w.offset + n + d]);
            }
        }

        #[test]
        fn residual_antisymmetry(values in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
            let fwd = residuals(&pred(a.clone()), &window(b.clone()), ResidualMode::Absolute).unwrap();
            let back = residuals(&pred(b), &window(a), ResidualMode::Absolute).unwrap();
            for (x, y) in fwd.residuals.iter().zip(&back.residuals) {
                prop_assert_eq!(*x, -*y);
            }
            prop_assert_eq!(fwd.max_residual, back.max_residual);
        }

        #[test]
        fn max_residual_permutation_invariant(mut r in prop::collection::vec(-1e3f64..1e3, 1..30), seed in any::<u64>()) {
            let before = max_residual(&r, ResidualMode::Absolute);
            let k = (seed as usize) % r.len();
            r.rotate_left(k);
            r.reverse();
            prop_assert_eq!(before, max_residual(&r, ResidualMode::Absolute));
        }
    }
}
