//! Robustness metrics (WRS, APE, PIE%) over causal frames and accuracy
//! metrics (SMAPE, MASE, sign accuracy) over single forecasts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::Perturbation;
use crate::rating::Direction;
use crate::series::{CausalFrame, ConfounderField, FrameRow};
use crate::stats::{propensity, psm_match, students_t, t_critical, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "WRS_I")]
    WrsIndustry,
    #[serde(rename = "WRS_C")]
    WrsCompany,
    #[serde(rename = "APE_I")]
    ApeIndustry,
    #[serde(rename = "APE_C")]
    ApeCompany,
    #[serde(rename = "PIE_I")]
    PieIndustry,
    #[serde(rename = "PIE_C")]
    PieCompany,
    #[serde(rename = "SMAPE")]
    Smape,
    #[serde(rename = "MASE")]
    Mase,
    #[serde(rename = "SIGN_ACC")]
    SignAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::WrsIndustry,
        Metric::WrsCompany,
        Metric::ApeIndustry,
        Metric::ApeCompany,
        Metric::PieIndustry,
        Metric::PieCompany,
        Metric::Smape,
        Metric::Mase,
        Metric::SignAccuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::WrsIndustry => "WRS_I",
            Metric::WrsCompany => "WRS_C",
            Metric::ApeIndustry => "APE_I",
            Metric::ApeCompany => "APE_C",
            Metric::PieIndustry => "PIE_I",
            Metric::PieCompany => "PIE_C",
            Metric::Smape => "SMAPE",
            Metric::Mase => "MASE",
            Metric::SignAccuracy => "SIGN_ACC",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::SignAccuracy => Direction::HigherIsBetter,
            _ => Direction::LowerIsBetter,
        }
    }

    pub fn scope(self) -> Scope {
        match self {
            Metric::WrsIndustry | Metric::ApeIndustry | Metric::PieIndustry => Scope::Industry,
            Metric::WrsCompany | Metric::ApeCompany | Metric::PieCompany => Scope::Company,
            _ => Scope::None,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("metric", format!("unknown metric `{s}`")))
    }
}

/// Which sensitive attribute a score was computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Company,
    Industry,
    None,
}

impl From<ConfounderField> for Scope {
    fn from(f: ConfounderField) -> Self {
        match f {
            ConfounderField::Company => Scope::Company,
            ConfounderField::Industry => Scope::Industry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScore {
    pub metric: String,
    pub model_id: String,
    pub perturbation: Perturbation,
    pub confounder: Scope,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrsConfig {
    pub cis: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for WrsConfig {
    fn default() -> Self {
        Self {
            cis: vec![95.0, 75.0, 60.0],
            weights: vec![1.0, 0.8, 0.6],
        }
    }
}

impl WrsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cis.len() != self.weights.len() || self.cis.is_empty() {
            return Err(Error::param(
                "wrs",
                format!(
                    "cis and weights must be non-empty and of equal length ({} vs {})",
                    self.cis.len(),
                    self.weights.len()
                ),
            ));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::param("wrs.weights", format!("weights must be positive, got {w}")));
        }
        if let Some(c) = self.cis.iter().find(|c| !(**c > 0.0 && **c < 100.0)) {
            return Err(Error::param("wrs.cis", format!("confidence levels must be in (0, 100), got {c}")));
        }
        Ok(())
    }
}

/// Weighted rejection count over every unordered pair of the given groups.
pub fn wrs_groups(groups: &[(&str, Vec<f64>)], config: &WrsConfig) -> Result<f64> {
    config.validate()?;
    if let Some((name, v)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Insufficient(format!(
            "group `{name}` has {} row(s), WRS needs at least 2",
            v.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let t = students_t(&groups[i].1, &groups[j].1)?;
            for (ci, w) in config.cis.iter().zip(&config.weights) {
                if t.t.abs() > t_critical(*ci, t.dof)? {
                    total += w;
                }
            }
        }
    }
    Ok(total)
}

fn grouped<'a>(rows: impl Iterator<Item = &'a FrameRow>, key: impl Fn(&FrameRow) -> &str) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        out.entry(key(r).to_string()).or_default().push(r.max_residual);
    }
    out
}

/// WRS across industries, or across companies within each industry (summed).
pub fn wrs(
    frame: &CausalFrame,
    model: &str,
    perturbation: Perturbation,
    group_field: ConfounderField,
    config: &WrsConfig,
) -> Result<RawScore> {
    let (metric, value) = match group_field {
        ConfounderField::Industry => {
            let groups = grouped(frame.select(model, perturbation), |r| &r.industry);
            if groups.len() < 2 {
                return Err(Error::Insufficient(format!(
                    "WRS_I for `{model}` {perturbation}: {} industry group(s), need 2",
                    groups.len()
                )));
            }
            let g: Vec<(&str, Vec<f64>)> = groups.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            (Metric::WrsIndustry, wrs_groups(&g, config)?)
        }
        ConfounderField::Company => {
            let mut industries: BTreeMap<&str, Vec<&FrameRow>> = BTreeMap::new();
            for r in frame.select(model, perturbation) {
                industries.entry(r.industry.as_str()).or_default().push(r);
            }
            let mut total = 0.0;
            let mut compared = 0;
            for rows in industries.values() {
                let groups = grouped(rows.iter().copied(), |r| &r.company);
                if groups.len() < 2 {
                    continue;
                }
                compared += 1;
                let g: Vec<(&str, Vec<f64>)> = groups.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                total += wrs_groups(&g, config)?;
            }
            if compared == 0 {
                return Err(Error::Insufficient(format!(
                    "WRS_C for `{model}` {perturbation}: no industry has two companies"
                )));
            }
            (Metric::WrsCompany, total)
        }
    };
    Ok(RawScore {
        metric: metric.as_str().into(),
        model_id: model.into(),
        perturbation,
        confounder: group_field.into(),
        value,
    })
}

/// Observational and matched effect estimates for one treatment vs control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    /// Matched (deconfounded) effect on the treated, signed.
    pub ape_signed: f64,
    /// Raw difference of group means, signed.
    pub observational_signed: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_matched: usize,
    pub unmatchable: Vec<String>,
}

impl CausalEstimate {
    pub fn ape(&self) -> f64 {
        self.ape_signed.abs()
    }

    pub fn ape_observational(&self) -> f64 {
        self.observational_signed.abs()
    }

    pub fn pie_percent(&self) -> f64 {
        (self.ape_observational() - self.ape()).abs() * 100.0
    }
}

/// Estimate the effect of `treated` on `outcome` adjusting for `confounder`.
pub fn estimate_effect(treated: &[bool], confounder: &[&str], outcome: &[f64]) -> Result<CausalEstimate> {
    if treated.len() != confounder.len() || treated.len() != outcome.len() {
        return Err(Error::LengthMismatch {
            expected: treated.len(),
            got: confounder.len().min(outcome.len()),
        });
    }
    let units: Vec<Unit<'_>> = treated
        .iter()
        .zip(confounder)
        .map(|(&t, &c)| Unit { treated: t, confounder: c })
        .collect();
    let fit = propensity(&units)?;
    let sample = psm_match(&units, &fit.scores)?;
    if sample.pairs.is_empty() {
        return Err(Error::Insufficient("no treated unit could be matched".into()));
    }
    let mean_of = |want: bool| {
        let v: Vec<f64> = treated
            .iter()
            .zip(outcome)
            .filter(|(t, _)| **t == want)
            .map(|(_, y)| *y)
            .collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (mt, n_treated) = mean_of(true);
    let (mc, n_control) = mean_of(false);
    Ok(CausalEstimate {
        ape_signed: sample.att(outcome)?,
        observational_signed: mt - mc,
        n_treated,
        n_control,
        n_matched: sample.pairs.len(),
        unmatchable: fit.unmatchable,
    })
}

/// Effect of `perturbation` against P0 rows for one model.
pub fn causal_estimate(
    frame: &CausalFrame,
    model: &str,
    perturbation: Perturbation,
    field: ConfounderField,
) -> Result<CausalEstimate> {
    if perturbation == Perturbation::P0 {
        return Err(Error::param("perturbation", "the control arm has no effect to estimate"));
    }
    let rows: Vec<&FrameRow> = frame
        .rows
        .iter()
        .filter(|r| r.model_id == model && (r.perturbation == perturbation || r.perturbation == Perturbation::P0))
        .collect();
    let treated: Vec<bool> = rows.iter().map(|r| r.perturbation == perturbation).collect();
    if !treated.iter().any(|t| *t) || treated.iter().all(|t| *t) {
        return Err(Error::Insufficient(format!(
            "`{model}` needs rows under both {perturbation} and P0"
        )));
    }
    let conf: Vec<&str> = rows.iter().map(|r| r.confounder(field)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.max_residual).collect();
    estimate_effect(&treated, &conf, &y)
}

fn causal_score(metric: Metric, model: &str, p: Perturbation, field: ConfounderField, value: f64) -> RawScore {
    RawScore {
        metric: metric.as_str().into(),
        model_id: model.into(),
        perturbation: p,
        confounder: field.into(),
        value,
    }
}

pub fn ape(frame: &CausalFrame, model: &str, perturbation: Perturbation, field: ConfounderField) -> Result<RawScore> {
    let est = causal_estimate(frame, model, perturbation, field)?;
    let metric = match field {
        ConfounderField::Industry => Metric::ApeIndustry,
        ConfounderField::Company => Metric::ApeCompany,
    };
    Ok(causal_score(metric, model, perturbation, field, est.ape()))
}

pub fn pie_percent(
    frame: &CausalFrame,
    model: &str,
    perturbation: Perturbation,
    field: ConfounderField,
) -> Result<RawScore> {
    let est = causal_estimate(frame, model, perturbation, field)?;
    let metric = match field {
        ConfounderField::Industry => Metric::PieIndustry,
        ConfounderField::Company => Metric::PieCompany,
    };
    Ok(causal_score(metric, model, perturbation, field, est.pie_percent()))
}

fn check_lengths(truth: &[f64], prediction: &[f64]) -> Result<()> {
    if truth.len() != prediction.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: prediction.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Insufficient("empty forecast horizon".into()));
    }
    Ok(())
}

/// Symmetric mean absolute percentage error in `[0, 2]`. A step where both
/// values are zero contributes 0.
pub fn smape(truth: &[f64], prediction: &[f64]) -> Result<f64> {
    check_lengths(truth, prediction)?;
    let total: f64 = truth
        .iter()
        .zip(prediction)
        .map(|(x, y)| {
            let denom = (x.abs() + y.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (x - y).abs() / denom
            }
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Mean absolute scaled error against the one-step naive forecast on `train`.
pub fn mase(train: &[f64], truth: &[f64], prediction: &[f64]) -> Result<f64> {
    check_lengths(truth, prediction)?;
    if train.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: train.len(),
            required: 2,
        });
    }
    let scale = train.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (train.len() - 1) as f64;
    if scale == 0.0 {
        return Err(Error::Degenerate("constant training series gives a zero MASE denominator".into()));
    }
    let mae = truth.iter().zip(prediction).map(|(x, y)| (x - y).abs()).sum::<f64>() / truth.len() as f64;
    Ok(mae / scale)
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of steps whose predicted direction matches the actual one.
/// The first step of both series is measured from `anchor`.
pub fn sign_accuracy(truth: &[f64], prediction: &[f64], anchor: f64) -> Result<f64> {
    check_lengths(truth, prediction)?;
    let mut prev_t = anchor;
    let mut prev_p = anchor;
    let mut hits = 0usize;
    for (&t, &p) in truth.iter().zip(prediction) {
        if sign(t - prev_t) == sign(p - prev_p) {
            hits += 1;
        }
        prev_t = t;
        prev_p = p;
    }
    Ok(hits as f64 / truth.len() as f64)
}

/// Per-window accuracy values for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyObservation {
    pub company: String,
    pub perturbation: Perturbation,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub perturbation: Perturbation,
    /// Mean over companies of per-company window means.
    pub mean: f64,
    /// Sample standard deviation over all windows in the cell.
    pub std: f64,
    pub windows: usize,
    pub company_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub cells: Vec<AccuracyCell>,
    /// Mean over perturbations of the cell means.
    pub overall: f64,
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Average window → company → perturbation, in key order.
pub fn summarize_accuracy(obs: &[AccuracyObservation]) -> Result<AccuracySummary> {
    if obs.is_empty() {
        return Err(Error::Insufficient("no accuracy observations".into()));
    }
    let mut nested: BTreeMap<Perturbation, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for o in obs {
        nested
            .entry(o.perturbation)
            .or_default()
            .entry(o.company.as_str())
            .or_default()
            .push(o.value);
    }
    let cells: Vec<AccuracyCell> = nested
        .into_iter()
        .map(|(p, companies)| {
            let company_means: BTreeMap<String, f64> = companies
                .iter()
                .map(|(c, v)| (c.to_string(), v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let all: Vec<f64> = companies.values().flatten().copied().collect();
            AccuracyCell {
                perturbation: p,
                mean: company_means.values().sum::<f64>() / company_means.len() as f64,
                std: sample_std(&all),
                windows: all.len(),
                company_means,
            }
        })
        .collect();
    let overall = cells.iter().map(|c| c.mean).sum::<f64>() / cells.len() as f64;
    Ok(AccuracySummary { cells, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(p: Perturbation, company: &str, industry: &str, r: f64) -> FrameRow {
        FrameRow {
            window_id: format!("{company}-{r}"),
            model_id: "m".into(),
            perturbation: p,
            company: company.into(),
            industry: industry.into(),
            max_residual: r,
        }
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((smape(&[1.0], &[3.0]).unwrap() - 1.0).abs() < 1e-12);
        let v = smape(&[100.0, 100.0], &[110.0, 90.0]).unwrap();
        assert!((v - (10.0 / 105.0 + 10.0 / 95.0) / 2.0).abs() < 1e-12);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(smape(&[1.0, -2.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(smape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mase_examples() {
        let train = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert!((mase(&train, &[5.0, 6.0], &[5.5, 5.5]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mase(&train, &[5.0], &[5.0]).unwrap(), 0.0);
        assert!(matches!(mase(&[3.0, 3.0], &[1.0], &[1.0]), Err(Error::Degenerate(_))));
        assert!(mase(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn sign_accuracy_examples() {
        let truth = [1.0, 0.0, 1.0];
        let pred = [1.0, 2.0, 3.0];
        assert!((sign_accuracy(&truth, &pred, 0.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(sign_accuracy(&truth, &truth, 0.0).unwrap(), 1.0);
        // A flat step only matches a flat step.
        assert_eq!(sign_accuracy(&[1.0], &[1.5], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn wrs_examples() {
        let cfg = WrsConfig::default();
        let same = vec![("a", vec![1.0, 1.0, 1.0]), ("b", vec![1.0, 1.0, 1.0])];
        assert_eq!(wrs_groups(&same, &cfg).unwrap(), 0.0);
        let sep = vec![("a", vec![0.0, 0.1, 0.2]), ("b", vec![10.0, 10.1, 10.2])];
        assert!((wrs_groups(&sep, &cfg).unwrap() - 2.4).abs() < 1e-12);
        assert!(wrs_groups(&[("a", vec![1.0])], &cfg).is_err());
        let bad = WrsConfig {
            cis: vec![95.0],
            weights: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wrs_variants_on_frame() {
        let mut rows = Vec::new();
        for (c, i, base) in [("A", "x", 0.0), ("B", "x", 0.0), ("C", "y", 50.0), ("D", "y", 50.0)] {
            for k in 0..5 {
                rows.push(row(Perturbation::P0, c, i, base + f64::from(k)));
            }
        }
        let frame = CausalFrame::new(rows);
        let cfg = WrsConfig::default();
        let wi = wrs(&frame, "m", Perturbation::P0, ConfounderField::Industry, &cfg).unwrap();
        assert!((wi.value - 2.4).abs() < 1e-12);
        assert_eq!(wi.metric, "WRS_I");
        let wc = wrs(&frame, "m", Perturbation::P0, ConfounderField::Company, &cfg).unwrap();
        assert_eq!(wc.value, 0.0);
        assert!(wrs(&frame, "m", Perturbation::P1, ConfounderField::Industry, &cfg).is_err());
    }

    #[test]
    fn constant_shift_gives_exact_ape() {
        let mut rows = Vec::new();
        for (i, c) in ["a", "a", "b", "b", "b", "c"].iter().enumerate() {
            let base = i as f64;
            rows.push(row(Perturbation::P0, c, "i", base));
            rows.push(row(Perturbation::P2, c, "i", base + 5.0));
        }
        let frame = CausalFrame::new(rows);
        let s = ape(&frame, "m", Perturbation::P2, ConfounderField::Company).unwrap();
        // Within-category control means differ from treated values by 5 exactly.
        assert!((s.value - 5.0).abs() < 1e-12);
        assert!(ape(&frame, "m", Perturbation::P0, ConfounderField::Company).is_err());
    }

    #[test]
    fn confounded_instance() {
        // A: 3 treated, 1 control at 10. B: 1 treated, 3 controls at 2.
        let treated = [true, true, true, false, true, false, false, false];
        let conf = ["A", "A", "A", "A", "B", "B", "B", "B"];
        let y = [10.0, 10.0, 10.0, 10.0, 2.0, 2.0, 2.0, 2.0];
        let est = estimate_effect(&treated, &conf, &y).unwrap();
        assert!(est.ape().abs() < 1e-12);
        // Observational: (32/4) - (16/4) = 4.
        assert!((est.ape_observational() - 4.0).abs() < 1e-12);
        assert!((est.pie_percent() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_summary_nests_means() {
        let o = |c: &str, p, v| AccuracyObservation {
            company: c.into(),
            perturbation: p,
            value: v,
        };
        let s = summarize_accuracy(&[
            o("A", Perturbation::P0, 1.0),
            o("A", Perturbation::P0, 3.0),
            o("B", Perturbation::P0, 4.0),
            o("A", Perturbation::P1, 0.0),
        ])
        .unwrap();
        assert_eq!(s.cells[0].mean, 3.0);
        assert_eq!(s.cells[1].mean, 0.0);
        assert_eq!(s.overall, 1.5);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert_eq!(Metric::SignAccuracy.direction(), Direction::HigherIsBetter);
    }

    proptest! {
        #[test]
        fn smape_bounded(v in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..30)) {
            let (t, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let s = smape(&t, &p).unwrap();
            prop_assert!((0.0..=2.0).contains(&s));
        }

        #[test]
        fn mase_scale_invariant(train in prop::collection::vec(-100f64..100.0, 2..20), pairs in prop::collection::vec((-100f64..100.0, -100f64..100.0), 1..20), k in 0.01f64..100.0) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let Ok(a) = mase(&train, &t, &p) else { return Ok(()); };
            let sc = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let b = mase(&sc(&train), &sc(&t), &sc(&p)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn shifted_prediction_only_moves_first_step(v in prop::collection::vec((-10i32..10, -10i32..10), 1..30), shift in -50i32..50) {
            let t: Vec<f64> = v.iter().map(|x| f64::from(x.0)).collect();
            let p: Vec<f64> = v.iter().map(|x| f64::from(x.1)).collect();
            let ps: Vec<f64> = p.iter().map(|x| x + f64::from(shift)).collect();
            let a = sign_accuracy(&t, &p, 0.0).unwrap();
            let b = sign_accuracy(&t, &ps, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() <= 1.0 / t.len() as f64 + 1e-12);
        }

        #[test]
        fn wrs_affine_invariant(a in prop::collection::vec(-10f64..10.0, 3..12), b in prop::collection::vec(-10f64..10.0, 3..12), scale in 0.1f64..10.0, shift in -100f64..100.0) {
            let cfg = WrsConfig::default();
            let base = wrs_groups(&[("a", a.clone()), ("b", b.clone())], &cfg).unwrap();
            let f = |v: &[f64]| v.iter().map(|x| x * scale + shift).collect::<Vec<_>>();
            let moved = wrs_groups(&[("b", f(&b)), ("a", f(&a))], &cfg).unwrap();
            let t = students_t(&a, &b).unwrap().t.abs();
            // Skip draws whose |t| sits on a critical value within rounding.
            let near = cfg.cis.iter().any(|ci| (t - t_critical(*ci, (a.len() + b.len() - 2) as f64).unwrap()).abs() < 1e-6);
            prop_assume!(!near);
            prop_assert_eq!(base, moved);
        }
    }
}
