//! Daily price CSV loading and dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::LabeledSeries;

/// Which price column to read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceField {
    #[default]
    Close,
    AdjClose,
}

impl PriceField {
    fn accepts(self, header: &str) -> bool {
        let h: String = header
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match self {
            PriceField::Close => h == "close",
            PriceField::AdjClose => h == "adjclose",
        }
    }

    fn column_name(self) -> &'static str {
        match self {
            PriceField::Close => "Close",
            PriceField::AdjClose => "Adj Close",
        }
    }
}

/// ISO `YYYY-MM-DD` or `MM/DD/YYYY`; anything else is rejected.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%m/%d/%Y"))
        .ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSeries {
    pub series: LabeledSeries,
    /// Rows dropped because the price did not parse as a finite number.
    pub skipped: usize,
}

pub fn load_csv(
    path: &Path,
    company: &str,
    industry: &str,
    field: PriceField,
) -> Result<LoadedSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |pred: &dyn Fn(&str) -> bool, name: &str| {
        headers.iter().position(pred).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
            available: headers.iter().collect::<Vec<_>>().join(", "),
        })
    };
    let date_col = find(&|h| h.trim().eq_ignore_ascii_case("date"), "Date")?;
    let price_col = find(&|h| field.accepts(h), field.column_name())?;

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    let mut skipped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let raw_date = rec.get(date_col).unwrap_or("");
        let date = parse_date(raw_date).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("unrecognized date `{raw_date}`"),
        })?;
        match rec.get(price_col).and_then(|p| p.trim().parse::<f64>().ok()) {
            Some(price) if price.is_finite() => rows.push((date, price)),
            _ => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} row(s) with unparseable price", path.display());
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("duplicate date {}", w[0].0),
        });
    }
    let (timestamps, values) = rows.into_iter().unzip();
    Ok(LoadedSeries {
        series: LabeledSeries::new(values, timestamps, company, industry)?,
        skipped,
    })
}

/// Zero-mean, unit-variance (population σ) rescaling; constant input maps to zeros.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::param("values", "standardize needs at least 2 values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    // Relative guard: σ that is pure rounding noise counts as constant.
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub company: String,
    pub industry: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Inclusive date bounds; `None` keeps everything.
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
    #[serde(default)]
    pub price_field: PriceField,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::param("entries", "manifest lists no series"));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.company.as_str()) {
                return Err(Error::param(
                    "entries",
                    format!("company `{}` listed twice", e.company),
                ));
            }
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return Err(Error::param("start", "start date after end date"));
            }
        }
        Ok(())
    }

    pub fn industries(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.industry.as_str()).collect()
    }

    /// Company → industry.
    pub fn company_industry(&self) -> BTreeMap<&str, &str> {
        self.entries
            .iter()
            .map(|e| (e.company.as_str(), e.industry.as_str()))
            .collect()
    }

    /// Load every entry, resolving relative paths against `base`, clipped to the date range.
    pub fn load(&self, base: &Path) -> Result<Vec<LabeledSeries>> {
        self.validate()?;
        self.entries
            .iter()
            .map(|e| {
                let path = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                let loaded = load_csv(&path, &e.company, &e.industry, self.price_field)?;
                self.clip(loaded.series)
            })
            .collect()
    }

    fn clip(&self, s: LabeledSeries) -> Result<LabeledSeries> {
        let keep: Vec<usize> = s
            .timestamps
            .iter()
            .enumerate()
            .filter(|(_, d)| self.start.is_none_or(|lo| **d >= lo) && self.end.is_none_or(|hi| **d <= hi))
            .map(|(i, _)| i)
            .collect();
        LabeledSeries::new(
            keep.iter().map(|&i| s.values[i]).collect(),
            keep.iter().map(|&i| s.timestamps[i]).collect(),
            s.company,
            s.industry,
        )
    }
}
