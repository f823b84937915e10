//! Declarative run configuration (TOML) and its validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::{derive_seed, HttpEndpoint, Modality, DEFAULT_BIASED_OFFSET};
use crate::imaging::DEFAULT_OMEGA0;
use crate::ingest::DatasetManifest;
use crate::metrics::WrsConfig;
use crate::perturb::{Perturbation, TreatmentDistribution};
use crate::rating::DEFAULT_LEVELS;
use crate::series::{ConfounderField, ResidualMode, DEFAULT_HISTORY, DEFAULT_HORIZON};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_n() -> usize {
    DEFAULT_HISTORY
}
fn default_d() -> usize {
    DEFAULT_HORIZON
}
fn default_stride() -> usize {
    1
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            d: default_d(),
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default = "all_perturbations")]
    pub enabled: Vec<Perturbation>,
    /// Every-n-th period for P1 to P3; defaults to the window length.
    #[serde(default)]
    pub period: Option<usize>,
    #[serde(default)]
    pub phase: usize,
}

fn all_perturbations() -> Vec<Perturbation> {
    Perturbation::ALL.to_vec()
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            enabled: all_perturbations(),
            period: None,
            phase: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub name: String,
    pub field: ConfounderField,
    pub favored: String,
    #[serde(default = "default_ratio")]
    pub weight_ratio: f64,
}

fn default_ratio() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "S_a")]
    Ar,
    #[serde(rename = "S_b")]
    Biased,
    #[serde(rename = "S_r")]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArParams {
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_d_diff")]
    pub d_diff: usize,
}

fn default_p() -> usize {
    5
}
fn default_d_diff() -> usize {
    1
}

impl Default for ArParams {
    fn default() -> Self {
        Self {
            p: default_p(),
            d_diff: default_d_diff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasedParams {
    #[serde(default = "default_offsets")]
    pub offsets: std::collections::BTreeMap<String, f64>,
    #[serde(default = "default_offset")]
    pub default_offset: Option<f64>,
}

fn default_offsets() -> std::collections::BTreeMap<String, f64> {
    [("META".to_string(), 0.0), ("GOOG".to_string(), 200.0)].into()
}
fn default_offset() -> Option<f64> {
    Some(DEFAULT_BIASED_OFFSET)
}

impl Default for BiasedParams {
    fn default() -> Self {
        Self {
            offsets: default_offsets(),
            default_offset: default_offset(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default = "all_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub ar: ArParams,
    #[serde(default)]
    pub biased: BiasedParams,
    #[serde(default)]
    pub external: Vec<ExternalSource>,
    #[serde(default)]
    pub http: Vec<HttpEndpoint>,
}

fn all_baselines() -> Vec<Baseline> {
    vec![Baseline::Ar, Baseline::Biased, Baseline::Random]
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            baselines: all_baselines(),
            ar: ArParams::default(),
            biased: BiasedParams::default(),
            external: Vec::new(),
            http: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub residual_mode: ResidualMode,
    #[serde(default)]
    pub wrs: WrsConfig,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
}

fn default_levels() -> usize {
    DEFAULT_LEVELS
}
fn default_omega0() -> f64 {
    DEFAULT_OMEGA0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            residual_mode: ResidualMode::default(),
            wrs: WrsConfig::default(),
            omega0: default_omega0(),
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DatasetManifest,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub perturbations: PerturbationConfig,
    /// Empty means one distribution per industry and one per company.
    #[serde(default)]
    pub distributions: Vec<DistributionSpec>,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One failed check, located by its dotted path in the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: e.span().map(|s| locate(text, s.start)).unwrap_or_else(|| "<root>".into()),
            reason: e.message().to_string(),
        })?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn period(&self) -> usize {
        self.perturbations.period.unwrap_or(self.window.n)
    }

    /// Configured distributions, or the defaults: one favouring each
    /// industry (`DI1..`) then one favouring each company (`DC1..`), in
    /// manifest order. Seeds derive from the global seed and the name.
    pub fn treatment_distributions(&self) -> Vec<TreatmentDistribution> {
        let specs = if self.distributions.is_empty() {
            let mut industries: Vec<&str> = Vec::new();
            for e in &self.data.entries {
                if !industries.contains(&e.industry.as_str()) {
                    industries.push(&e.industry);
                }
            }
            let di = industries.iter().enumerate().map(|(i, ind)| DistributionSpec {
                name: format!("DI{}", i + 1),
                field: ConfounderField::Industry,
                favored: ind.to_string(),
                weight_ratio: default_ratio(),
            });
            let dc = self.data.entries.iter().enumerate().map(|(i, e)| DistributionSpec {
                name: format!("DC{}", i + 1),
                field: ConfounderField::Company,
                favored: e.company.clone(),
                weight_ratio: default_ratio(),
            });
            di.chain(dc).collect()
        } else {
            self.distributions.clone()
        };
        specs
            .into_iter()
            .map(|s| TreatmentDistribution {
                seed: derive_seed(self.seed, &s.name),
                name: s.name,
                field: s.field,
                favored: s.favored,
                weight_ratio: s.weight_ratio,
            })
            .collect()
    }

    /// Every violated invariant; empty when the config is usable.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut bad = |path: &str, reason: String| {
            issues.push(ConfigIssue {
                path: path.to_string(),
                reason,
            })
        };
        if self.version != CONFIG_VERSION {
            bad("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }

        if self.data.entries.is_empty() {
            bad("data.entries", "no series listed".into());
        }
        let mut companies = BTreeSet::new();
        for (i, e) in self.data.entries.iter().enumerate() {
            if !companies.insert(e.company.as_str()) {
                bad(&format!("data.entries[{i}].company"), format!("`{}` listed twice", e.company));
            }
            let p = self.resolve(&e.path);
            if !p.is_file() {
                bad(&format!("data.entries[{i}].path"), format!("file not found: {}", p.display()));
            }
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            if s > e {
                bad("data.start", format!("{s} is after data.end {e}"));
            }
        }

        if self.window.n < 2 {
            bad("window.n", "history length must be at least 2".into());
        }
        if self.window.d < 1 {
            bad("window.d", "horizon must be at least 1".into());
        }
        if self.window.stride < 1 {
            bad("window.stride", "stride must be at least 1".into());
        }

        if !self.perturbations.enabled.contains(&Perturbation::P0) {
            bad("perturbations.enabled", "P0 (control) must be enabled".into());
        }
        let unique: BTreeSet<_> = self.perturbations.enabled.iter().collect();
        if unique.len() != self.perturbations.enabled.len() {
            bad("perturbations.enabled", "duplicate perturbation".into());
        }
        if self.perturbations.period == Some(0) {
            bad("perturbations.period", "period must be at least 1".into());
        }

        let industries = self.data.industries();
        let mut names = BTreeSet::new();
        for (i, d) in self.distributions.iter().enumerate() {
            if !names.insert(d.name.as_str()) {
                bad(&format!("distributions[{i}].name"), format!("`{}` used twice", d.name));
            }
            let known = match d.field {
                ConfounderField::Industry => industries.contains(d.favored.as_str()),
                ConfounderField::Company => companies.contains(d.favored.as_str()),
            };
            if !known {
                bad(
                    &format!("distributions[{i}].favored"),
                    format!("`{}` is not a {} in data.entries", d.favored, d.field),
                );
            }
            if !(d.weight_ratio > 0.0 && d.weight_ratio.is_finite()) {
                bad(&format!("distributions[{i}].weight_ratio"), "must be positive".into());
            }
        }

        let m = &self.models;
        if m.baselines.is_empty() && m.external.is_empty() && m.http.is_empty() {
            bad("models", "no models configured".into());
        }
        if m.baselines.iter().collect::<BTreeSet<_>>().len() != m.baselines.len() {
            bad("models.baselines", "duplicate baseline".into());
        }
        if m.ar.p == 0 {
            bad("models.ar.p", "lag order must be at least 1".into());
        }
        if m.ar.p + m.ar.d_diff >= self.window.n {
            bad("models.ar", format!("p + d_diff must be below window.n ({})", self.window.n));
        }
        for (i, e) in m.external.iter().enumerate() {
            let p = self.resolve(&e.path);
            if !p.is_file() {
                bad(&format!("models.external[{i}].path"), format!("file not found: {}", p.display()));
            }
        }
        for (i, h) in m.http.iter().enumerate() {
            if !(h.url.starts_with("http://") || h.url.starts_with("https://")) {
                bad(&format!("models.http[{i}].url"), format!("not an http(s) url: `{}`", h.url));
            }
            if h.auth_header.is_some() != h.secret_env.is_some() {
                bad(
                    &format!("models.http[{i}]"),
                    "auth_header and secret_env must be set together".into(),
                );
            }
            if let Some(var) = &h.secret_env {
                if std::env::var_os(var).is_none() {
                    bad(&format!("models.http[{i}].secret_env"), format!("environment variable `{var}` is not set"));
                }
            }
            if h.max_in_flight == 0 {
                bad(&format!("models.http[{i}].max_in_flight"), "must be at least 1".into());
            }
            if h.attempts == 0 {
                bad(&format!("models.http[{i}].attempts"), "must be at least 1".into());
            }
            if !(h.timeout_secs > 0.0) {
                bad(&format!("models.http[{i}].timeout_secs"), "must be positive".into());
            }
            if h.modality == Modality::NumericImage && !self.perturbations.enabled.iter().any(|p| p.is_image()) {
                log::info!("models.http[{i}] takes images but no image perturbation is enabled");
            }
        }

        if self.metrics.levels < 1 {
            bad("metrics.levels", "L must be at least 1".into());
        }
        if let Err(e) = self.metrics.wrs.validate() {
            bad("metrics.wrs", e.to_string());
        }
        if !(self.metrics.omega0 > 0.0) {
            bad("metrics.omega0", "must be positive".into());
        }
        if self.jobs == Some(0) {
            bad("jobs", "must be at least 1".into());
        }
        issues
    }

    /// Hex SHA-256 of the canonical serialized config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Human position `line:col` of a byte offset.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    format!("line {line}, column {col}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dir: &Path) -> String {
        std::fs::write(dir.join("a.csv"), "Date,Close\n2024-01-02,1\n").unwrap();
        std::fs::write(dir.join("b.csv"), "Date,Close\n2024-01-02,1\n").unwrap();
        r#"
seed = 3
[data]
entries = [
  { path = "a.csv", company = "A", industry = "X" },
  { path = "b.csv", company = "B", industry = "Y" },
]
"#
        .to_string()
    }

    #[test]
    fn minimal_config_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml(&minimal(dir.path()), dir.path()).unwrap();
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
        assert_eq!(cfg.window, WindowConfig::default());
        assert_eq!(cfg.period(), 80);
        let names: Vec<String> = cfg.treatment_distributions().into_iter().map(|d| d.name).collect();
        assert_eq!(names, ["DI1", "DI2", "DC1", "DC2"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal(dir.path()) + "\n[metrics]\nlevel = 3\n";
        match RunConfig::from_toml(&text, dir.path()) {
            Err(Error::Config { reason, .. }) => assert!(reason.contains("level")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn issues_are_itemized() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal(dir.path()).replace("b.csv\"", "missing.csv\"")
            + "\n[metrics]\nlevels = 0\n[[distributions]]\nname = \"D\"\nfield = \"company\"\nfavored = \"Q\"\n";
        let cfg = RunConfig::from_toml(&text, dir.path()).unwrap();
        let paths: Vec<String> = cfg.validate().into_iter().map(|i| i.path).collect();
        assert!(paths.contains(&"data.entries[1].path".to_string()));
        assert!(paths.contains(&"metrics.levels".to_string()));
        assert!(paths.contains(&"distributions[0].favored".to_string()));
    }

    #[test]
    fn digest_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunConfig::from_toml(&minimal(dir.path()), dir.path()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }
}
