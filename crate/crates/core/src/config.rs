//! Configuration schema, presets and seed derivation.
//!
//! A config is a TOML (or JSON) document with named sections. The canonical
//! form is the compact JSON serialization of [`Config`]; its SHA-256 is the
//! config hash recorded in run manifests.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FlrError, Result};
use crate::filters::FilterKind;
use crate::lower_bounds::Smoothness;
use crate::par::ExecutionMode;
use crate::rates::{default_n_grid, HarnessParams, LambdaRule};
use crate::simulate::Scenario;
use crate::theory::Metric;

/// Stream labels. Each randomized consumer owns a distinct first label so
/// that no two consumers can draw from the same stream.
pub mod labels {
    pub const MIXING: u64 = 1;
    pub const REPLICATE: u64 = 2;
    pub const SIMULATE: u64 = 3;
    pub const CODEBOOK: u64 = 4;
    pub const SATURATION: u64 = 5;
    pub const NOISE_PROBE: u64 = 6;
    pub const CONCENTRATION_PROBE: u64 = 7;
}

const STREAM_DOMAIN: &[u8] = b"flr-stream-v1";

/// ChaCha20 stream keyed by `SHA-256(domain ‖ seed ‖ |labels| ‖ labels)`.
/// The stream depends only on the label path, never on the order in which
/// streams are requested.
pub fn derive_stream(base_seed: u64, labels: &[u64]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(STREAM_DOMAIN);
    h.update(base_seed.to_le_bytes());
    h.update((labels.len() as u64).to_le_bytes());
    for l in labels {
        h.update(l.to_le_bytes());
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha20Rng::from_seed(key)
}

fn default_kinds() -> Vec<FilterKind> {
    FilterKind::ALL.to_vec()
}
fn default_p_list() -> Vec<f64> {
    vec![1.0]
}
fn default_grid_size() -> usize {
    512
}
fn default_eta() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<FilterKind>,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            kinds: default_kinds(),
            p_list: default_p_list(),
            grid_size: default_grid_size(),
            eta: default_eta(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarnessCheck {
    /// Log–log slopes against theory.
    #[default]
    Slopes,
    /// Median L² error ordering across filters at one sample size.
    Saturation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSection {
    #[serde(default)]
    pub check: HarnessCheck,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default = "default_tol_est")]
    pub tolerance_estimation: f64,
    #[serde(default = "default_tol_pred")]
    pub tolerance_prediction: f64,
    /// Sample size of the saturation check; the largest grid point when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_n: Option<usize>,
    #[serde(default = "default_saturation_filters")]
    pub saturation_filters: Vec<FilterKind>,
}

fn default_metrics() -> Vec<Metric> {
    HarnessParams::default().metrics
}
fn default_replicates() -> usize {
    HarnessParams::default().replicates
}
fn default_tol_est() -> f64 {
    HarnessParams::default().tolerance_estimation
}
fn default_tol_pred() -> f64 {
    HarnessParams::default().tolerance_prediction
}
fn default_saturation_filters() -> Vec<FilterKind> {
    vec![FilterKind::SpectralCutoff, FilterKind::Tikhonov]
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            check: HarnessCheck::default(),
            metrics: default_metrics(),
            n_grid: default_n_grid(),
            replicates: default_replicates(),
            lambda_rule: LambdaRule::default(),
            tolerance_estimation: default_tol_est(),
            tolerance_prediction: default_tol_pred(),
            saturation_n: None,
            saturation_filters: default_saturation_filters(),
        }
    }
}

impl HarnessSection {
    pub fn params(&self, execution: ExecutionMode) -> HarnessParams {
        HarnessParams {
            metrics: self.metrics.clone(),
            n_grid: self.n_grid.clone(),
            replicates: self.replicates,
            lambda_rule: self.lambda_rule,
            tolerance_estimation: self.tolerance_estimation,
            tolerance_prediction: self.tolerance_prediction,
            execution,
        }
    }

    pub fn saturation_n(&self) -> usize {
        self.saturation_n
            .unwrap_or_else(|| self.n_grid.last().copied().unwrap_or(8192))
    }

    fn problems(&self) -> Vec<String> {
        let mut out = match self.check {
            HarnessCheck::Slopes => self.params(ExecutionMode::Sequential).problems(),
            HarnessCheck::Saturation => {
                let mut out = Vec::new();
                if self.replicates == 0 {
                    out.push("harness.replicates must be positive".into());
                }
                out
            }
        };
        if self.check == HarnessCheck::Saturation {
            if self.saturation_filters.len() < 2 {
                out.push("harness.saturation_filters needs at least two filters".into());
            }
            if self.saturation_n() < 2 {
                out.push("harness.saturation_n must be at least 2".into());
            }
        }
        out
    }
}

fn default_lb_n() -> usize {
    1000
}
fn default_lb_u() -> f64 {
    0.1
}
fn default_one() -> f64 {
    1.0
}
fn default_lb_t() -> f64 {
    4.0
}
fn default_lb_c() -> f64 {
    2.0
}

/// Lower-bound construction on `μ_i = i^{-t}`, `ξ_i = i^{-c}`, `i ≤ 2M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundSection {
    pub m: usize,
    #[serde(default = "default_lb_n")]
    pub n: usize,
    #[serde(default = "default_lb_u")]
    pub u: f64,
    #[serde(default = "default_one")]
    pub sigma2: f64,
    #[serde(default = "default_lb_t")]
    pub t: f64,
    #[serde(default = "default_lb_c")]
    pub c: f64,
    pub smoothness: Smoothness,
    #[serde(default)]
    pub seed: u64,
}

impl LowerBoundSection {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m < 8 {
            out.push(format!("lowerbound.m must be at least 8, got {}", self.m));
        }
        if self.m > 512 {
            out.push(format!("lowerbound.m must be at most 512, got {}", self.m));
        }
        if self.n == 0 {
            out.push("lowerbound.n must be positive".into());
        }
        if !(self.u > 0.0 && self.u < 0.125) {
            out.push(format!("lowerbound.u must satisfy 0 < u < 1/8, got {}", self.u));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            out.push(format!(
                "lowerbound.sigma2 must be positive (KL is undefined otherwise), got {}",
                self.sigma2
            ));
        }
        if !(self.t > 1.0) {
            out.push(format!("lowerbound.t must satisfy t > 1, got {}", self.t));
        }
        if !(self.c > 1.0) {
            out.push(format!("lowerbound.c must satisfy c > 1, got {}", self.c));
        }
        match self.smoothness {
            Smoothness::Commutative { alpha } if !(alpha > 0.0) => {
                out.push(format!("lowerbound.smoothness.alpha must be positive, got {alpha}"))
            }
            Smoothness::NonCommutative { s } if !(s > 0.0) => {
                out.push(format!("lowerbound.smoothness.s must be positive, got {s}"))
            }
            _ => {}
        }
        out
    }
}

fn default_sim_n() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "default_sim_n")]
    pub n: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n: default_sim_n() }
    }
}

/// Input of the `fit` command: either a simulated dataset (with optional
/// truth sidecar) or raw curves sampled on a grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    /// Curves sampled on a grid: header `s, s_1, …, s_G`, rows `id, x(s_1), …`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<String>,
    /// Responses for `curves`: header `id, y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<String>,
    /// Regularization parameter; the theorem schedule for the scenario when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl FitSection {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dataset.is_some() && self.curves.is_some() {
            out.push("fit.dataset and fit.curves are mutually exclusive".into());
        }
        if self.curves.is_some() && self.truth.is_some() {
            out.push("fit.truth applies to fit.dataset only".into());
        }
        if self.curves.is_some() != self.responses.is_some() {
            out.push("fit.curves and fit.responses must be given together".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                out.push(format!("fit.lambda must be positive, got {l}"));
            }
        }
        out
    }
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowerbound: Option<LowerBoundSection>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Config {
    /// Every violation across all sections.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(s) = &self.scenario {
            out.extend(s.problems());
        }
        if self.filter.kinds.is_empty() {
            out.push("filter.kinds must not be empty".into());
        }
        for &p in &self.filter.p_list {
            if !(p > 0.0 && p.is_finite()) {
                out.push(format!("filter.p_list entries must be positive, got {p}"));
            }
        }
        if self.filter.grid_size < 2 {
            out.push(format!("filter.grid_size must be at least 2, got {}", self.filter.grid_size));
        }
        if !(self.filter.eta > 0.0 && self.filter.eta.is_finite()) {
            out.push(format!("filter.eta must be positive, got {}", self.filter.eta));
        }
        out.extend(self.harness.problems());
        if let Some(lb) = &self.lowerbound {
            out.extend(lb.problems());
        }
        if self.simulate.n == 0 {
            out.push("simulate.n must be positive".into());
        }
        out.extend(self.fit.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FlrError::Validation(problems))
        }
    }

    /// Compact JSON with fields in declaration order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FlrError::Input(format!("cannot render config as TOML: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.scenario {
            s.seed = seed;
        }
        if let Some(lb) = &mut self.lowerbound {
            lb.seed = seed;
        }
    }

    /// Seed recorded in run manifests.
    pub fn base_seed(&self) -> u64 {
        self.scenario
            .as_ref()
            .map(|s| s.seed)
            .or_else(|| self.lowerbound.as_ref().map(|l| l.seed))
            .unwrap_or(0)
    }
}

/// Parses TOML, or JSON when the text starts with `{`. Syntax and schema
/// errors are reported as `Input`; range checks are not applied.
pub fn parse_config(text: &str) -> Result<Config> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| FlrError::Input(format!("config JSON: {e}")))
    } else {
        toml::from_str(text).map_err(|e| FlrError::Input(format!("config TOML: {e}")))
    }
}

/// Parses and validates, reporting every range violation at once.
pub fn validate_config(text: &str) -> Result<Config> {
    let cfg = parse_config(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub const PRESET_NAMES: [&str; 4] = [
    "comm-brownian-cubic-a05",
    "comm-saturation-a3",
    "noncomm-s1",
    "lowerbound-m16",
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "comm-brownian-cubic-a05" => include_str!("../presets/comm-brownian-cubic-a05.toml"),
        "comm-saturation-a3" => include_str!("../presets/comm-saturation-a3.toml"),
        "noncomm-s1" => include_str!("../presets/noncomm-s1.toml"),
        "lowerbound-m16" => include_str!("../presets/lowerbound-m16.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<Config> {
    let text = preset_text(name).ok_or_else(|| {
        FlrError::Input(format!(
            "unknown preset '{name}' (available: {})",
            PRESET_NAMES.join(", ")
        ))
    })?;
    validate_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Spectrum;
    use crate::theory::Mode;
    use rand::Rng;

    #[test]
    fn identical_paths_identical_streams() {
        let mut a = derive_stream(42, &[3, 1]);
        let mut b = derive_stream(42, &[3, 1]);
        for _ in 0..10_000 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_paths_differ() {
        let first = |seed, labels: &[u64]| derive_stream(seed, labels).random::<u64>();
        assert_ne!(first(42, &[1]), first(43, &[1]));
        assert_ne!(first(42, &[1]), first(42, &[2]));
        assert_ne!(first(42, &[1, 0]), first(42, &[1]));
        assert_ne!(first(42, &[]), first(42, &[0]));
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let n = 10_000;
        let mut a = derive_stream(7, &[1]);
        let mut b = derive_stream(7, &[2]);
        let xs: Vec<f64> = (0..n).map(|_| a.random::<f64>()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.random::<f64>()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 0.03, "corr = {corr}");
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(name));
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn preset_matches_definition() {
        let cfg = preset("comm-brownian-cubic-a05").unwrap();
        let s = cfg.scenario.unwrap();
        assert_eq!(s.mode, Mode::Commutative);
        assert_eq!(s.spectrum, Spectrum::BrownianCubic);
        assert_eq!((s.t, s.c, s.alpha), (4.0, 2.0, 0.5));
        assert_eq!(s.filter, FilterKind::Tikhonov);
        assert_eq!(cfg.harness.n_grid, default_n_grid());
        assert_eq!(cfg.harness.replicates, 50);
    }

    const BASE: &str = r#"
[scenario]
mode = "commutative"
m = 64
t = 4.0
c = 2.0
sigma = 0.5
filter = "tikhonov"
seed = 1
"#;

    #[test]
    fn range_violation_cites_range() {
        let text = BASE.replace("t = 4.0", "t = 0.5").replace("spectrum", "");
        let err = validate_config(&text).unwrap_err();
        let FlrError::Validation(problems) = err else { panic!("{err}") };
        assert!(problems.iter().any(|p| p.contains("t > 1")), "{problems:?}");
    }

    #[test]
    fn every_violation_reported() {
        let text = format!(
            "{}\n[lowerbound]\nm = 16\nu = 0.5\nsigma2 = 0.0\nsmoothness = {{ kind = \"commutative\", alpha = 0.5 }}\n",
            BASE.replace("c = 2.0", "c = 0.9")
        );
        let FlrError::Validation(problems) = validate_config(&text).unwrap_err() else { panic!() };
        assert!(problems.iter().any(|p| p.contains("c > 1")));
        assert!(problems.iter().any(|p| p.contains("u < 1/8")));
        assert!(problems.iter().any(|p| p.contains("sigma2")));
        // brownian-cubic also pins c = 2
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn two_violations_two_diagnostics() {
        let text = BASE.replace("sigma = 0.5", "sigma = -1.0").replace("m = 64", "m = 4");
        let FlrError::Validation(problems) = validate_config(&text).unwrap_err() else { panic!() };
        assert_eq!(problems.len(), 2, "{problems:?}");
    }

    #[test]
    fn syntax_errors_are_input_errors() {
        assert!(matches!(parse_config("[scenario\nm ="), Err(FlrError::Input(_))));
        assert!(matches!(parse_config("{\"bogus\": 1}"), Err(FlrError::Input(_))));
        assert!(matches!(parse_config("[harness]\nunknown_key = 3"), Err(FlrError::Input(_))));
    }

    #[test]
    fn round_trips() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let json = cfg.canonical_json();
            let back = parse_config(&json).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.canonical_json(), json);
            let toml_text = cfg.to_toml().unwrap();
            assert_eq!(parse_config(&toml_text).unwrap(), cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn hash_tracks_content() {
        let mut cfg = preset("noncomm-s1").unwrap();
        let h = cfg.hash();
        assert_eq!(h.len(), 64);
        cfg.override_seed(99);
        assert_ne!(cfg.hash(), h);
        assert_eq!(cfg.base_seed(), 99);
    }

    #[test]
    fn empty_config_is_valid() {
        let cfg = validate_config("").unwrap();
        assert_eq!(cfg, Config::default());
    }
    #[test]
    fn schema_lists_every_key() {
        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../../../schema/config.schema.json")).unwrap();
        let mut cfg = preset("comm-brownian-cubic-a05").unwrap();
        cfg.lowerbound = preset("lowerbound-m16").unwrap().lowerbound;
        cfg.harness.saturation_n = Some(100);
        cfg.scenario.as_mut().unwrap().mixing_seed = Some(1);
        cfg.fit = FitSection {
            dataset: Some("d".into()),
            truth: Some("t".into()),
            curves: Some("c".into()),
            responses: Some("r".into()),
            lambda: Some(0.1),
        };
        let value = serde_json::to_value(&cfg).unwrap();
        let keys = |v: &serde_json::Value| -> Vec<String> {
            let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        assert_eq!(keys(&value), keys(&schema["properties"]));
        for section in ["scenario", "filter", "harness", "lowerbound"] {
            assert_eq!(keys(&value[section]), keys(&schema["$defs"][section]["properties"]), "{section}");
        }
        for section in ["simulate", "fit", "output"] {
            assert_eq!(keys(&value[section]), keys(&schema["properties"][section]["properties"]), "{section}");
        }
    }
}
