//! Run configuration: TOML file merged with command-line overrides and
//! validated before any computation.

use std::collections::BTreeSet;

use nbrdid::analysis::EstimandTarget;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: DataConfig,
    pub exposure: ExposureConfig,
    pub models: ModelsConfig,
    pub estimands: Vec<EstimandConfig>,
    pub inference: InferenceConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<String>,
    pub id: String,
    pub coords: Vec<String>,
    pub attributes: Vec<String>,
    pub treatment: String,
    pub pre: String,
    pub post: String,
    /// Earlier pre-period outcome for the placebo test.
    pub baseline: Option<String>,
    pub cluster: Option<String>,
    pub delimiter: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            id: "id".into(),
            coords: vec!["x".into(), "y".into()],
            attributes: vec![],
            treatment: "w".into(),
            pre: "y1".into(),
            post: "y2".into(),
            baseline: None,
            cluster: None,
            delimiter: ",".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureConfig {
    /// `any_treated_neighbor`, `fraction_binned` or `cluster_ratio`.
    pub kind: String,
    pub cutoff: f64,
    pub metric: String,
    pub edges: Vec<f64>,
    /// `cluster` or `unit` threshold weighting for `cluster_ratio`.
    pub weighting: String,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig { kind: "any_treated_neighbor".into(), cutoff: 0.3, metric: "chebyshev".into(), edges: vec![], weighting: "cluster".into() }
    }
}

impl ExposureConfig {
    pub fn uses_adjacency(&self) -> bool {
        self.kind != "cluster_ratio"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// `cbps` or `mle`.
    pub ps_method: String,
    pub w_terms: Vec<String>,
    pub g_terms: Vec<String>,
    /// `per_period` or `differenced`.
    pub outcome: String,
    pub pre_terms: Vec<String>,
    pub post_terms: Vec<String>,
    pub diff_terms: Vec<String>,
    pub cellwise: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            ps_method: "cbps".into(),
            w_terms: vec![],
            g_terms: vec![],
            outcome: "per_period".into(),
            pre_terms: vec![],
            post_terms: vec![],
            diff_terms: vec![],
            cellwise: false,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimandConfig {
    pub target: String,
    pub g: Option<i64>,
    pub g_ref: Option<i64>,
    pub w: Option<u8>,
    pub normalize: bool,
    pub covariates: Vec<String>,
}

impl Default for EstimandConfig {
    fn default() -> Self {
        EstimandConfig { target: String::new(), g: None, g_ref: None, w: None, normalize: true, covariates: vec![] }
    }
}

impl EstimandConfig {
    /// Parses `target` or `target:g`.
    pub fn parse_flag(s: &str) -> Result<Self, CliError> {
        let (target, g) = match s.split_once(':') {
            Some((t, g)) => (t, Some(g.trim().parse::<i64>().map_err(|_| CliError::Validation(format!("bad exposure level in `{s}`")))?)),
            None => (s, None),
        };
        Ok(EstimandConfig { target: target.trim().to_string(), g, ..Default::default() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Any of `ehw`, `shac`, `cluster`.
    pub methods: Vec<String>,
    pub kernel: String,
    /// Defaults to the exposure cutoff plus one distance bin.
    pub bandwidth: Option<f64>,
    /// `pairwise` or `integer`.
    pub binning: String,
    pub level: f64,
    /// `error` or `clamp`.
    pub eigen_policy: String,
    pub overlap_floor: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            methods: vec!["ehw".into(), "shac".into()],
            kernel: "bartlett".into(),
            bandwidth: None,
            binning: "pairwise".into(),
            level: 0.95,
            eigen_policy: "error".into(),
            overlap_floor: 0.01,
        }
    }
}

impl InferenceConfig {
    pub fn bandwidth_or_default(&self, cutoff: f64) -> f64 {
        self.bandwidth.unwrap_or(cutoff + 1.0)
    }
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

pub fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&std::path::Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("cannot read config `{}`: {e}", p.display())))?;
            parse_toml(&text, &format!("config `{}`", p.display()))
        }
    }
}

/// SHA-256 of the canonical JSON form.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn term_columns(term: &str) -> impl Iterator<Item = &str> {
    term.split('*').map(str::trim).filter(|f| !matches!(*f, "" | "1" | "W" | "G") && !f.starts_with("G=")).map(|f| f.strip_suffix("^2").unwrap_or(f))
}

impl EstimateConfig {
    /// Fills model terms left empty with defaults built from the attributes.
    pub fn with_default_terms(mut self) -> Self {
        let attrs = self.data.attributes.clone();
        let with = |head: &[&str], tail: &[&str]| -> Vec<String> { head.iter().map(|s| s.to_string()).chain(attrs.iter().cloned()).chain(tail.iter().map(|s| s.to_string())).collect() };
        let m = &mut self.models;
        if m.w_terms.is_empty() {
            m.w_terms = with(&["1"], &[]);
        }
        if m.g_terms.is_empty() {
            m.g_terms = with(&["1", "W"], &[]);
        }
        if m.pre_terms.is_empty() {
            m.pre_terms = with(&["1", "W"], &[]);
        }
        if m.post_terms.is_empty() {
            m.post_terms = with(&["1", "W"], &["G"]);
        }
        if m.diff_terms.is_empty() {
            m.diff_terms = with(&["1", "W"], &["G"]);
        }
        self
    }

    /// Columns available to model terms.
    pub fn available_columns(&self) -> BTreeSet<String> {
        let mut cols = BTreeSet::new();
        for a in &self.data.attributes {
            cols.insert(a.clone());
            if self.exposure.uses_adjacency() {
                cols.insert(format!("A.{a}"));
            }
            if self.data.cluster.is_some() {
                cols.insert(format!("C.{a}"));
            }
        }
        cols
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.estimands.is_empty() {
            return bad("no estimands requested".into());
        }
        if self.data.coords.is_empty() {
            return bad("at least one coordinate column is required".into());
        }
        if self.data.delimiter.len() != 1 {
            return bad("data.delimiter must be a single byte".into());
        }
        for e in &self.estimands {
            let target: EstimandTarget = e.target.parse().map_err(|_| CliError::Validation(format!("unknown estimand `{}`", e.target)))?;
            use EstimandTarget::*;
            if matches!(target, IpwDatt | RaDatt | DrDatt | DrSpillover | PretrendPlacebo) && e.g.is_none() {
                return bad(format!("estimand `{}` requires an exposure level g", e.target));
            }
            if target == DrSpillover && (e.g_ref.is_none() || e.w.is_none()) {
                return bad("dr_spillover requires g_ref and w".into());
            }
            if e.w.is_some_and(|w| w > 1) {
                return bad("estimand arm w must be 0 or 1".into());
            }
            if target == PretrendPlacebo && self.data.baseline.is_none() {
                return bad("pretrend_placebo requires data.baseline (the earlier pre-period outcome column)".into());
            }
            let cols = self.available_columns();
            for c in &e.covariates {
                if !cols.contains(c) {
                    return bad(format!("unknown column `{c}` in estimand covariates"));
                }
            }
        }
        match self.exposure.kind.as_str() {
            "any_treated_neighbor" | "fraction_binned" => {
                if self.exposure.cutoff.is_nan() || self.exposure.cutoff <= 0.0 {
                    return bad("exposure.cutoff must be positive".into());
                }
                if self.exposure.kind == "fraction_binned" && self.exposure.edges.len() < 2 {
                    return bad("fraction_binned needs at least two bin edges".into());
                }
            }
            "cluster_ratio" => {
                if self.data.cluster.is_none() {
                    return bad("cluster_ratio exposure requires data.cluster".into());
                }
                if !matches!(self.exposure.weighting.as_str(), "cluster" | "unit") {
                    return bad(format!("unknown ratio weighting `{}`", self.exposure.weighting));
                }
            }
            k => return bad(format!("unknown exposure kind `{k}`")),
        }
        if !matches!(self.exposure.metric.as_str(), "chebyshev" | "euclidean") {
            return bad(format!("unknown metric `{}`", self.exposure.metric));
        }
        let m = &self.models;
        if !matches!(m.ps_method.as_str(), "cbps" | "mle") {
            return bad(format!("unknown propensity method `{}`", m.ps_method));
        }
        if !matches!(m.outcome.as_str(), "per_period" | "differenced") {
            return bad(format!("unknown outcome model form `{}`", m.outcome));
        }
        let cols = self.available_columns();
        for (field, terms) in [("w_terms", &m.w_terms), ("g_terms", &m.g_terms), ("pre_terms", &m.pre_terms), ("post_terms", &m.post_terms), ("diff_terms", &m.diff_terms)] {
            for t in terms {
                for c in term_columns(t) {
                    if !cols.contains(c) {
                        return bad(format!("unknown column `{c}` in models.{field}"));
                    }
                }
            }
        }
        let inf = &self.inference;
        if inf.methods.is_empty() {
            return bad("no inference methods requested".into());
        }
        for method in &inf.methods {
            match method.as_str() {
                "ehw" | "shac" => {}
                "cluster" => {
                    if self.data.cluster.is_none() {
                        return bad("cluster inference requires data.cluster".into());
                    }
                }
                other => return bad(format!("unknown inference method `{other}`")),
            }
        }
        if !matches!(inf.kernel.as_str(), "bartlett" | "parzen" | "uniform") {
            return bad(format!("unknown kernel `{}`", inf.kernel));
        }
        if !matches!(inf.binning.as_str(), "pairwise" | "integer") {
            return bad(format!("unknown binning `{}`", inf.binning));
        }
        if !matches!(inf.eigen_policy.as_str(), "error" | "clamp") {
            return bad(format!("unknown eigen policy `{}`", inf.eigen_policy));
        }
        let bw = inf.bandwidth_or_default(self.exposure.cutoff);
        if !(bw > 0.0 && bw.is_finite()) {
            return bad("inference.bandwidth must be positive".into());
        }
        if !(inf.level > 0.0 && inf.level < 1.0) {
            return bad("inference.level must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub designs: Vec<String>,
    pub reps: usize,
    pub seed: u64,
    pub suite: String,
    pub threads: Option<usize>,
    pub bandwidths: Vec<f64>,
    pub track_params: bool,
    pub level: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { designs: vec!["1".into()], reps: 200, seed: 1, suite: "dr_cbps".into(), threads: None, bandwidths: vec![0.6, 1.0, 1.4], track_params: false, level: 0.95 }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Validation(m.to_string()));
        if self.reps == 0 {
            return bad("--reps must be at least 1");
        }
        if self.designs.is_empty() {
            return bad("no designs requested");
        }
        if self.bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return bad("bandwidths must be positive");
        }
        if self.threads == Some(0) {
            return bad("--threads must be at least 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        Ok(())
    }
}
