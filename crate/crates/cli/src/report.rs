//! Report structures and their text rendering.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{hash_json, EstimateConfig, SimulateConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub data_hash: Option<String>,
    pub seed: Option<u64>,
    /// Unix seconds; excluded from the determinism hash.
    pub generated_at: u64,
    /// SHA-256 of the report with `generated_at` and this field zeroed.
    pub determinism_hash: String,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, data_hash: Option<String>) -> Self {
        Provenance {
            tool: "nbrdid".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            data_hash,
            seed: None,
            generated_at: 0,
            determinism_hash: String::new(),
        }
    }
}

fn now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellReport {
    pub w: u8,
    pub g: i64,
    pub count: usize,
    pub pi_min: Option<f64>,
    /// Kish effective sample size of the inverse-propensity weights.
    pub ess: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleReport {
    pub units: usize,
    pub eligible: usize,
    pub treated: usize,
    pub levels: Vec<i64>,
    pub clusters: Option<usize>,
    pub cells: Vec<CellReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    pub ps_method: String,
    pub p_min: f64,
    pub p_max: f64,
    pub floor: f64,
    pub floor_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceReport {
    pub method: String,
    pub se: f64,
    pub ci: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowReport {
    pub label: String,
    pub target: String,
    pub g: Option<i64>,
    pub g_ref: Option<i64>,
    pub w: Option<u8>,
    pub estimate: f64,
    pub n: usize,
    pub converged: bool,
    pub interpretation: String,
    pub inference: Vec<InferenceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub provenance: Provenance,
    pub config: EstimateConfig,
    pub sample: SampleReport,
    pub overlap: Option<OverlapReport>,
    pub rows: Vec<RowReport>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    /// Fills the determinism hash and the timestamp.
    pub fn seal(&mut self) {
        self.provenance.generated_at = 0;
        self.provenance.determinism_hash = String::new();
        self.provenance.determinism_hash = hash_json(self);
        self.provenance.generated_at = now();
    }

    pub fn row(&self, label: &str) -> Option<&RowReport> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateReport {
    pub provenance: Provenance,
    pub config: SimulateConfig,
    pub summaries: Vec<nbrdid_simlab::ReplicationSummary>,
}

impl SimulateReport {
    pub fn seal(&mut self) {
        self.provenance.generated_at = 0;
        self.provenance.determinism_hash = String::new();
        self.provenance.determinism_hash = hash_json(self);
        self.provenance.generated_at = now();
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

pub fn estimate_text(r: &EstimateReport) -> String {
    let p = &r.provenance;
    let s = &r.sample;
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", p.tool, p.version, p.command);
    let _ = writeln!(out, "config sha256       {}", p.config_hash);
    if let Some(h) = &p.data_hash {
        let _ = writeln!(out, "data sha256         {h}");
    }
    let _ = writeln!(out, "determinism sha256  {}", p.determinism_hash);
    let _ = writeln!(out);
    let _ = write!(out, "units {}, eligible {}, treated {}, exposure levels {:?}", s.units, s.eligible, s.treated, s.levels);
    if let Some(c) = s.clusters {
        let _ = write!(out, ", clusters {c}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10}{:>8}{:>12}{:>12}", "cell", "n", "min pi", "ESS");
    for c in &s.cells {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:<10}{:>8}{:>12}{:>12}", format!("W={},G={}", c.w, c.g), c.count, opt(c.pi_min), opt(c.ess));
    }
    if let Some(o) = &r.overlap {
        let _ = writeln!(out, "treatment propensity ({}) range [{}, {}], {} value(s) beyond floor {}", o.ps_method, num(o.p_min), num(o.p_max), o.floor_violations, o.floor);
    }
    let _ = writeln!(out);
    let level = (r.config.inference.level * 100.0).round();
    let _ = writeln!(out, "{:<40}{:>11}  {:<22}{:>10}  {level}% CI", "estimand", "estimate", "method", "se");
    for row in &r.rows {
        for (k, inf) in row.inference.iter().enumerate() {
            let (name, est) = if k == 0 { (row.label.as_str(), num(row.estimate)) } else { ("", String::new()) };
            let _ = writeln!(out, "{name:<40}{est:>11}  {:<22}{:>10}  [{}, {}]", inf.method, num(inf.se), num(inf.ci[0]), num(inf.ci[1]));
        }
    }
    let _ = writeln!(out);
    for row in &r.rows {
        let _ = writeln!(out, "{}: {}", row.label, row.interpretation);
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "{} warning(s); see warnings.log", r.warnings.len());
    }
    out
}
