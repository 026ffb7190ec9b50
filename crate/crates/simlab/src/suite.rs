//! Named estimators evaluated in every replication.

use nbrdid::analysis::{run_estimand, EstimandRequest, EstimandTarget};
use nbrdid::gmm::ModelSpec;
use nbrdid::nuisance::{OutcomeSpec, PsMethod};
use nbrdid::{Error, GmmSolution, Result, Sample};

use crate::design::Truth;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Twfe,
    Abadie,
    Atwfe { g: i64 },
    Ra { g: i64 },
    Ipw { g: i64 },
    Dr { g: i64 },
    Overall,
    Placebo { g: i64 },
}

impl EstimatorKind {
    pub fn truth(self, t: &Truth) -> f64 {
        match self {
            EstimatorKind::Twfe | EstimatorKind::Abadie | EstimatorKind::Overall => t.tau,
            EstimatorKind::Atwfe { g } | EstimatorKind::Ra { g } | EstimatorKind::Ipw { g } | EstimatorKind::Dr { g } => t.at(g),
            EstimatorKind::Placebo { .. } => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub kind: EstimatorKind,
    pub spec: ModelSpec,
}

impl SuiteEntry {
    pub fn new(name: impl Into<String>, kind: EstimatorKind, spec: ModelSpec) -> Self {
        SuiteEntry { name: name.into(), kind, spec }
    }

    pub fn evaluate(&self, sample: &Sample) -> Result<GmmSolution> {
        use EstimandTarget::*;
        let req = match self.kind {
            EstimatorKind::Twfe => EstimandRequest::new(CanonicalTwfe),
            EstimatorKind::Abadie => EstimandRequest::new(AbadieIpw),
            EstimatorKind::Atwfe { .. } => EstimandRequest::at(AugmentedTwfe, 1),
            EstimatorKind::Ra { g } => EstimandRequest::at(RaDatt, g),
            EstimatorKind::Ipw { g } => EstimandRequest::at(IpwDatt, g),
            EstimatorKind::Dr { g } => EstimandRequest::at(DrDatt, g),
            EstimatorKind::Overall => EstimandRequest::new(OverallDirect),
            EstimatorKind::Placebo { g } => EstimandRequest::at(PretrendPlacebo, g),
        };
        let rows = run_estimand(sample, &self.spec, &req)?;
        let row = match self.kind {
            EstimatorKind::Atwfe { g } => {
                let prefix = format!("augmented_twfe datt{g} ");
                rows.into_iter().find(|r| r.label.starts_with(&prefix)).ok_or_else(|| Error::DegenerateArm(format!("{}: no exposed units in one arm", self.name)))?
            }
            _ => rows.into_iter().next().ok_or_else(|| Error::Assembly(format!("{}: no estimate produced", self.name)))?,
        };
        Ok(row.solution)
    }
}

/// Covariates and outcome terms of the simulation models.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteModels {
    pub ps_covariates: Vec<String>,
    pub pre: Vec<String>,
    pub post: Vec<String>,
}

impl Default for SuiteModels {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SuiteModels { ps_covariates: v(&["z", "A.z", "zu"]), pre: v(&["1", "W", "z", "W*z"]), post: v(&["1", "W", "z", "W*z", "G"]) }
    }
}

impl SuiteModels {
    pub fn model(&self, method: PsMethod) -> ModelSpec {
        let cov: Vec<&str> = self.ps_covariates.iter().map(String::as_str).collect();
        let w_terms: Vec<&str> = ["1"].into_iter().chain(cov.iter().copied()).collect();
        let g_terms: Vec<&str> = ["1", "W"].into_iter().chain(cov.iter().copied()).collect();
        ModelSpec::new(method, &w_terms, &g_terms, OutcomeSpec::PerPeriod { pre: self.pre.clone(), post: self.post.clone(), cellwise: false })
    }
}

/// Estimator names in table order.
pub const TABLE3: [&str; 15] = [
    "twfe", "abadie_z", "abadie_zstar", "atwfe1", "atwfe0", "ra1", "ra0", "ipw_mle1", "ipw_mle0", "ipw_cbps1", "ipw_cbps0", "dr_mle1", "dr_mle0", "dr_cbps1", "dr_cbps0",
];

const FAMILIES: [&str; 7] = ["atwfe", "ra", "ipw_mle", "ipw_cbps", "dr_mle", "dr_cbps", "placebo"];

fn entry(name: &str, models: &SuiteModels) -> Result<SuiteEntry> {
    let mle = models.model(PsMethod::Mle);
    let cbps = models.model(PsMethod::Cbps);
    if name == "twfe" || name == "canonical" {
        return Ok(SuiteEntry::new(name, EstimatorKind::Twfe, mle));
    }
    if name == "abadie_z" {
        let spec = ModelSpec { w_terms: vec!["1".into(), "z".into()], ..mle };
        return Ok(SuiteEntry::new(name, EstimatorKind::Abadie, spec));
    }
    if name == "abadie_zstar" {
        return Ok(SuiteEntry::new(name, EstimatorKind::Abadie, mle));
    }
    if name == "overall" {
        return Ok(SuiteEntry::new(name, EstimatorKind::Overall, cbps));
    }
    let unknown = || Error::Config(format!("unknown estimator `{name}`"));
    let (family, level) = name.split_at(name.len().saturating_sub(1));
    let g: i64 = match level {
        "0" => 0,
        "1" => 1,
        _ => return Err(unknown()),
    };
    let (kind, spec) = match family {
        "atwfe" => (EstimatorKind::Atwfe { g }, mle),
        "ra" => (EstimatorKind::Ra { g }, mle),
        "ipw_mle" => (EstimatorKind::Ipw { g }, mle),
        "ipw_cbps" => (EstimatorKind::Ipw { g }, cbps),
        "dr_mle" => (EstimatorKind::Dr { g }, mle),
        "dr_cbps" => (EstimatorKind::Dr { g }, cbps),
        "placebo" => (EstimatorKind::Placebo { g }, cbps),
        _ => return Err(unknown()),
    };
    Ok(SuiteEntry::new(name, kind, spec))
}

/// Parses a comma-separated list of estimator names. `table3` expands to
/// the full table and a family name (`dr_cbps`, `ra`, ...) to its two
/// exposure levels.
pub fn parse_suite(list: &str, models: &SuiteModels) -> Result<Vec<SuiteEntry>> {
    let mut names: Vec<String> = Vec::new();
    for raw in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if raw == "table3" {
            names.extend(TABLE3.iter().map(|s| s.to_string()));
        } else if FAMILIES.contains(&raw) {
            names.push(format!("{raw}1"));
            names.push(format!("{raw}0"));
        } else {
            names.push(raw.to_string());
        }
    }
    if names.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    names.retain(|n| seen.insert(n.clone()));
    names.iter().map(|n| entry(n, models)).collect()
}
