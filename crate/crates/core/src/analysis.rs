//! Estimand requests resolved into solved moment systems ready for
//! inference. IPW/RA/DR-type targets are stacked GMM systems; the TWFE
//! family uses OLS influence functions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{aggregate_overall, augmented_twfe, saturated_twfe, Adjustment, Effect, PointEstimate, DATT_NOTE};
use crate::gmm::{assemble_moments, solve_gmm, EffectRequest, GmmSolution, ModelSpec};
use crate::sample::Sample;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimandTarget {
    CanonicalTwfe,
    AbadieIpw,
    AugmentedTwfe,
    SaturatedTwfe,
    IpwDatt,
    RaDatt,
    DrDatt,
    DrSpillover,
    OverallDirect,
    PretrendPlacebo,
}

impl EstimandTarget {
    pub const ALL: [EstimandTarget; 10] = [
        EstimandTarget::CanonicalTwfe,
        EstimandTarget::AbadieIpw,
        EstimandTarget::AugmentedTwfe,
        EstimandTarget::SaturatedTwfe,
        EstimandTarget::IpwDatt,
        EstimandTarget::RaDatt,
        EstimandTarget::DrDatt,
        EstimandTarget::DrSpillover,
        EstimandTarget::OverallDirect,
        EstimandTarget::PretrendPlacebo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimandTarget::CanonicalTwfe => "canonical_twfe",
            EstimandTarget::AbadieIpw => "abadie_ipw",
            EstimandTarget::AugmentedTwfe => "augmented_twfe",
            EstimandTarget::SaturatedTwfe => "saturated_twfe",
            EstimandTarget::IpwDatt => "ipw_datt",
            EstimandTarget::RaDatt => "ra_datt",
            EstimandTarget::DrDatt => "dr_datt",
            EstimandTarget::DrSpillover => "dr_spillover",
            EstimandTarget::OverallDirect => "overall_direct",
            EstimandTarget::PretrendPlacebo => "pretrend_placebo",
        }
    }
}

impl fmt::Display for EstimandTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimandTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimandTarget::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimand `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimandRequest {
    pub target: EstimandTarget,
    pub g: Option<i64>,
    pub g_ref: Option<i64>,
    /// Arm for spillover contrasts.
    pub w: Option<bool>,
    pub normalize: bool,
    /// Covariates for the saturated TWFE.
    pub covariates: Vec<String>,
}

impl EstimandRequest {
    pub fn new(target: EstimandTarget) -> Self {
        EstimandRequest { target, g: None, g_ref: None, w: None, normalize: true, covariates: vec![] }
    }

    pub fn at(target: EstimandTarget, g: i64) -> Self {
        EstimandRequest { g: Some(g), ..Self::new(target) }
    }

    fn level(&self) -> Result<i64> {
        self.g.ok_or_else(|| Error::Config(format!("{} requires an exposure level g", self.target)))
    }
}

/// One reported quantity with the solution its inference is based on.
#[derive(Clone, Debug)]
pub struct EstimandRow<T> {
    pub label: String,
    pub target: EstimandTarget,
    pub solution: GmmSolution<T>,
    pub interpretation: String,
}

impl<T: Real> EstimandRow<T> {
    pub fn estimate(&self) -> T {
        self.solution.tau()
    }
}

impl<T: Real> GmmSolution<T> {
    /// Linearized per-unit influence of parameter `j`: `−(R⁻¹ q_i)_j` for
    /// just-identified systems.
    pub fn influence(&self, j: usize) -> Result<Vec<T>> {
        let rinv = self.jacobian.inverse()?;
        let row = rinv.row(j).to_vec();
        Ok((0..self.unit_moments.rows()).map(|i| -crate::linalg::dot(&row, self.unit_moments.row(i))).collect())
    }
}

fn solve_effect<T: Real>(sample: &Sample<T>, spec: &ModelSpec, effect: Effect, adjustment: Adjustment, normalize: bool) -> Result<GmmSolution<T>> {
    let system = assemble_moments(sample, spec, EffectRequest { effect, adjustment, normalize })?;
    solve_gmm(&system, None, None)
}

fn point_row<T: Real>(label: String, target: EstimandTarget, pe: &PointEstimate<T>, sample: &Sample<T>) -> EstimandRow<T> {
    EstimandRow { label, target, solution: GmmSolution::from_influence(pe.value, &pe.influence, sample), interpretation: pe.interpretation.clone() }
}

pub fn run_estimand<T: Real>(sample: &Sample<T>, spec: &ModelSpec, req: &EstimandRequest) -> Result<Vec<EstimandRow<T>>> {
    use EstimandTarget::*;
    let row = |label: String, sol: GmmSolution<T>, note: &str| EstimandRow { label, target: req.target, solution: sol, interpretation: note.to_string() };
    let datt = |adj: Adjustment, g: i64| solve_effect(sample, spec, Effect::Datt { g }, adj, req.normalize);
    match req.target {
        CanonicalTwfe => Ok(vec![row("canonical_twfe".into(), solve_effect(sample, spec, Effect::Canonical, Adjustment::Ipw, true)?, "canonical DID; ignores interference")]),
        AbadieIpw => Ok(vec![row("abadie_ipw".into(), solve_effect(sample, spec, Effect::Abadie, Adjustment::Ipw, req.normalize)?, "canonical DID; ignores interference")]),
        IpwDatt => {
            let g = req.level()?;
            Ok(vec![row(format!("ipw_datt(g={g})"), datt(Adjustment::Ipw, g)?, DATT_NOTE)])
        }
        RaDatt => {
            let g = req.level()?;
            Ok(vec![row(format!("ra_datt(g={g})"), datt(Adjustment::Ra, g)?, DATT_NOTE)])
        }
        DrDatt => {
            let g = req.level()?;
            Ok(vec![row(format!("dr_datt(g={g})"), datt(Adjustment::Dr, g)?, DATT_NOTE)])
        }
        DrSpillover => {
            let g = req.level()?;
            let g_ref = req.g_ref.ok_or_else(|| Error::Config("dr_spillover requires a reference level g_ref".into()))?;
            let w = req.w.ok_or_else(|| Error::Config("dr_spillover requires the arm w".into()))?;
            let sol = solve_effect(sample, spec, Effect::Spillover { w, g, g_ref }, Adjustment::Dr, req.normalize)?;
            Ok(vec![row(
                format!("dr_spillover(w={}, g={g}, g'={g_ref})", w as u8),
                sol,
                "spillover; causal reading requires the conditional-independence condition on W_-i",
            )])
        }
        PretrendPlacebo => {
            let g = req.level()?;
            let placebo = sample.placebo()?;
            let sol = solve_effect(&placebo, spec, Effect::Datt { g }, Adjustment::Dr, req.normalize)?;
            Ok(vec![row(format!("pretrend_placebo(g={g})"), sol, "placebo on (y0, y1); H0: no anticipation and parallel pre-trends")])
        }
        OverallDirect => {
            let mut per_level = BTreeMap::new();
            for &g in &sample.levels {
                let sol = datt(Adjustment::Dr, g)?;
                let infl = sol.influence(sol.tau_index)?;
                per_level.insert(g, PointEstimate { value: sol.tau(), influence: infl, n_used: sample.len(), interpretation: DATT_NOTE.into() });
            }
            let pe = aggregate_overall(sample, &per_level)?;
            Ok(vec![point_row("overall_direct".into(), OverallDirect, &pe, sample)])
        }
        AugmentedTwfe => {
            let g = req.g.unwrap_or(1);
            let s: Vec<bool> = sample.g.iter().map(|&gi| gi == g).collect();
            let fit = augmented_twfe(sample, &s)?;
            let mut rows = vec![point_row(format!("augmented_twfe datt0 (S=1{{G={g}}})"), AugmentedTwfe, &fit.datt0, sample)];
            if let Some(d1) = &fit.datt1 {
                rows.push(point_row(format!("augmented_twfe datt1 (S=1{{G={g}}})"), AugmentedTwfe, d1, sample));
            }
            Ok(rows)
        }
        SaturatedTwfe => {
            let fit = saturated_twfe(sample, &req.covariates)?;
            Ok(fit.datt.iter().map(|(g, pe)| point_row(format!("saturated_twfe(g={g})"), SaturatedTwfe, pe, sample)).collect())
        }
    }
}
