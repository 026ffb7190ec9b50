//! An i.i.d. design with a logit exposure model, used to exhibit the
//! double robustness of the DR estimator: each nuisance model can be
//! correctly specified or made wrong by dropping the `z²` term. The
//! covariate is bounded so that all propensities stay away from 0 and 1.

use std::collections::BTreeMap;

use nbrdid::exposure::ExposureAssignment;
use nbrdid::gmm::ModelSpec;
use nbrdid::nuisance::{OutcomeSpec, PsMethod};
use nbrdid::scalar::logistic;
use nbrdid::{Error, Population, Result, Sample, UnitRecord};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::design::{Draw, Generator, Truth};
use crate::rng::{fingerprint, stream, Tag};
use crate::suite::{EstimatorKind, SuiteEntry};

pub const TAU1: f64 = 1.5;
pub const TAU0: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessDesign {
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Misspecified {
    /// Propensity models correct, outcome models omit `z²`.
    Outcome,
    /// Outcome models correct, propensity models omit `z²`.
    Propensity,
}

impl RobustnessDesign {
    pub fn new(n: usize, seed: u64) -> Self {
        RobustnessDesign { n, seed }
    }
}

impl Generator for RobustnessDesign {
    fn label(&self) -> String {
        format!("double-robustness design (n={}, seed={})", self.n, self.seed)
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn units(&self) -> usize {
        self.n
    }

    fn fingerprint(&self) -> u64 {
        fingerprint(&[self.n as f64, self.seed as f64])
    }

    fn draw(&self, rep: u64) -> Result<Draw> {
        let n = self.n;
        if n < 2 {
            return Err(Error::Config("a design needs at least two units".into()));
        }
        let mut cov = stream(self.seed, rep, Tag::Covariate);
        let mut u = stream(self.seed, rep, Tag::Uniform);
        let mut ex = stream(self.seed, rep, Tag::Exposure);
        let mut e1 = stream(self.seed, rep, Tag::Error1);
        let mut e2 = stream(self.seed, rep, Tag::Error2);
        let mut units = Vec::with_capacity(n);
        let (mut w, mut g) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let z: f64 = cov.gen_range(-2.0..2.0);
            let z2 = z * z - 4.0 / 3.0;
            let wi = u.gen::<f64>() < logistic(0.5 * z + 0.6 * z2);
            let wf = wi as u8 as f64;
            let gi = (ex.gen::<f64>() < logistic(0.3 + 0.5 * wf + 0.4 * z + 0.5 * z2)) as i64;
            let gf = gi as f64;
            let base = 1.0 + z + z2;
            let y1 = base + e1.sample::<f64, _>(StandardNormal);
            let y2 = base + 0.5 + z + 1.5 * z2 + wf * (1.0 + 0.5 * gf) + 0.7 * gf + e2.sample::<f64, _>(StandardNormal);
            units.push(UnitRecord { id: format!("u{i}"), coords: vec![10.0 * i as f64, 0.0], z: vec![z, z2], w: wi, y1, y2, y0: None, cluster: None });
            w.push(wi);
            g.push(gi);
        }
        let population = Population::new(units, vec!["z".into(), "z2".into()], self.label())?;
        let exposure = ExposureAssignment { levels: g.clone(), level_set: vec![0, 1], eligible: vec![true; n] };
        let u = population.units();
        let mut columns = BTreeMap::new();
        columns.insert("z".to_string(), u.iter().map(|r| r.z[0]).collect());
        columns.insert("z2".to_string(), u.iter().map(|r| r.z[1]).collect());
        let mut levels: Vec<i64> = g.clone();
        levels.sort_unstable();
        levels.dedup();
        let sample = Sample {
            pop_index: (0..n).collect(),
            ids: u.iter().map(|r| r.id.clone()).collect(),
            w: w.clone(),
            g: g.clone(),
            levels,
            y_pre: u.iter().map(|r| r.y1).collect(),
            y_post: u.iter().map(|r| r.y2).collect(),
            y_base: None,
            coords: u.iter().map(|r| r.coords.clone()).collect(),
            clusters: None,
            columns,
        };
        let share = |arm: bool| {
            let in_arm: Vec<i64> = (0..n).filter(|&i| w[i] == arm).map(|i| g[i]).collect();
            in_arm.iter().filter(|&&x| x == 1).count() as f64 / in_arm.len() as f64
        };
        let share_treated = share(true);
        let truth = Truth { tau1: TAU1, tau0: TAU0, tau: share_treated * TAU1 + (1.0 - share_treated) * TAU0, share_treated, share_control: share(false) };
        Ok(Draw { population, exposure, sample, truth, fingerprint: self.fingerprint(), lim_residual: None, lim_rhs: None })
    }
}

fn model(wrong_ps: bool, wrong_outcome: bool) -> ModelSpec {
    let ps: &[&str] = if wrong_ps { &["z"] } else { &["z", "z2"] };
    let w_terms: Vec<&str> = ["1"].iter().chain(ps).copied().collect();
    let g_terms: Vec<&str> = ["1", "W"].iter().chain(ps).copied().collect();
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let (pre, post) = if wrong_outcome {
        (v(&["1", "z"]), v(&["1", "z", "W", "G", "W*G"]))
    } else {
        (v(&["1", "z", "z2"]), v(&["1", "z", "z2", "W", "G", "W*G"]))
    };
    ModelSpec::new(PsMethod::Mle, &w_terms, &g_terms, OutcomeSpec::PerPeriod { pre, post, cellwise: false })
}

/// DR, IPW and RA at both exposure levels under one misspecification.
pub fn robustness_suite(case: Misspecified) -> Vec<SuiteEntry> {
    let spec = match case {
        Misspecified::Outcome => model(false, true),
        Misspecified::Propensity => model(true, false),
    };
    let mut out = Vec::new();
    for g in [1, 0] {
        out.push(SuiteEntry::new(format!("dr{g}"), EstimatorKind::Dr { g }, spec.clone()));
        out.push(SuiteEntry::new(format!("ipw{g}"), EstimatorKind::Ipw { g }, spec.clone()));
        out.push(SuiteEntry::new(format!("ra{g}"), EstimatorKind::Ra { g }, spec.clone()));
    }
    out
}
