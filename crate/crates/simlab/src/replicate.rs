//! Replication engine and Monte Carlo summaries. Replications run in
//! parallel, are collected in replication order and reduced sequentially,
//! so summaries do not depend on the thread count.

use nbrdid::inference::{cluster_variance, ehw_variance, normal_quantile, shac_variance_with, EigenPolicy, KernelSpec, PairList, VarianceMethod};
use nbrdid::{Error, GmmSolution, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{Generator, Truth};
use crate::suite::SuiteEntry;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub reps: usize,
    pub threads: Option<usize>,
    pub variance: Vec<VarianceMethod>,
    pub level: f64,
    /// Keep every parameter and its standard errors, not only `τ`.
    pub track_params: bool,
}

impl RunOptions {
    pub fn new(reps: usize) -> Self {
        RunOptions {
            reps,
            threads: None,
            variance: vec![
                VarianceMethod::Ehw,
                VarianceMethod::Shac(KernelSpec::bartlett(0.6)),
                VarianceMethod::Shac(KernelSpec::bartlett(1.0)),
                VarianceMethod::Shac(KernelSpec::bartlett(1.4)),
            ],
            level: 0.95,
            track_params: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorDraw {
    pub estimate: f64,
    /// Standard error of `τ` per variance method; `None` if that method failed.
    pub se: Vec<Option<f64>>,
    pub theta: Vec<f64>,
    pub param_names: Vec<String>,
    /// Standard errors of all parameters per method, when tracked.
    pub theta_se: Vec<Option<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub truth: Truth,
    pub eligible: usize,
    pub fingerprint: u64,
    pub lim_residual: Option<f64>,
    pub results: Vec<std::result::Result<EstimatorDraw, String>>,
}

fn variance_se(sol: &GmmSolution, method: &VarianceMethod, pairs: &PairList) -> Result<Vec<f64>> {
    let est = match method {
        VarianceMethod::Ehw => ehw_variance(sol)?,
        VarianceMethod::Shac(k) => shac_variance_with(sol, k, pairs, EigenPolicy::Error)?,
        VarianceMethod::Cluster => cluster_variance(sol)?,
    };
    Ok(est.se)
}

fn search_radius(methods: &[VarianceMethod]) -> f64 {
    methods.iter().fold(0.0, |r, m| match m {
        VarianceMethod::Shac(k) => r.max(k.search_radius()),
        _ => r,
    })
}

fn evaluate(entry: &SuiteEntry, draw: &crate::design::Draw, opts: &RunOptions, pairs: &PairList) -> std::result::Result<EstimatorDraw, String> {
    let sol = entry.evaluate(&draw.sample).map_err(|e| e.to_string())?;
    if !sol.tau().is_finite() {
        return Err("non-finite estimate".into());
    }
    let mut se = Vec::with_capacity(opts.variance.len());
    let mut theta_se = Vec::new();
    for m in &opts.variance {
        let s = variance_se(&sol, m, pairs).ok();
        se.push(s.as_ref().map(|v| v[sol.tau_index]));
        if opts.track_params {
            theta_se.push(s);
        }
    }
    Ok(EstimatorDraw { estimate: sol.tau(), se, theta: sol.theta.clone(), param_names: sol.param_names.clone(), theta_se })
}

pub fn replicate_one<G: Generator + ?Sized>(gen: &G, suite: &[SuiteEntry], opts: &RunOptions, rep: usize) -> Result<ReplicationRecord> {
    let draw = gen.draw(rep as u64)?;
    let pairs = PairList::new(&draw.sample.coords, search_radius(&opts.variance));
    let results = suite.iter().map(|e| evaluate(e, &draw, opts, &pairs)).collect();
    Ok(ReplicationRecord { rep, truth: draw.truth, eligible: draw.sample.len(), fingerprint: draw.fingerprint, lim_residual: draw.lim_residual, results })
}

pub fn replicate<G: Generator>(gen: &G, suite: &[SuiteEntry], opts: &RunOptions) -> Result<Vec<ReplicationRecord>> {
    if opts.reps == 0 {
        return Err(Error::Config("number of replications must be positive".into()));
    }
    if suite.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    let work = || (0..opts.reps).into_par_iter().map(|r| replicate_one(gen, suite, opts, r)).collect::<Result<Vec<_>>>();
    match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?.install(work),
        None => work(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodCoverage {
    pub method: String,
    /// Share of intervals covering the Monte Carlo mean of the estimates.
    pub coverage: Option<f64>,
    /// Share of intervals covering the replication's true value.
    pub coverage_truth: Option<f64>,
    pub mean_se: Option<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCoverage {
    pub name: String,
    pub mean: f64,
    pub coverage: Vec<MethodCoverage>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Monte Carlo standard error of the mean.
    pub mc_se: Option<f64>,
    pub truth: f64,
    pub bias: Option<f64>,
    pub coverage: Vec<MethodCoverage>,
    pub params: Vec<ParamCoverage>,
}

impl EstimatorSummary {
    pub fn coverage_for(&self, method: &str) -> Option<&MethodCoverage> {
        self.coverage.iter().find(|c| c.method == method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureNote {
    pub estimator: String,
    pub rep: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TruthSummary {
    pub tau1: f64,
    pub tau0: f64,
    pub tau: f64,
    pub share_treated: f64,
    pub share_control: f64,
    pub p_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub design: String,
    pub seed: u64,
    pub reps: usize,
    pub units: usize,
    pub eligible_mean: f64,
    pub fingerprint: String,
    pub max_lim_residual: Option<f64>,
    pub truth: TruthSummary,
    pub estimators: Vec<EstimatorSummary>,
    /// Estimators whose failure share exceeds 0.1% of replications.
    pub flagged: Vec<String>,
    /// First failures, for diagnosis.
    pub failures: Vec<FailureNote>,
}

impl ReplicationSummary {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

const MAX_FAILURE_NOTES: usize = 20;

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn coverage(points: &[(f64, f64, Option<f64>)], center: f64, zq: f64, method: String) -> MethodCoverage {
    let used: Vec<(f64, f64, f64)> = points.iter().filter_map(|&(est, truth, se)| se.map(|s| (est, truth, s))).collect();
    let n = used.len();
    if n == 0 {
        return MethodCoverage { method, coverage: None, coverage_truth: None, mean_se: None, n };
    }
    let share = |f: &dyn Fn(&(f64, f64, f64)) -> bool| used.iter().filter(|p| f(p)).count() as f64 / n as f64;
    MethodCoverage {
        method,
        coverage: Some(share(&|&(est, _, s)| (est - center).abs() <= zq * s)),
        coverage_truth: Some(share(&|&(est, t, s)| (est - t).abs() <= zq * s)),
        mean_se: Some(used.iter().map(|p| p.2).sum::<f64>() / n as f64),
        n,
    }
}

pub fn summarize<G: Generator>(gen: &G, suite: &[SuiteEntry], opts: &RunOptions, records: &[ReplicationRecord]) -> Result<ReplicationSummary> {
    let fp = gen.fingerprint();
    if let Some(r) = records.iter().find(|r| r.fingerprint != fp) {
        return Err(Error::Consistency(format!("replication {} ran on a different fixed design", r.rep)));
    }
    let zq = normal_quantile(0.5 + opts.level / 2.0);
    let labels: Vec<String> = opts.variance.iter().map(VarianceMethod::label).collect();
    let reps = records.len();
    let mut estimators = Vec::with_capacity(suite.len());
    let mut failures = Vec::new();
    let mut flagged = Vec::new();
    for (k, entry) in suite.iter().enumerate() {
        let ok: Vec<(&ReplicationRecord, &EstimatorDraw)> = records.iter().filter_map(|r| r.results[k].as_ref().ok().map(|d| (r, d))).collect();
        for r in records {
            if let Err(msg) = &r.results[k] {
                if failures.len() < MAX_FAILURE_NOTES {
                    failures.push(FailureNote { estimator: entry.name.clone(), rep: r.rep, message: msg.clone() });
                }
            }
        }
        let n_failed = reps - ok.len();
        if n_failed as f64 > 0.001 * reps as f64 {
            flagged.push(entry.name.clone());
        }
        let est: Vec<f64> = ok.iter().map(|(_, d)| d.estimate).collect();
        let (mean, sd) = mean_sd(&est);
        let truths: Vec<f64> = ok.iter().map(|(r, _)| entry.kind.truth(&r.truth)).collect();
        let truth = if truths.is_empty() { f64::NAN } else { truths.iter().sum::<f64>() / truths.len() as f64 };
        let cov = labels
            .iter()
            .enumerate()
            .map(|(m, label)| {
                let pts: Vec<(f64, f64, Option<f64>)> = ok.iter().zip(&truths).map(|((_, d), &t)| (d.estimate, t, d.se[m])).collect();
                coverage(&pts, mean.unwrap_or(f64::NAN), zq, label.clone())
            })
            .collect();
        let mut params = Vec::new();
        if opts.track_params {
            if let Some((_, first)) = ok.first() {
                let same: Vec<&EstimatorDraw> = ok.iter().map(|(_, d)| *d).filter(|d| d.param_names == first.param_names).collect();
                for (j, name) in first.param_names.iter().enumerate() {
                    let center = same.iter().map(|d| d.theta[j]).sum::<f64>() / same.len() as f64;
                    let coverage = labels
                        .iter()
                        .enumerate()
                        .map(|(m, label)| {
                            let pts: Vec<(f64, f64, Option<f64>)> = same.iter().map(|d| (d.theta[j], center, d.theta_se[m].as_ref().map(|s| s[j]))).collect();
                            coverage(&pts, center, zq, label.clone())
                        })
                        .collect();
                    params.push(ParamCoverage { name: name.clone(), mean: center, coverage });
                }
            }
        }
        estimators.push(EstimatorSummary {
            name: entry.name.clone(),
            n_ok: ok.len(),
            n_failed,
            mean,
            sd,
            mc_se: sd.map(|s| s / (ok.len() as f64).sqrt()),
            truth,
            bias: mean.map(|m| m - truth),
            coverage: cov,
            params,
        });
    }
    let avg = |f: &dyn Fn(&Truth) -> f64| records.iter().map(|r| f(&r.truth)).sum::<f64>() / reps.max(1) as f64;
    let truth = TruthSummary {
        tau1: avg(&|t| t.tau1),
        tau0: avg(&|t| t.tau0),
        tau: avg(&|t| t.tau),
        share_treated: avg(&|t| t.share_treated),
        share_control: avg(&|t| t.share_control),
        p_gap: avg(&|t| t.p_gap()),
    };
    let max_lim_residual = records.iter().filter_map(|r| r.lim_residual).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(ReplicationSummary {
        design: gen.label(),
        seed: gen.seed(),
        reps,
        units: gen.units(),
        eligible_mean: records.iter().map(|r| r.eligible as f64).sum::<f64>() / reps.max(1) as f64,
        fingerprint: format!("{fp:016x}"),
        max_lim_residual,
        truth,
        estimators,
        flagged,
        failures,
    })
}

/// Replicates and summarizes.
pub fn run_replications<G: Generator>(gen: &G, suite: &[SuiteEntry], opts: &RunOptions) -> Result<ReplicationSummary> {
    let records = replicate(gen, suite, opts)?;
    summarize(gen, suite, opts, &records)
}
