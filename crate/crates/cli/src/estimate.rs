//! The `estimate` pipeline: load, expose, fit, estimate, infer, report.

use std::path::PathBuf;

use nbrdid::analysis::{run_estimand, EstimandRequest, EstimandTarget};
use nbrdid::design::Design;
use nbrdid::exposure::{compute_exposure, ExposureKind, ExposureSpec, RatioWeighting};
use nbrdid::gmm::ModelSpec;
use nbrdid::inference::{cluster_variance, confidence_interval, ehw_variance, shac_variance_with, Binning, EigenPolicy, KernelFamily, KernelSpec, PairList};
use nbrdid::nuisance::{fit_logit_g, fit_logit_w, overlap_diagnostics, OutcomeSpec, PsMethod, SolverOptions};
use nbrdid::population::{build_adjacency_with_metric, read_population, ColumnMapping, Metric};
use nbrdid::{GmmSolution, Population, Sample, VarianceEstimate};
use sha2::{Digest, Sha256};

use crate::config::{hash_json, hex, read_config, EstimateConfig, EstimandConfig};
use crate::report::{CellReport, EstimateReport, InferenceReport, OverlapReport, Provenance, RowReport, SampleReport};
use crate::{report, write_outputs, CliError, EstimateArgs, Stage};

/// Merges the configuration file with command-line overrides.
pub fn resolve_config(args: &EstimateArgs) -> Result<EstimateConfig, CliError> {
    let mut cfg: EstimateConfig = read_config(args.config.as_deref())?;
    if let Some(p) = &args.data {
        cfg.data.path = Some(p.display().to_string());
    }
    if !args.estimands.is_empty() {
        cfg.estimands = args.estimands.iter().map(|s| EstimandConfig::parse_flag(s)).collect::<Result<_, _>>()?;
    }
    if let Some(a) = &args.attributes {
        cfg.data.attributes = a.clone();
    }
    if let Some(c) = &args.coords {
        cfg.data.coords = c.clone();
    }
    if let Some(c) = &args.cluster {
        cfg.data.cluster = Some(c.clone());
    }
    if let Some(k) = &args.exposure {
        cfg.exposure.kind = k.clone();
    }
    if let Some(c) = args.cutoff {
        cfg.exposure.cutoff = c;
    }
    if let Some(m) = &args.ps_method {
        cfg.models.ps_method = m.clone();
    }
    if let Some(m) = &args.methods {
        cfg.inference.methods = m.clone();
    }
    if let Some(b) = args.bandwidth {
        cfg.inference.bandwidth = Some(b);
    }
    if let Some(k) = &args.kernel {
        cfg.inference.kernel = k.clone();
    }
    if let Some(l) = args.level {
        cfg.inference.level = l;
    }
    let cfg = cfg.with_default_terms();
    cfg.validate()?;
    Ok(cfg)
}

pub fn command(args: &EstimateArgs) -> Result<String, CliError> {
    let cfg = resolve_config(args)?;
    let path = cfg.data.path.clone().map(PathBuf::from).ok_or_else(|| CliError::Validation("no data file: pass --data or set data.path".into()))?;
    let bytes = std::fs::read(&path).map_err(|e| CliError::Validation(format!("cannot read data `{}`: {e}", path.display())))?;
    let rep = estimate(&cfg, &bytes, &path.display().to_string())?;
    let text = report::estimate_text(&rep);
    let json = serde_json::to_string_pretty(&rep).expect("report serializes") + "\n";
    let warnings: String = rep.warnings.iter().map(|w| format!("{w}\n")).collect();
    write_outputs(&args.out, &[("report.txt", text.clone()), ("report.json", json), ("warnings.log", warnings)])?;
    Ok(text)
}

pub fn mapping(cfg: &EstimateConfig) -> ColumnMapping {
    let d = &cfg.data;
    ColumnMapping {
        id: d.id.clone(),
        coords: d.coords.clone(),
        attributes: d.attributes.clone(),
        treatment: d.treatment.clone(),
        pre: d.pre.clone(),
        post: d.post.clone(),
        baseline: d.baseline.clone(),
        cluster: d.cluster.clone(),
        delimiter: d.delimiter.as_bytes()[0],
    }
}

pub fn model_spec(cfg: &EstimateConfig) -> ModelSpec {
    let m = &cfg.models;
    let outcome = match m.outcome.as_str() {
        "differenced" => OutcomeSpec::Differenced { design: m.diff_terms.clone(), cellwise: m.cellwise },
        _ => OutcomeSpec::PerPeriod { pre: m.pre_terms.clone(), post: m.post_terms.clone(), cellwise: m.cellwise },
    };
    ModelSpec {
        ps_method: if m.ps_method == "mle" { PsMethod::Mle } else { PsMethod::Cbps },
        w_terms: m.w_terms.clone(),
        g_terms: m.g_terms.clone(),
        w_balance: None,
        g_balance: None,
        outcome,
        solver: SolverOptions { max_iter: m.max_iter, tol: m.tol },
    }
}

fn kernel(cfg: &EstimateConfig) -> KernelSpec {
    let inf = &cfg.inference;
    let family = match inf.kernel.as_str() {
        "parzen" => KernelFamily::Parzen,
        "uniform" => KernelFamily::Uniform,
        _ => KernelFamily::Bartlett,
    };
    let binning = if inf.binning == "integer" { Binning::IntegerBins } else { Binning::Pairwise };
    KernelSpec::new(family, inf.bandwidth_or_default(cfg.exposure.cutoff), binning)
}

/// Builds the analysis sample from raw data bytes.
pub fn load_sample(cfg: &EstimateConfig, bytes: &[u8], source: &str) -> Result<(Population, Sample), CliError> {
    let input = |e| CliError::from_core(e, Stage::Input);
    let pop: Population = read_population(bytes, &mapping(cfg), source).map_err(input)?;
    let metric = if cfg.exposure.metric == "euclidean" { Metric::Euclidean } else { Metric::Chebyshev };
    let adjacency = if cfg.exposure.uses_adjacency() { Some(build_adjacency_with_metric(&pop, cfg.exposure.cutoff, true, metric).map_err(input)?) } else { None };
    let kind = match cfg.exposure.kind.as_str() {
        "any_treated_neighbor" => ExposureKind::AnyTreatedNeighbor,
        "fraction_binned" => ExposureKind::FractionTreatedBinned { edges: cfg.exposure.edges.clone() },
        _ => ExposureKind::LeaveOneOutClusterRatio { weighting: if cfg.exposure.weighting == "unit" { RatioWeighting::Unit } else { RatioWeighting::Cluster } },
    };
    let exposure = compute_exposure(&pop, &ExposureSpec { kind, adjacency: adjacency.as_ref() }).map_err(input)?;
    let sample = Sample::new(&pop, &exposure, adjacency.as_ref()).map_err(input)?;
    if sample.len() < 2 {
        return Err(CliError::Estimation(format!("only {} eligible unit(s)", sample.len())));
    }
    Ok((pop, sample))
}

fn variance_for(sol: &GmmSolution, method: &str, cfg: &EstimateConfig) -> nbrdid::Result<VarianceEstimate> {
    match method {
        "ehw" => ehw_variance(sol),
        "cluster" => cluster_variance(sol),
        _ => {
            let k = kernel(cfg);
            let policy = if cfg.inference.eigen_policy == "clamp" { EigenPolicy::Clamp } else { EigenPolicy::Error };
            shac_variance_with(sol, &k, &PairList::new(&sol.coords, k.search_radius()), policy)
        }
    }
}

fn method_label(method: &str, cfg: &EstimateConfig) -> String {
    match method {
        "shac" => {
            let k = kernel(cfg);
            format!("shac({}, b={})", cfg.inference.kernel, k.bandwidth)
        }
        m => m.to_string(),
    }
}

fn overlap(sample: &Sample, spec: &ModelSpec, floor: f64, warnings: &mut Vec<String>) -> (Option<OverlapReport>, Vec<CellReport>) {
    let counts = |w: bool, g: i64| sample.cell_count(w, g);
    let plain = || -> Vec<CellReport> {
        [false, true].iter().flat_map(|&w| sample.levels.iter().map(move |&g| (w, g))).map(|(w, g)| CellReport { w: w as u8, g, count: counts(w, g), pi_min: None, ess: None }).collect()
    };
    let fits = Design::build(sample, &spec.w_terms)
        .and_then(|d| fit_logit_w(sample, d, spec.ps_method, spec.solver))
        .and_then(|fw| Design::build(sample, &spec.g_terms).and_then(|d| fit_logit_g(sample, d, spec.ps_method, spec.solver)).map(|fg| (fw, fg)));
    let (fw, fg) = match fits {
        Ok(f) => f,
        Err(e) => {
            warnings.push(format!("propensity diagnostics unavailable: {e}"));
            return (None, plain());
        }
    };
    let diag = overlap_diagnostics(sample, &fw, &fg, floor);
    let mut cells = Vec::new();
    for &w in &[false, true] {
        for &g in &sample.levels {
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in (0..sample.len()).filter(|&i| sample.w[i] == w && sample.g[i] == g) {
                let p = fw.prob_treated(i);
                let pw = if w { p } else { 1.0 - p };
                let wt = 1.0 / (pw * fg.prob_level(i, w, g));
                s1 += wt;
                s2 += wt * wt;
            }
            let ess = (s2 > 0.0 && s1.is_finite()).then(|| s1 * s1 / s2);
            cells.push(CellReport { w: w as u8, g, count: counts(w, g), pi_min: diag.pi_min.get(&(w, g)).copied(), ess });
        }
    }
    if !fw.converged || !fg.converged {
        warnings.push("propensity fit used for diagnostics did not converge".into());
    }
    let n_warn = diag.warnings.len();
    warnings.extend(diag.warnings);
    (Some(OverlapReport { ps_method: format!("{:?}", spec.ps_method).to_lowercase(), p_min: diag.p_min, p_max: diag.p_max, floor, floor_violations: n_warn }), cells)
}

fn request(e: &EstimandConfig) -> Result<EstimandRequest, CliError> {
    let target: EstimandTarget = e.target.parse().map_err(|err| CliError::from_core(err, Stage::Input))?;
    Ok(EstimandRequest { target, g: e.g, g_ref: e.g_ref, w: e.w.map(|w| w == 1), normalize: e.normalize, covariates: e.covariates.clone() })
}

/// Runs the full pipeline on a validated configuration.
pub fn estimate(cfg: &EstimateConfig, bytes: &[u8], source: &str) -> Result<EstimateReport, CliError> {
    let (pop, sample) = load_sample(cfg, bytes, source)?;
    let spec = model_spec(cfg);
    let mut warnings = Vec::new();
    let (overlap, cells) = overlap(&sample, &spec, cfg.inference.overlap_floor, &mut warnings);

    let mut rows = Vec::new();
    for e in &cfg.estimands {
        let req = request(e)?;
        let results = run_estimand(&sample, &spec, &req).map_err(|err| CliError::from_core(err, Stage::Estimation))?;
        for row in results {
            let sol = &row.solution;
            let est = row.estimate();
            if !est.is_finite() {
                return Err(CliError::Estimation(format!("{}: non-finite estimate", row.label)));
            }
            if !sol.converged {
                warnings.push(format!("{}: moment solver did not converge (|mean moment| {:e})", row.label, sol.moment_norm));
            }
            let mut inference = Vec::new();
            for m in &cfg.inference.methods {
                let label = method_label(m, cfg);
                let v = variance_for(sol, m, cfg).map_err(|err| CliError::Inference(format!("{} [{label}]: {err}", row.label)))?;
                warnings.extend(v.warnings.iter().map(|w| format!("{} [{label}]: {w}", row.label)));
                let se = v.se[sol.tau_index];
                if !se.is_finite() {
                    return Err(CliError::Inference(format!("{} [{label}]: non-finite standard error", row.label)));
                }
                let (lo, hi) = confidence_interval(est, se, cfg.inference.level).map_err(|err| CliError::from_core(err, Stage::Inference))?;
                inference.push(InferenceReport { method: label, se, ci: [lo, hi] });
            }
            rows.push(RowReport {
                label: row.label.clone(),
                target: row.target.name().to_string(),
                g: e.g,
                g_ref: e.g_ref,
                w: e.w,
                estimate: est,
                n: sol.n_units(),
                converged: sol.converged,
                interpretation: row.interpretation.clone(),
                inference,
            });
        }
    }

    let mut hashed = cfg.clone();
    hashed.data.path = None;
    let clusters = sample.clusters.as_ref().map(|c| c.iter().collect::<std::collections::BTreeSet<_>>().len());
    let mut rep = EstimateReport {
        provenance: Provenance::new("estimate", hash_json(&hashed), Some(hex(&Sha256::digest(bytes)))),
        config: hashed,
        sample: SampleReport { units: pop.len(), eligible: sample.len(), treated: sample.w.iter().filter(|&&w| w).count(), levels: sample.levels.clone(), clusters, cells },
        overlap,
        rows,
        warnings,
    };
    rep.seal();
    Ok(rep)
}
