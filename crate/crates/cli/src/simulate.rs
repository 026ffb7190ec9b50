//! The `simulate` command.

use std::fmt::Write as _;

use nbrdid::inference::{KernelSpec, VarianceMethod};
use nbrdid_simlab::{parse_suite, run_replications, tables, DesignId, DesignSpec, FixedDesign, ReplicationSummary, RunOptions, SuiteModels};
use serde::Deserialize;

use crate::config::{hash_json, parse_toml, SimulateConfig};
use crate::report::{Provenance, SimulateReport};
use crate::{write_outputs, CliError, SimulateArgs, Stage};

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    simulate: SimulateConfig,
}

pub fn resolve_config(args: &SimulateArgs) -> Result<SimulateConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Validation(format!("cannot read config `{}`: {e}", p.display())))?;
            parse_toml::<SimulateFile>(&text, &format!("config `{}`", p.display()))?.simulate
        }
        None => SimulateConfig::default(),
    };
    if let Some(d) = &args.design {
        cfg.designs = d.iter().map(|s| s.trim().to_string()).collect();
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = &args.suite {
        cfg.suite = s.clone();
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if let Some(b) = &args.bandwidths {
        cfg.bandwidths = b.clone();
    }
    cfg.track_params |= args.track_params;
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(cfg: &SimulateConfig) -> RunOptions {
    let mut variance = vec![VarianceMethod::Ehw];
    variance.extend(cfg.bandwidths.iter().map(|&b| VarianceMethod::Shac(KernelSpec::bartlett(b))));
    RunOptions { reps: cfg.reps, threads: cfg.threads, variance, level: cfg.level, track_params: cfg.track_params }
}

/// Runs every requested design; validation of all inputs precedes any draw.
pub fn simulate(cfg: &SimulateConfig) -> Result<SimulateReport, CliError> {
    let ids = cfg.designs.iter().map(|d| d.parse::<DesignId>().map_err(|_| CliError::Validation(format!("unknown design `{d}`")))).collect::<Result<Vec<_>, _>>()?;
    let suite = parse_suite(&cfg.suite, &SuiteModels::default()).map_err(|e| CliError::from_core(e, Stage::Input))?;
    let designs = ids.iter().map(|&id| FixedDesign::new(DesignSpec::standard(id, cfg.seed)).map_err(|e| CliError::from_core(e, Stage::Input))).collect::<Result<Vec<_>, _>>()?;
    let opts = run_options(cfg);
    let summaries = designs.iter().map(|d| run_replications(d, &suite, &opts).map_err(|e| CliError::from_core(e, Stage::Estimation))).collect::<Result<Vec<_>, _>>()?;
    let mut provenance = Provenance::new("simulate", hash_json(cfg), None);
    provenance.seed = Some(cfg.seed);
    let mut rep = SimulateReport { provenance, config: cfg.clone(), summaries };
    rep.seal();
    Ok(rep)
}

pub fn simulate_text(r: &SimulateReport) -> String {
    let p = &r.provenance;
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", p.tool, p.version, p.command);
    let _ = writeln!(out, "config sha256       {}", p.config_hash);
    let _ = writeln!(out, "determinism sha256  {}", p.determinism_hash);
    let _ = writeln!(out, "seed {}, replications {}", r.config.seed, r.config.reps);
    for s in &r.summaries {
        let _ = writeln!(out);
        out.push_str(&tables::summary_table(s));
        if !s.flagged.is_empty() {
            let _ = writeln!(out, "flagged (failures above 0.1% of replications): {}", s.flagged.join(", "));
        }
    }
    let find = |name: &str| r.summaries.iter().find(|s| s.design == name);
    if let (Some(a), Some(b)) = (find("appendixF-noSpill"), find("appendixF-spill")) {
        if a.estimator("twfe").is_some() {
            let _ = writeln!(out);
            out.push_str(&tables::table1(a, b));
        }
    }
    let lattice: Vec<ReplicationSummary> = DesignId::TABLE3.iter().filter_map(|id| find(id.name()).cloned()).collect();
    if lattice.len() > 1 && lattice.iter().all(|s| s.estimators.len() >= nbrdid_simlab::suite::TABLE3.len()) {
        let _ = writeln!(out);
        out.push_str(&tables::table3(&lattice));
    }
    if let Some(e) = find("appendixE") {
        if e.estimator("dr_cbps1").is_some() {
            let _ = writeln!(out);
            out.push_str(&tables::table5(e));
            if r.config.track_params {
                let _ = writeln!(out);
                out.push_str(&tables::table6(e));
            }
        }
    }
    out
}

pub fn command(args: &SimulateArgs) -> Result<String, CliError> {
    let cfg = resolve_config(args)?;
    let rep = simulate(&cfg)?;
    let text = simulate_text(&rep);
    if let Some(dir) = &args.out {
        let json = serde_json::to_string_pretty(&rep).expect("summary serializes") + "\n";
        write_outputs(dir, &[("summary.txt", text.clone()), ("summary.json", json)])?;
    }
    Ok(text)
}
