//! Plain-text renderings of replication summaries.

use std::fmt::Write;

use crate::replicate::{EstimatorSummary, ReplicationSummary};

fn num(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Every estimator with mean, SD, bias and coverage per variance method.
pub fn summary_table(s: &ReplicationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} | reps {} | mean eligible {:.1} | fingerprint {}", s.design, s.reps, s.eligible_mean, s.fingerprint);
    let _ = writeln!(out, "truth: tau(1) {:.3}  tau(0) {:.3}  tau {:.3}  P(G=1|W=1) - P(G=1|W=0) {:.3}", s.truth.tau1, s.truth.tau0, s.truth.tau, s.truth.p_gap);
    let methods: Vec<String> = s.estimators.first().map(|e| e.coverage.iter().map(|c| c.method.clone()).collect()).unwrap_or_default();
    let _ = write!(out, "{:<14}{:>9}{:>9}{:>9}{:>9}{:>6}", "estimator", "mean", "sd", "truth", "bias", "fail");
    for m in &methods {
        let _ = write!(out, "{:>16}", format!("cov {m}"));
    }
    out.push('\n');
    for e in &s.estimators {
        let _ = write!(out, "{:<14}{:>9}{:>9}{:>9}{:>9}{:>6}", e.name, num(e.mean), num(e.sd), num(Some(e.truth)), num(e.bias), e.n_failed);
        for c in &e.coverage {
            let _ = write!(out, "{:>16}", num(c.coverage));
        }
        out.push('\n');
    }
    if !s.flagged.is_empty() {
        let _ = writeln!(out, "flagged (failures above 0.1% of replications): {}", s.flagged.join(", "));
    }
    out
}

/// Canonical DID against the overall effect, without and with spillovers.
pub fn table1(no_spill: &ReplicationSummary, spill: &ReplicationSummary) -> String {
    let twfe = |s: &ReplicationSummary| s.estimator("twfe").and_then(|e| e.mean);
    let mut out = String::new();
    let _ = writeln!(out, "{:<14}{:>14}{:>16}", "", "No Spillover", "With Spillover");
    let _ = writeln!(out, "{:<14}{:>14}{:>16}", "tau_canonical", num(twfe(no_spill)), num(twfe(spill)));
    let _ = writeln!(out, "{:<14}{:>14}{:>16}", "tau", num(Some(no_spill.truth.tau)), num(Some(spill.truth.tau)));
    out
}

/// Mean estimate of each estimator (rows) in each design (columns).
pub fn table3(summaries: &[ReplicationSummary]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "estimator");
    for (k, _) in summaries.iter().enumerate() {
        let _ = write!(out, "{:>10}", format!("({})", k + 1));
    }
    out.push('\n');
    if let Some(first) = summaries.first() {
        for e in &first.estimators {
            let _ = write!(out, "{:<14}", e.name);
            for s in summaries {
                let _ = write!(out, "{:>10}", num(s.estimator(&e.name).and_then(|x| x.mean)));
            }
            out.push('\n');
        }
    }
    out
}

/// Standard deviations of the exposure-level-1 estimators and coverage of
/// `dr_cbps1` per variance method.
pub fn table5(s: &ReplicationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "SD");
    for name in ["ra1", "ipw_mle1", "ipw_cbps1", "dr_mle1", "dr_cbps1"] {
        if let Some(e) = s.estimator(name) {
            let _ = writeln!(out, "  {:<12}{:>9}", name.trim_end_matches('1'), num(e.sd));
        }
    }
    if let Some(e) = s.estimator("dr_cbps1") {
        let _ = writeln!(out, "Coverage (dr_cbps)");
        for c in &e.coverage {
            let _ = writeln!(out, "  {:<12}{:>9}", c.method, num(c.coverage));
        }
    }
    out
}

fn param_cells(e: &EstimatorSummary, prefixes: &[&str], method: &str) -> Vec<(String, Option<f64>)> {
    e.params
        .iter()
        .filter(|p| prefixes.iter().any(|pre| p.name.starts_with(pre)))
        .map(|p| (p.name.clone(), p.coverage.iter().find(|c| c.method == method).and_then(|c| c.coverage)))
        .collect()
}

/// Coverage of the exposure propensity and post-period outcome parameters
/// and of `τ(1)`, `τ(0)` per variance method.
pub fn table6(s: &ReplicationSummary) -> String {
    let mut out = String::new();
    let (Some(e1), Some(e0)) = (s.estimator("dr_cbps1"), s.estimator("dr_cbps0")) else {
        return out;
    };
    let methods: Vec<String> = e1.coverage.iter().map(|c| c.method.clone()).collect();
    let header = param_cells(e1, &["q2:", "q4:"], "");
    let _ = write!(out, "{:<12}", "");
    for (name, _) in &header {
        let _ = write!(out, "{:>12}", name);
    }
    let _ = writeln!(out, "{:>9}{:>9}", "tau(1)", "tau(0)");
    for m in &methods {
        let _ = write!(out, "{:<12}", m);
        for (_, c) in param_cells(e1, &["q2:", "q4:"], m) {
            let _ = write!(out, "{:>12}", num(c));
        }
        let cov = |e: &EstimatorSummary| e.coverage_for(m).and_then(|c| c.coverage);
        let _ = writeln!(out, "{:>9}{:>9}", num(cov(e1)), num(cov(e0)));
    }
    out
}
