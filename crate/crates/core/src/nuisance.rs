//! Nuisance models: propensity scores for `W` and for `G` given `W`
//! (logit MLE or just-identified CBPS) and outcome regressions.
//!
//! Multinomial exposure models are baseline-category logits with the
//! lowest level as baseline. Coefficients are stored level-major: block
//! `l - 1` holds the coefficients of level `l` against the baseline.

use std::collections::BTreeMap;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::{dot_mixed, least_squares, Matrix};
use crate::sample::Sample;
use crate::scalar::{Dual, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PsMethod {
    Mle,
    #[default]
    Cbps,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 200, tol: 1e-10 }
    }
}

/// Linear-index magnitude beyond which fitted probabilities are treated as
/// numerically 0 or 1 (separation).
const SEPARATION_INDEX: f64 = 35.0;

/// Category probabilities for one design row.
pub fn category_probs<T: Real, S: Real + From<T>>(x: &[T], beta: &[S], n_levels: usize) -> Vec<S> {
    let k = x.len();
    let mut eta = Vec::with_capacity(n_levels);
    eta.push(S::zero());
    for l in 1..n_levels {
        eta.push(dot_mixed(x, &beta[(l - 1) * k..l * k]));
    }
    let m = eta.iter().fold(S::zero(), |a, &b| a.max(b));
    let ex: Vec<S> = eta.iter().map(|&e| (e - m).exp()).collect();
    let total: S = ex.iter().copied().sum();
    ex.into_iter().map(|e| e / total).collect()
}

/// Per-unit score (MLE) or balancing (CBPS) moment of a logit model,
/// written into `out` (length `(n_levels - 1) * k`).
pub fn logit_unit_moment<T: Real, S: Real + From<T>>(method: PsMethod, x: &[T], y: usize, beta: &[S], n_levels: usize, out: &mut [S]) {
    let k = x.len();
    let pr = category_probs(x, beta, n_levels);
    for l in 1..n_levels {
        let f = match method {
            PsMethod::Mle => {
                let ind = if y == l { S::one() } else { S::zero() };
                ind - pr[l]
            }
            PsMethod::Cbps => {
                let mut f = S::zero();
                if y == l {
                    f += S::one() / pr[l];
                }
                if y == l - 1 {
                    f -= S::one() / pr[l - 1];
                }
                f
            }
        };
        for a in 0..k {
            out[(l - 1) * k + a] = <S as From<_>>::from(x[a]) * f;
        }
    }
}

fn mean_moment<T: Real, S: Real + From<T>>(method: PsMethod, x: &Matrix<T>, y: &[usize], beta: &[S], n_levels: usize) -> Vec<S> {
    let p = beta.len();
    let mut acc = vec![S::zero(); p];
    let mut buf = vec![S::zero(); p];
    for i in 0..x.rows() {
        logit_unit_moment(method, x.row(i), y[i], beta, n_levels, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += *b;
        }
    }
    let n = S::lit(x.rows() as f64);
    acc.into_iter().map(|a| a / n).collect()
}

fn mean_loglik<T: Real>(x: &Matrix<T>, y: &[usize], beta: &[T], n_levels: usize) -> T {
    let mut s = T::zero();
    for i in 0..x.rows() {
        let pr = category_probs(x.row(i), beta, n_levels);
        s += pr[y[i]].ln();
    }
    s / T::lit(x.rows() as f64)
}

fn neg_hessian<T: Real>(x: &Matrix<T>, beta: &[T], n_levels: usize) -> Matrix<T> {
    let k = x.cols();
    let p = (n_levels - 1) * k;
    let mut h = Matrix::zeros(p, p);
    for i in 0..x.rows() {
        let r = x.row(i);
        let pr = category_probs(r, beta, n_levels);
        for l in 1..n_levels {
            for m in 1..n_levels {
                let c = if l == m { pr[l] * (T::one() - pr[l]) } else { -pr[l] * pr[m] };
                for a in 0..k {
                    for b in 0..k {
                        h[((l - 1) * k + a, (m - 1) * k + b)] += c * r[a] * r[b];
                    }
                }
            }
        }
    }
    h.scale(T::one() / T::lit(x.rows() as f64))
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

fn check_rank<T: Real>(x: &Matrix<T>, names: &[String]) -> Result<()> {
    least_squares(x, &vec![T::zero(); x.rows()], names, 1e-10).map(|_| ())
}

fn coefficient_names(names: &[String], n_levels: usize, levels: &[i64]) -> Vec<String> {
    if n_levels <= 2 {
        return names.to_vec();
    }
    (1..n_levels).flat_map(|l| names.iter().map(move |n| format!("[G={}] {n}", levels[l]))).collect()
}

fn separation_check<T: Real>(x: &Matrix<T>, beta: &[T], n_levels: usize, names: &[String], iterations: usize, residual: f64) -> Result<()> {
    let k = x.cols();
    let worst = (0..x.rows())
        .flat_map(|i| (1..n_levels).map(move |l| (i, l)))
        .map(|(i, l)| dot_mixed(x.row(i), &beta[(l - 1) * k..l * k]).value().abs())
        .fold(0.0, f64::max);
    if worst > SEPARATION_INDEX {
        let (j, _) = beta.iter().enumerate().fold((0, 0.0), |acc, (j, &b)| if b.value().abs() > acc.1 { (j, b.value().abs()) } else { acc });
        let name = names.get(j % k.max(1)).cloned().unwrap_or_default();
        return Err(Error::NonConvergence {
            what: "logit".into(),
            iterations,
            residual,
            hint: format!("; probabilities reach 0/1 (separation), likely along `{name}`"),
        });
    }
    Ok(())
}

/// Maximum-likelihood baseline-category logit by damped Newton.
/// Returns `(coefficients, iterations, max |mean score|)`.
pub fn fit_logit_mle<T: Real>(x: &Matrix<T>, y: &[usize], n_levels: usize, names: &[String], opts: SolverOptions) -> Result<(Vec<T>, usize, f64)> {
    check_categories(y, n_levels)?;
    check_rank(x, names)?;
    let p = (n_levels - 1) * x.cols();
    let mut beta = vec![T::zero(); p];
    let tol = T::lit(opts.tol);
    let mut ll = mean_loglik(x, y, &beta, n_levels);
    for it in 0..opts.max_iter {
        let score = mean_moment(PsMethod::Mle, x, y, &beta, n_levels);
        let sm = max_abs(&score);
        if sm <= tol {
            separation_check(x, &beta, n_levels, names, it, sm.value())?;
            return Ok((beta, it, sm.value()));
        }
        let step = neg_hessian(x, &beta, n_levels).solve(&score).ok();
        let mut accepted = false;
        if let Some(step) = step {
            let mut t = T::one();
            for _ in 0..=3 {
                let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
                let cll = mean_loglik(x, y, &cand, n_levels);
                if cll.is_finite() && cll >= ll - T::lit(1e-14) * ll.abs() {
                    beta = cand;
                    ll = cll;
                    accepted = true;
                    break;
                }
                t = t / T::lit(2.0);
            }
        }
        if !accepted {
            let mut t = T::one();
            for _ in 0..60 {
                let cand: Vec<T> = beta.iter().zip(&score).map(|(&b, &s)| b + t * s).collect();
                let cll = mean_loglik(x, y, &cand, n_levels);
                if cll.is_finite() && cll > ll {
                    beta = cand;
                    ll = cll;
                    accepted = true;
                    break;
                }
                t = t / T::lit(2.0);
            }
        }
        if !accepted {
            separation_check(x, &beta, n_levels, names, it, sm.value())?;
            return Err(Error::NonConvergence { what: "logit".into(), iterations: it, residual: sm.value(), hint: "; line search failed".into() });
        }
    }
    let sm = max_abs(&mean_moment(PsMethod::Mle, x, y, &beta, n_levels));
    separation_check(x, &beta, n_levels, names, opts.max_iter, sm.value())?;
    if sm <= tol {
        return Ok((beta, opts.max_iter, sm.value()));
    }
    Err(Error::NonConvergence { what: "logit".into(), iterations: opts.max_iter, residual: sm.value(), hint: String::new() })
}

/// Jacobian of the mean balancing moments by forward-mode differentiation.
fn balancing_jacobian<T: Real>(x: &Matrix<T>, y: &[usize], beta: &[T], n_levels: usize) -> Matrix<T> {
    let p = beta.len();
    let mut j = Matrix::zeros(p, p);
    for c in 0..p {
        let b: Vec<Dual<T>> = beta.iter().enumerate().map(|(k, &v)| if k == c { Dual::variable(v) } else { Dual::constant(v) }).collect();
        let f = mean_moment(PsMethod::Cbps, x, y, &b, n_levels);
        for r in 0..p {
            j[(r, c)] = f[r].eps;
        }
    }
    j
}

/// Just-identified covariate-balancing logit, started from the MLE.
pub fn fit_logit_cbps<T: Real>(x: &Matrix<T>, y: &[usize], n_levels: usize, names: &[String], opts: SolverOptions) -> Result<(Vec<T>, usize, f64)> {
    let (mut beta, _, _) = fit_logit_mle(x, y, n_levels, names, opts)?;
    let tol = T::lit(opts.tol);
    let half = T::lit(0.5);
    let mut f = mean_moment(PsMethod::Cbps, x, y, &beta, n_levels);
    let merit = |f: &[T]| f.iter().map(|&v| v * v).sum::<T>() * half;
    let mut m = merit(&f);
    for it in 0..opts.max_iter {
        let fm = max_abs(&f);
        if fm <= tol {
            return Ok((beta, it, fm.value()));
        }
        let jac = balancing_jacobian(x, y, &beta, n_levels);
        let step = jac.solve(&f).map_err(|_| Error::NonConvergence {
            what: "CBPS balancing".into(),
            iterations: it,
            residual: fm.value(),
            hint: "; singular balancing Jacobian".into(),
        })?;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b - t * s).collect();
            let cf = mean_moment(PsMethod::Cbps, x, y, &cand, n_levels);
            let cm = merit(&cf);
            if cm.is_finite() && cm < m {
                beta = cand;
                f = cf;
                m = cm;
                accepted = true;
                break;
            }
            t = t * half;
        }
        if !accepted {
            break;
        }
    }
    let fm = max_abs(&f);
    if fm <= tol {
        return Ok((beta, opts.max_iter, fm.value()));
    }
    Err(Error::NonConvergence { what: "CBPS balancing".into(), iterations: opts.max_iter, residual: fm.value(), hint: String::new() })
}

fn check_categories(y: &[usize], n_levels: usize) -> Result<()> {
    if n_levels < 2 {
        return Err(Error::Config("logit needs at least two outcome categories".into()));
    }
    for l in 0..n_levels {
        if !y.contains(&l) {
            return Err(Error::DegenerateArm(format!("no unit in outcome category {l}; the logit likelihood is unbounded")));
        }
    }
    Ok(())
}

/// Fitted propensity model with its design.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitFit<T> {
    pub coefficients: Vec<T>,
    pub names: Vec<String>,
    pub design: Design<T>,
    /// Outcome categories: `[0, 1]` for `W`, the exposure levels for `G`.
    pub levels: Vec<i64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub method: PsMethod,
}

impl<T: Real> LogitFit<T> {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// `P(W_i = 1 | z_i)` for a treatment model.
    pub fn prob_treated(&self, i: usize) -> T {
        category_probs(&self.design.row_at(i, false, 0), &self.coefficients, 2)[1]
    }

    /// `P(G_i = g | W_i = w, z_i)` for an exposure model.
    pub fn prob_level(&self, i: usize, w: bool, g: i64) -> T {
        match self.levels.binary_search(&g) {
            Ok(_) if self.levels.len() == 1 => T::one(),
            Ok(l) => category_probs(&self.design.row_at(i, w, 0), &self.coefficients, self.levels.len())[l],
            Err(_) => T::zero(),
        }
    }

    /// Labeled coefficient listing.
    pub fn to_text(&self) -> String {
        self.names.iter().zip(&self.coefficients).map(|(n, c)| format!("{n}\t{c}\n")).collect()
    }
}

fn logit_fit<T: Real>(x: &Matrix<T>, y: &[usize], design: Design<T>, levels: Vec<i64>, method: PsMethod, opts: SolverOptions) -> Result<LogitFit<T>> {
    let names = design.names();
    let (coefficients, iterations, max_abs_score) = match method {
        PsMethod::Mle => fit_logit_mle(x, y, levels.len(), &names, opts)?,
        PsMethod::Cbps => fit_logit_cbps(x, y, levels.len(), &names, opts)?,
    };
    Ok(LogitFit { coefficients, names: coefficient_names(&names, levels.len(), &levels), design, levels, converged: true, iterations, max_abs_score, method })
}

pub fn treatment_labels<T>(sample: &Sample<T>) -> Vec<usize> {
    sample.w.iter().map(|&w| w as usize).collect()
}

pub fn exposure_labels<T: Real>(sample: &Sample<T>) -> Vec<usize> {
    sample.g.iter().map(|g| sample.levels.binary_search(g).unwrap()).collect()
}

fn check_w_design<T: Real>(design: &Design<T>) -> Result<()> {
    if design.uses_w() || design.uses_g() {
        return Err(Error::Config("treatment propensity design may not contain W or G".into()));
    }
    Ok(())
}

fn check_g_design<T: Real>(design: &Design<T>) -> Result<()> {
    if design.uses_g() {
        return Err(Error::Config("exposure propensity design may not contain G".into()));
    }
    Ok(())
}

/// Treatment propensity `p(z) = P(W = 1 | z)`.
pub fn fit_logit_w<T: Real>(sample: &Sample<T>, design: Design<T>, method: PsMethod, opts: SolverOptions) -> Result<LogitFit<T>> {
    check_w_design(&design)?;
    let x = design.matrix(sample);
    logit_fit(&x, &treatment_labels(sample), design, vec![0, 1], method, opts)
}

/// Exposure propensity `π_{wg}(z) = P(G = g | W = w, z)`. A single
/// exposure level gives the trivial model `π ≡ 1`.
pub fn fit_logit_g<T: Real>(sample: &Sample<T>, design: Design<T>, method: PsMethod, opts: SolverOptions) -> Result<LogitFit<T>> {
    check_g_design(&design)?;
    let levels = sample.levels.clone();
    if levels.len() == 1 {
        return Ok(LogitFit { coefficients: vec![], names: vec![], design, levels, converged: true, iterations: 0, max_abs_score: 0.0, method });
    }
    let x = design.matrix(sample);
    logit_fit(&x, &exposure_labels(sample), design, levels, method, opts)
}

/// CBPS fits for both propensity models.
pub fn fit_cbps<T: Real>(sample: &Sample<T>, design_w: Design<T>, design_g: Design<T>, opts: SolverOptions) -> Result<(LogitFit<T>, LogitFit<T>)> {
    Ok((fit_logit_w(sample, design_w, PsMethod::Cbps, opts)?, fit_logit_g(sample, design_g, PsMethod::Cbps, opts)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Pre,
    Post,
    Diff,
}

impl Target {
    pub fn values<T: Real>(self, sample: &Sample<T>) -> Vec<T> {
        match self {
            Target::Pre => sample.y_pre.clone(),
            Target::Post => sample.y_post.clone(),
            Target::Diff => sample.dy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeSpec {
    /// Separate regressions for `Y_1` and `Y_2`.
    PerPeriod { pre: Vec<String>, post: Vec<String>, cellwise: bool },
    /// One regression for `ΔY`.
    Differenced { design: Vec<String>, cellwise: bool },
}

impl OutcomeSpec {
    pub fn cellwise(&self) -> bool {
        match self {
            OutcomeSpec::PerPeriod { cellwise, .. } | OutcomeSpec::Differenced { cellwise, .. } => *cellwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regression<T> {
    pub target: Target,
    /// Cell `(w, g)` for cell-wise fits; `None` for pooled fits.
    pub cell: Option<(bool, i64)>,
    pub design: Design<T>,
    pub coefficients: Vec<T>,
    pub residual_sd: T,
}

impl<T: Real> Regression<T> {
    pub fn mask(&self, sample: &Sample<T>) -> Vec<bool> {
        match self.cell {
            None => vec![true; sample.len()],
            Some((w, g)) => sample.w.iter().zip(&sample.g).map(|(&wi, &gi)| wi == w && gi == g).collect(),
        }
    }

    pub fn predict(&self, i: usize, w: bool, g: i64) -> T {
        crate::linalg::dot(&self.design.row_at(i, w, g), &self.coefficients)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRegFit<T> {
    pub regressions: Vec<Regression<T>>,
    pub differenced: bool,
    pub cellwise: bool,
}

impl<T: Real> OutcomeRegFit<T> {
    pub fn find(&self, target: Target, w: bool, g: i64) -> Option<usize> {
        self.regressions.iter().position(|r| r.target == target && (r.cell.is_none() || r.cell == Some((w, g))))
    }

    /// `m̂_{t,wg}(z_i)` for `t` in {Pre, Post}; `None` in differenced mode.
    pub fn m(&self, target: Target, i: usize, w: bool, g: i64) -> Option<T> {
        self.find(target, w, g).map(|k| self.regressions[k].predict(i, w, g))
    }

    /// `Δm̂_{wg}(z_i)`.
    pub fn dm(&self, i: usize, w: bool, g: i64) -> Option<T> {
        if self.differenced {
            self.m(Target::Diff, i, w, g)
        } else {
            Some(self.m(Target::Post, i, w, g)? - self.m(Target::Pre, i, w, g)?)
        }
    }
}

pub fn fit_outcome_regressions<T: Real>(sample: &Sample<T>, spec: &OutcomeSpec) -> Result<OutcomeRegFit<T>> {
    let plan: Vec<(Target, &Vec<String>)> = match spec {
        OutcomeSpec::PerPeriod { pre, post, .. } => vec![(Target::Pre, pre), (Target::Post, post)],
        OutcomeSpec::Differenced { design, .. } => vec![(Target::Diff, design)],
    };
    let cells: Vec<Option<(bool, i64)>> = if spec.cellwise() {
        [false, true].iter().flat_map(|&w| sample.levels.iter().map(move |&g| Some((w, g)))).collect()
    } else {
        vec![None]
    };
    let mut regressions = Vec::new();
    for (target, terms) in plan {
        let y_all = target.values(sample);
        for &cell in &cells {
            let design = Design::build(sample, terms)?;
            let mut reg = Regression { target, cell, design, coefficients: vec![], residual_sd: T::zero() };
            let mask = reg.mask(sample);
            let idx: Vec<usize> = (0..sample.len()).filter(|&i| mask[i]).collect();
            if idx.is_empty() {
                let (w, g) = cell.unwrap();
                return Err(Error::Overlap(format!("(W={}, G={g}) has no units for the cell-wise outcome regression", w as u8)));
            }
            let full = reg.design.matrix(sample);
            let x = Matrix::from_rows(&idx.iter().map(|&i| full.row(i).to_vec()).collect::<Vec<_>>());
            let y: Vec<T> = idx.iter().map(|&i| y_all[i]).collect();
            reg.coefficients = least_squares(&x, &y, &reg.design.names(), 1e-10)?;
            let fitted = x.mul_vec(&reg.coefficients);
            let rss: T = y.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
            reg.residual_sd = (rss / T::lit(y.len() as f64)).sqrt();
            regressions.push(reg);
        }
    }
    Ok(OutcomeRegFit { regressions, differenced: matches!(spec, OutcomeSpec::Differenced { .. }), cellwise: spec.cellwise() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropensityDiagnostics {
    pub p_min: f64,
    pub p_max: f64,
    /// Minimum over units of `π̂_{wg}` per cell `(w, g)`.
    pub pi_min: BTreeMap<(bool, i64), f64>,
    pub cell_counts: BTreeMap<(bool, i64), usize>,
    pub floor: f64,
    pub warnings: Vec<String>,
}

pub fn overlap_diagnostics<T: Real>(sample: &Sample<T>, fit_w: &LogitFit<T>, fit_g: &LogitFit<T>, floor: f64) -> PropensityDiagnostics {
    let mut warnings = Vec::new();
    let (mut p_min, mut p_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..sample.len() {
        let p = fit_w.prob_treated(i).value();
        p_min = p_min.min(p);
        p_max = p_max.max(p);
        if p < floor || p > 1.0 - floor {
            warnings.push(format!("unit `{}`: treatment propensity {p:.4} outside [{floor}, {}]", sample.ids[i], 1.0 - floor));
        }
    }
    let mut pi_min = BTreeMap::new();
    let mut cell_counts = BTreeMap::new();
    for &w in &[false, true] {
        for &g in &sample.levels {
            cell_counts.insert((w, g), sample.cell_count(w, g));
            let mut lo = f64::INFINITY;
            for i in 0..sample.len() {
                let pi = fit_g.prob_level(i, w, g).value();
                lo = lo.min(pi);
                if pi < floor {
                    warnings.push(format!("unit `{}`: exposure propensity π(W={}, G={g}) = {pi:.4} below floor {floor}", sample.ids[i], w as u8));
                }
            }
            pi_min.insert((w, g), lo);
        }
    }
    PropensityDiagnostics { p_min, p_max, pi_min, cell_counts, floor, warnings }
}
