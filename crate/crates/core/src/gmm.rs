//! Stacked moment systems and their just-identified GMM solution.
//!
//! Parameter layout is `(γ1, γ2, γ3, γ4 | γ̃3, τ)`: treatment propensity,
//! exposure propensity, outcome regressions (pre then post, or the
//! differenced regression; cell-wise fits are ordered by `(w, g)`), and the
//! effect. Blocks absent from an estimand are omitted. The Jacobian of the
//! mean moments is computed by forward-mode differentiation of the same
//! generic evaluation code.

use std::collections::BTreeMap;

use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimators::{effect_contributions, Adjustment, Effect, NuisanceValues};
use crate::linalg::{dot_mixed, least_squares, Matrix};
use crate::nuisance::{category_probs, exposure_labels, fit_logit_cbps, fit_logit_mle, logit_unit_moment, treatment_labels, OutcomeSpec, PsMethod, SolverOptions, Target};
use crate::sample::Sample;
use crate::scalar::{Dual, Real};

/// Model declarations shared by the estimands of one analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub ps_method: PsMethod,
    pub w_terms: Vec<String>,
    pub g_terms: Vec<String>,
    /// CBPS balancing functions; must coincide with the model terms.
    pub w_balance: Option<Vec<String>>,
    pub g_balance: Option<Vec<String>>,
    pub outcome: OutcomeSpec,
    pub solver: SolverOptions,
}

impl ModelSpec {
    pub fn new(ps_method: PsMethod, w_terms: &[&str], g_terms: &[&str], outcome: OutcomeSpec) -> Self {
        ModelSpec {
            ps_method,
            w_terms: w_terms.iter().map(|s| s.to_string()).collect(),
            g_terms: g_terms.iter().map(|s| s.to_string()).collect(),
            w_balance: None,
            g_balance: None,
            outcome,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectRequest {
    pub effect: Effect,
    pub adjustment: Adjustment,
    pub normalize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
struct WBlock<T> {
    method: PsMethod,
    x: Matrix<T>,
    names: Vec<String>,
    offset: usize,
}

#[derive(Clone, Debug)]
struct GBlock<T> {
    method: PsMethod,
    x_obs: Matrix<T>,
    /// Design rows with `W` set to 0 and 1.
    x_at: [Matrix<T>; 2],
    n_levels: usize,
    names: Vec<String>,
    offset: usize,
}

#[derive(Clone, Debug)]
struct RegBlock<T> {
    target: Target,
    x_obs: Matrix<T>,
    y: Vec<T>,
    mask: Vec<bool>,
    x_at: BTreeMap<(bool, i64), Matrix<T>>,
    names: Vec<String>,
    offset: usize,
}

#[derive(Clone, Debug)]
pub struct MomentSystem<T> {
    sample: Sample<T>,
    request: EffectRequest,
    w_block: Option<WBlock<T>>,
    g_block: Option<GBlock<T>>,
    regs: Vec<RegBlock<T>>,
    oracle: Option<NuisanceValues<T>>,
    cells: Vec<(bool, i64)>,
    tau_index: usize,
    blocks: Vec<Block>,
    param_names: Vec<String>,
    solver: SolverOptions,
}

fn check_balance(terms: &[String], balance: &Option<Vec<String>>, which: &str) -> Result<()> {
    if let Some(b) = balance {
        if b.len() > terms.len() {
            return Err(Error::Assembly(format!(
                "{which} CBPS has {} balancing functions for {} coefficients; over-identification is not supported",
                b.len(),
                terms.len()
            )));
        }
        if b != terms {
            return Err(Error::Assembly(format!("{which} CBPS balancing functions must coincide with the model terms")));
        }
    }
    Ok(())
}

fn needs_blocks(request: &EffectRequest) -> (bool, bool, bool) {
    let ps = request.adjustment != Adjustment::Ra;
    match request.effect {
        Effect::Canonical => (false, false, false),
        Effect::Abadie => (true, false, false),
        Effect::Datt { .. } | Effect::Spillover { .. } => (ps, ps, request.adjustment != Adjustment::Ipw),
    }
}

fn needed_cells(effect: Effect) -> Vec<(bool, i64)> {
    match effect {
        Effect::Datt { g } => vec![(false, g), (true, g)],
        Effect::Spillover { w, g, g_ref } => vec![(w, g), (w, g_ref)],
        _ => vec![],
    }
}

/// Assembles the stacked system for one estimand from fitted-model specs.
pub fn assemble_moments<T: Real>(sample: &Sample<T>, spec: &ModelSpec, request: EffectRequest) -> Result<MomentSystem<T>> {
    let (need_w, need_g, need_reg) = needs_blocks(&request);
    let cells = needed_cells(request.effect);
    for &(_, g) in &cells {
        sample.level_index(g)?;
    }
    if let Effect::Spillover { g, g_ref, .. } = request.effect {
        if g == g_ref {
            return Err(Error::InvalidContrast);
        }
    }
    let mut blocks = Vec::new();
    let mut names = Vec::new();
    let mut offset = 0;
    let mut push_block = |name: &str, pnames: Vec<String>, blocks: &mut Vec<Block>, names: &mut Vec<String>| {
        let len = pnames.len();
        blocks.push(Block { name: name.to_string(), offset, len });
        names.extend(pnames.into_iter().map(|p| format!("{name}:{p}")));
        offset += len;
        offset - len
    };

    let w_block = if need_w {
        if spec.ps_method == PsMethod::Cbps {
            check_balance(&spec.w_terms, &spec.w_balance, "treatment")?;
        }
        let d = Design::build(sample, &spec.w_terms)?;
        if d.uses_w() || d.uses_g() {
            return Err(Error::Config("treatment propensity design may not contain W or G".into()));
        }
        let names_w = d.names();
        let off = push_block("q1", names_w.clone(), &mut blocks, &mut names);
        Some(WBlock { method: spec.ps_method, x: d.matrix(sample), names: names_w, offset: off })
    } else {
        None
    };

    let g_block = if need_g && sample.levels.len() > 1 {
        if spec.ps_method == PsMethod::Cbps {
            check_balance(&spec.g_terms, &spec.g_balance, "exposure")?;
        }
        let d = Design::build(sample, &spec.g_terms)?;
        if d.uses_g() {
            return Err(Error::Config("exposure propensity design may not contain G".into()));
        }
        let n_levels = sample.levels.len();
        let base = d.names();
        let pnames: Vec<String> = if n_levels == 2 {
            base.clone()
        } else {
            (1..n_levels).flat_map(|l| base.iter().map(move |b| format!("[G={}] {b}", sample.levels[l]))).collect()
        };
        let off = push_block("q2", pnames.clone(), &mut blocks, &mut names);
        Some(GBlock { method: spec.ps_method, x_obs: d.matrix(sample), x_at: [d.matrix_at(false, 0), d.matrix_at(true, 0)], n_levels, names: pnames, offset: off })
    } else {
        None
    };

    let mut regs = Vec::new();
    if need_reg {
        let targets: Vec<(Target, &Vec<String>, &str)> = match (&spec.outcome, request.effect) {
            (OutcomeSpec::PerPeriod { post, .. }, Effect::Spillover { .. }) => vec![(Target::Post, post, "q4")],
            (OutcomeSpec::PerPeriod { pre, post, .. }, _) => vec![(Target::Pre, pre, "q3"), (Target::Post, post, "q4")],
            (OutcomeSpec::Differenced { .. }, Effect::Spillover { .. }) => {
                return Err(Error::Config("spillover estimands need per-period outcome regressions".into()));
            }
            (OutcomeSpec::Differenced { design, .. }, _) => vec![(Target::Diff, design, "q3~")],
        };
        let reg_cells: Vec<Option<(bool, i64)>> = if spec.outcome.cellwise() {
            [false, true].iter().flat_map(|&w| sample.levels.iter().map(move |&g| Some((w, g)))).collect()
        } else {
            vec![None]
        };
        for (target, terms, label) in targets {
            for &cell in &reg_cells {
                let d = Design::build(sample, terms)?;
                let mask: Vec<bool> = match cell {
                    None => vec![true; sample.len()],
                    Some((w, g)) => sample.w.iter().zip(&sample.g).map(|(&wi, &gi)| wi == w && gi == g).collect(),
                };
                if !mask.iter().any(|&m| m) {
                    let (w, g) = cell.unwrap();
                    return Err(Error::Overlap(format!("(W={}, G={g}) has no units for the cell-wise outcome regression", w as u8)));
                }
                let x_at = cells.iter().filter(|&&c| cell.is_none() || cell == Some(c)).map(|&(w, g)| ((w, g), d.matrix_at(w, g))).collect();
                let label = match cell {
                    None => label.to_string(),
                    Some((w, g)) => format!("{label}[W={},G={g}]", w as u8),
                };
                let rnames = d.names();
                let off = push_block(&label, rnames.clone(), &mut blocks, &mut names);
                regs.push(RegBlock { target, x_obs: d.matrix(sample), y: target.values(sample), mask, x_at, names: rnames, offset: off });
            }
        }
    }
    let tau_index = push_block("q5", vec!["tau".into()], &mut blocks, &mut names);
    Ok(MomentSystem { sample: sample.clone(), request, w_block, g_block, regs, oracle: None, cells, tau_index, blocks, param_names: names, solver: spec.solver })
}

/// Effect-moment-only system with fixed (oracle) nuisance values.
pub fn assemble_oracle<T: Real>(sample: &Sample<T>, oracle: NuisanceValues<T>, request: EffectRequest) -> Result<MomentSystem<T>> {
    let cells = needed_cells(request.effect);
    Ok(MomentSystem {
        sample: sample.clone(),
        request,
        w_block: None,
        g_block: None,
        regs: vec![],
        oracle: Some(oracle),
        cells,
        tau_index: 0,
        blocks: vec![Block { name: "q5".into(), offset: 0, len: 1 }],
        param_names: vec!["q5:tau".into()],
        solver: SolverOptions::default(),
    })
}

fn lift_map<T: Real, S: Real + From<T>>(m: &BTreeMap<(bool, i64), Vec<T>>) -> BTreeMap<(bool, i64), Vec<S>> {
    m.iter().map(|(&k, v)| (k, v.iter().map(|&x| <S as From<_>>::from(x)).collect())).collect()
}

impl<T: Real> MomentSystem<T> {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_moments(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn n_units(&self) -> usize {
        self.sample.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn tau_index(&self) -> usize {
        self.tau_index
    }

    pub fn sample(&self) -> &Sample<T> {
        &self.sample
    }

    fn nuisance_values<S: Real + From<T>>(&self, theta: &[S]) -> NuisanceValues<S> {
        if let Some(o) = &self.oracle {
            return NuisanceValues {
                p: o.p.as_ref().map(|p| p.iter().map(|&x| <S as From<_>>::from(x)).collect()),
                pi: lift_map(&o.pi),
                m_pre: lift_map(&o.m_pre),
                m_post: lift_map(&o.m_post),
                dm: lift_map(&o.dm),
            };
        }
        let n = self.sample.len();
        let mut nv = NuisanceValues::default();
        if let Some(b) = &self.w_block {
            let beta = &theta[b.offset..b.offset + b.names.len()];
            nv.p = Some((0..n).map(|i| category_probs(b.x.row(i), beta, 2)[1]).collect());
        }
        for &(w, g) in &self.cells {
            let pi = match &self.g_block {
                Some(b) => {
                    let beta = &theta[b.offset..b.offset + b.names.len()];
                    let l = self.sample.levels.binary_search(&g).unwrap();
                    (0..n).map(|i| category_probs(b.x_at[w as usize].row(i), beta, b.n_levels)[l]).collect()
                }
                None => vec![S::one(); n],
            };
            nv.pi.insert((w, g), pi);
        }
        for r in &self.regs {
            let beta = &theta[r.offset..r.offset + r.names.len()];
            for (&cell, x) in &r.x_at {
                let m: Vec<S> = (0..n).map(|i| dot_mixed(x.row(i), beta)).collect();
                let map = match r.target {
                    Target::Pre => &mut nv.m_pre,
                    Target::Post => &mut nv.m_post,
                    Target::Diff => &mut nv.dm,
                };
                map.insert(cell, m);
            }
        }
        if !self.regs.is_empty() && self.regs.iter().all(|r| r.target != Target::Diff) {
            for &cell in &self.cells {
                if let (Some(a), Some(b)) = (nv.m_post.get(&cell), nv.m_pre.get(&cell)) {
                    let d = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
                    nv.dm.insert(cell, d);
                }
            }
        }
        nv
    }

    /// Per-unit moments `q(X_i, θ)` as an `n × k` matrix.
    pub fn unit_moments<S: Real + From<T>>(&self, theta: &[S]) -> Result<Matrix<S>> {
        if theta.len() != self.n_params() {
            return Err(Error::Assembly(format!("θ has length {}, system expects {}", theta.len(), self.n_params())));
        }
        let n = self.sample.len();
        let k = self.n_moments();
        let mut q = Matrix::zeros(n, k);
        if let Some(b) = &self.w_block {
            let beta = &theta[b.offset..b.offset + b.names.len()];
            let y = treatment_labels(&self.sample);
            for i in 0..n {
                let row = q.row_mut(i);
                logit_unit_moment(b.method, b.x.row(i), y[i], beta, 2, &mut row[b.offset..b.offset + b.names.len()]);
            }
        }
        if let Some(b) = &self.g_block {
            let beta = &theta[b.offset..b.offset + b.names.len()];
            let y = exposure_labels(&self.sample);
            for i in 0..n {
                let row = q.row_mut(i);
                logit_unit_moment(b.method, b.x_obs.row(i), y[i], beta, b.n_levels, &mut row[b.offset..b.offset + b.names.len()]);
            }
        }
        for r in &self.regs {
            let len = r.names.len();
            let beta = &theta[r.offset..r.offset + len];
            for i in 0..n {
                if !r.mask[i] {
                    continue;
                }
                let x = r.x_obs.row(i);
                let e = <S as From<_>>::from(r.y[i]) - dot_mixed(x, beta);
                let row = q.row_mut(i);
                for a in 0..len {
                    row[r.offset + a] = <S as From<_>>::from(x[a]) * e;
                }
            }
        }
        let nv = self.nuisance_values(theta);
        let (tau_hat, contrib) = effect_contributions(&self.sample, &nv, self.request.effect, self.request.adjustment, self.request.normalize)?;
        let tau = theta[self.tau_index];
        for i in 0..n {
            q[(i, self.tau_index)] = contrib[i] + tau_hat - tau;
        }
        Ok(q)
    }

    pub fn mean_moments<S: Real + From<T>>(&self, theta: &[S]) -> Result<Vec<S>> {
        let q = self.unit_moments(theta)?;
        let n = S::lit(q.rows() as f64);
        Ok((0..q.cols()).map(|j| (0..q.rows()).map(|i| q[(i, j)]).sum::<S>() / n).collect())
    }

    /// `R(θ) = ∂ mean q / ∂θ'` by forward-mode differentiation.
    pub fn jacobian(&self, theta: &[T]) -> Result<Matrix<T>> {
        let p = theta.len();
        let mut r = Matrix::zeros(self.n_moments(), p);
        for c in 0..p {
            let th: Vec<Dual<T>> = theta.iter().enumerate().map(|(k, &v)| if k == c { Dual::variable(v) } else { Dual::constant(v) }).collect();
            let m = self.mean_moments(&th)?;
            for (row, v) in m.iter().enumerate() {
                r[(row, c)] = v.eps;
            }
        }
        Ok(r)
    }

    /// Central finite-difference Jacobian with steps `h·max(1, |θ_j|)`.
    pub fn fd_jacobian(&self, theta: &[T], h: f64) -> Result<Matrix<T>> {
        let p = theta.len();
        let mut r = Matrix::zeros(self.n_moments(), p);
        for c in 0..p {
            let step = T::lit(h) * theta[c].abs().max(T::one());
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[c] += step;
            dn[c] -= step;
            let mu = self.mean_moments(&up)?;
            let md = self.mean_moments(&dn)?;
            for row in 0..mu.len() {
                r[(row, c)] = (mu[row] - md[row]) / (step + step);
            }
        }
        Ok(r)
    }

    /// Two-step estimates: each nuisance block fitted on its own, then the
    /// effect in closed form.
    pub fn sequential_estimates(&self) -> Result<Vec<T>> {
        let mut theta = vec![T::zero(); self.n_params()];
        if let Some(b) = &self.w_block {
            let y = treatment_labels(&self.sample);
            let (beta, _, _) = match b.method {
                PsMethod::Mle => fit_logit_mle(&b.x, &y, 2, &b.names, self.solver)?,
                PsMethod::Cbps => fit_logit_cbps(&b.x, &y, 2, &b.names, self.solver)?,
            };
            theta[b.offset..b.offset + beta.len()].copy_from_slice(&beta);
        }
        if let Some(b) = &self.g_block {
            let y = exposure_labels(&self.sample);
            let (beta, _, _) = match b.method {
                PsMethod::Mle => fit_logit_mle(&b.x_obs, &y, b.n_levels, &b.names, self.solver)?,
                PsMethod::Cbps => fit_logit_cbps(&b.x_obs, &y, b.n_levels, &b.names, self.solver)?,
            };
            theta[b.offset..b.offset + beta.len()].copy_from_slice(&beta);
        }
        for r in &self.regs {
            let idx: Vec<usize> = (0..self.sample.len()).filter(|&i| r.mask[i]).collect();
            let x = Matrix::from_rows(&idx.iter().map(|&i| r.x_obs.row(i).to_vec()).collect::<Vec<_>>());
            let y: Vec<T> = idx.iter().map(|&i| r.y[i]).collect();
            let beta = least_squares(&x, &y, &r.names, 1e-10)?;
            theta[r.offset..r.offset + beta.len()].copy_from_slice(&beta);
        }
        let nv = self.nuisance_values(&theta);
        let (tau, _) = effect_contributions(&self.sample, &nv, self.request.effect, self.request.adjustment, self.request.normalize)?;
        theta[self.tau_index] = tau;
        Ok(theta)
    }
}

#[derive(Clone, Debug)]
pub struct GmmSolution<T> {
    pub theta: Vec<T>,
    pub param_names: Vec<String>,
    pub unit_moments: Matrix<T>,
    pub jacobian: Matrix<T>,
    pub weighting: Matrix<T>,
    pub converged: bool,
    pub iterations: usize,
    pub moment_norm: f64,
    pub tau_index: usize,
    /// Unit coordinates and cluster indices, aligned with moment rows.
    pub coords: Vec<Vec<T>>,
    pub clusters: Option<Vec<usize>>,
}

impl<T: Real> GmmSolution<T> {
    pub fn tau(&self) -> T {
        self.theta[self.tau_index]
    }

    pub fn n_units(&self) -> usize {
        self.unit_moments.rows()
    }

    /// One-parameter pseudo-solution for a plug-in estimate with known
    /// influence contributions (`q_i = ψ_i + θ̂ − θ`, so `R = −1`).
    pub fn from_influence(value: T, influence: &[T], sample: &Sample<T>) -> Self {
        GmmSolution {
            theta: vec![value],
            param_names: vec!["q5:tau".into()],
            unit_moments: Matrix::from_vec(influence.len(), 1, influence.to_vec()),
            jacobian: Matrix::from_vec(1, 1, vec![-T::one()]),
            weighting: Matrix::identity(1),
            converged: true,
            iterations: 0,
            moment_norm: 0.0,
            tau_index: 0,
            coords: sample.coords.clone(),
            clusters: sample.clusters.clone(),
        }
    }
}

/// Solves `mean q(θ) = 0` (or minimizes `q̄'Ψq̄`) by Gauss–Newton from the
/// sequential estimates or a supplied start.
pub fn solve_gmm<T: Real>(system: &MomentSystem<T>, weighting: Option<&Matrix<T>>, start: Option<Vec<T>>) -> Result<GmmSolution<T>> {
    let p = system.n_params();
    let psi = weighting.cloned().unwrap_or_else(|| Matrix::identity(system.n_moments()));
    if psi.rows() != system.n_moments() || psi.cols() != system.n_moments() {
        return Err(Error::Assembly("weighting matrix dimension does not match the number of moments".into()));
    }
    if system.n_moments() < p {
        return Err(Error::Assembly("fewer moments than parameters".into()));
    }
    let mut theta = match start {
        Some(t) => t,
        None => system.sequential_estimates()?,
    };
    let objective = |m: &[T]| -> T { crate::linalg::dot(m, &psi.mul_vec(m)) };
    let max_iter = 100;
    let mut qbar = system.mean_moments(&theta)?;
    let mut iterations = 0;
    let floor = T::lit(1e-13);
    while iterations < max_iter {
        let norm = qbar.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        if norm <= floor {
            break;
        }
        let r = system.jacobian(&theta)?;
        let rt_psi = r.transpose().matmul(&psi);
        let lhs = rt_psi.matmul(&r);
        let rhs = rt_psi.mul_vec(&qbar);
        let step = lhs.solve(&rhs).map_err(|e| Error::Conditioning(format!("R'ΨR is singular during GMM iterations: {e}")))?;
        let f0 = objective(&qbar);
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = theta.iter().zip(&step).map(|(&a, &s)| a - t * s).collect();
            if let Ok(cq) = system.mean_moments(&cand) {
                let f1 = objective(&cq);
                if f1.is_finite() && f1 < f0 {
                    theta = cand;
                    qbar = cq;
                    accepted = true;
                    break;
                }
            }
            t = t / T::lit(2.0);
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let norm = qbar.iter().fold(0.0f64, |m, &x| m.max(x.value().abs()));
    let just = system.n_moments() == p;
    let converged = !just || norm <= 1e-8;
    if !converged {
        return Err(Error::NonConvergence { what: "GMM".into(), iterations, residual: norm, hint: String::new() });
    }
    let jacobian = system.jacobian(&theta)?;
    Ok(GmmSolution {
        unit_moments: system.unit_moments(&theta)?,
        theta,
        param_names: system.param_names.clone(),
        jacobian,
        weighting: psi,
        converged,
        iterations,
        moment_norm: norm,
        tau_index: system.tau_index,
        coords: system.sample.coords.clone(),
        clusters: system.sample.clusters.clone(),
    })
}
