//! Plug-in estimators with per-unit influence contributions.
//!
//! IPW-type estimands are written as signed weighted arm means plus an
//! optional regression augmentation:
//! `τ = Σ_a sign_a · mean_a(r) + mean(aug)`, where each arm mean is Hájek
//! (`Σ a r / Σ a`) or Horvitz–Thompson (`Σ a r / n`). The same generic code
//! serves the GMM effect moment, evaluated with dual numbers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::nuisance::{LogitFit, OutcomeRegFit, Target};
use crate::sample::Sample;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate<T> {
    pub value: T,
    /// Per-unit summand of the linearized estimating equation; mean zero.
    pub influence: Vec<T>,
    pub n_used: usize,
    pub interpretation: String,
}

pub const DATT_NOTE: &str = "DATT; reads as EDATT if the exposure mapping is misspecified";

impl<T: Real> PointEstimate<T> {
    fn new(value: T, influence: Vec<T>, interpretation: &str) -> Self {
        let n_used = influence.len();
        PointEstimate { value, influence, n_used, interpretation: interpretation.to_string() }
    }
}

/// Fitted nuisance values per unit, keyed by cell `(w, g)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NuisanceValues<S> {
    pub p: Option<Vec<S>>,
    pub pi: BTreeMap<(bool, i64), Vec<S>>,
    pub m_pre: BTreeMap<(bool, i64), Vec<S>>,
    pub m_post: BTreeMap<(bool, i64), Vec<S>>,
    pub dm: BTreeMap<(bool, i64), Vec<S>>,
}

impl<T: Real> NuisanceValues<T> {
    pub fn from_fits(sample: &Sample<T>, fit_w: Option<&LogitFit<T>>, fit_g: Option<&LogitFit<T>>, reg: Option<&OutcomeRegFit<T>>) -> Self {
        let n = sample.len();
        let mut nv = NuisanceValues { p: fit_w.map(|f| (0..n).map(|i| f.prob_treated(i)).collect()), ..Default::default() };
        for &w in &[false, true] {
            for &g in &sample.levels {
                if let Some(f) = fit_g {
                    nv.pi.insert((w, g), (0..n).map(|i| f.prob_level(i, w, g)).collect());
                }
                if let Some(r) = reg {
                    if let Some(v) = (0..n).map(|i| r.m(Target::Pre, i, w, g)).collect::<Option<Vec<T>>>() {
                        nv.m_pre.insert((w, g), v);
                    }
                    if let Some(v) = (0..n).map(|i| r.m(Target::Post, i, w, g)).collect::<Option<Vec<T>>>() {
                        nv.m_post.insert((w, g), v);
                    }
                    if let Some(v) = (0..n).map(|i| r.dm(i, w, g)).collect::<Option<Vec<T>>>() {
                        nv.dm.insert((w, g), v);
                    }
                }
            }
        }
        nv
    }
}

fn need<'a, S>(map: &'a BTreeMap<(bool, i64), Vec<S>>, key: (bool, i64), what: &str) -> Result<&'a [S]> {
    map.get(&key)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Config(format!("{what} for cell (W={}, G={}) is not available", key.0 as u8, key.1)))
}

fn need_p<S>(nv: &NuisanceValues<S>) -> Result<&[S]> {
    nv.p.as_deref().ok_or_else(|| Error::Config("treatment propensity is not available".into()))
}

pub(crate) struct Arm<S> {
    pub sign: S,
    pub weights: Vec<S>,
    pub residuals: Vec<S>,
    pub label: String,
}

/// Estimate and mean-zero per-unit contributions.
pub(crate) fn combine<S: Real>(arms: &[Arm<S>], aug: Option<&[S]>, normalize: bool, n: usize) -> Result<(S, Vec<S>)> {
    let nn = S::lit(n as f64);
    let mut value = S::zero();
    let mut contrib = vec![S::zero(); n];
    for arm in arms {
        let wsum: S = arm.weights.iter().copied().sum();
        if arm.weights.iter().all(|w| w.is_zero()) {
            return Err(Error::DegenerateArm(format!("arm {} has no units", arm.label)));
        }
        let num: S = arm.weights.iter().zip(&arm.residuals).map(|(&a, &r)| a * r).sum();
        if normalize {
            let abar = wsum / nn;
            let mu = num / wsum;
            value += arm.sign * mu;
            for i in 0..n {
                contrib[i] += arm.sign * arm.weights[i] / abar * (arm.residuals[i] - mu);
            }
        } else {
            let mu = num / nn;
            value += arm.sign * mu;
            for i in 0..n {
                contrib[i] += arm.sign * (arm.weights[i] * arm.residuals[i] - mu);
            }
        }
    }
    if let Some(aug) = aug {
        let m = aug.iter().copied().sum::<S>() / nn;
        value += m;
        for i in 0..n {
            contrib[i] += aug[i] - m;
        }
    }
    Ok((value, contrib))
}

/// Hájek-normalized weights of an arm (each sums to one).
pub fn normalized_weights<T: Real>(weights: &[T]) -> Vec<T> {
    let s: T = weights.iter().copied().sum();
    weights.iter().map(|&w| w / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjustment {
    Dr,
    Ipw,
    Ra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    /// Direct effect on the treated at exposure level `g`.
    Datt { g: i64 },
    /// Spillover `τ(w, g, g')` within arm `w`.
    Spillover { w: bool, g: i64, g_ref: i64 },
    /// Abadie IPW DID ignoring exposure.
    Abadie,
    /// Difference in mean outcome changes.
    Canonical,
}

fn guard_prob<S: Real>(v: S, unit: usize, what: &str) -> Result<()> {
    let x = v.value();
    if !(x > 0.0 && x < 1.0) || !x.is_finite() {
        return Err(Error::DivisionGuard { unit, value: x, what: what.to_string() });
    }
    Ok(())
}

fn guard_positive<S: Real>(v: S, unit: usize, what: &str) -> Result<()> {
    let x = v.value();
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DivisionGuard { unit, value: x, what: what.to_string() });
    }
    Ok(())
}

/// Inverse-probability arm weights `1{W=w, G=g} / (P(W=w) π_{wg})`.
fn ipw_arm_weights<T: Real, S: Real + From<T>>(sample: &Sample<T>, p: &[S], pi: &[S], w: bool, g: i64) -> Result<Vec<S>> {
    (0..sample.len())
        .map(|i| {
            if sample.w[i] != w || sample.g[i] != g {
                return Ok(S::zero());
            }
            guard_prob(p[i], i, "treatment propensity")?;
            guard_positive(pi[i], i, &format!("exposure propensity π(W={}, G={g})", w as u8))?;
            let pw = if w { p[i] } else { S::one() - p[i] };
            Ok(S::one() / (pw * pi[i]))
        })
        .collect()
}

/// Generic evaluator for every IPW/RA/DR-type estimand.
pub fn effect_contributions<T: Real, S: Real + From<T>>(sample: &Sample<T>, nv: &NuisanceValues<S>, effect: Effect, adj: Adjustment, normalize: bool) -> Result<(S, Vec<S>)> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::DegenerateArm("empty sample".into()));
    }
    let dy: Vec<S> = sample.dy().into_iter().map(<S as From<_>>::from).collect();
    let y2: Vec<S> = sample.y_post.iter().map(|&v| <S as From<_>>::from(v)).collect();
    match effect {
        Effect::Canonical => {
            let arms = [
                Arm { sign: S::one(), weights: sample.w.iter().map(|&w| if w { S::one() } else { S::zero() }).collect(), residuals: dy.clone(), label: "W=1".into() },
                Arm { sign: -S::one(), weights: sample.w.iter().map(|&w| if w { S::zero() } else { S::one() }).collect(), residuals: dy, label: "W=0".into() },
            ];
            combine(&arms, None, true, n)
        }
        Effect::Abadie => {
            let p = need_p(nv)?;
            for (i, &pi) in p.iter().enumerate() {
                guard_prob(pi, i, "treatment propensity")?;
            }
            if normalize {
                let arms = [
                    Arm { sign: S::one(), weights: sample.w.iter().map(|&w| if w { S::one() } else { S::zero() }).collect(), residuals: dy.clone(), label: "W=1".into() },
                    Arm {
                        sign: -S::one(),
                        weights: (0..n).map(|i| if sample.w[i] { S::zero() } else { p[i] / (S::one() - p[i]) }).collect(),
                        residuals: dy,
                        label: "W=0".into(),
                    },
                ];
                combine(&arms, None, true, n)
            } else {
                let n1 = sample.w.iter().filter(|&&w| w).count();
                if n1 == 0 || n1 == n {
                    return Err(Error::DegenerateArm("Abadie IPW needs treated and control units".into()));
                }
                let p1 = S::lit(n1 as f64 / n as f64);
                let s: Vec<S> = (0..n)
                    .map(|i| {
                        let wi = if sample.w[i] { S::one() } else { S::zero() };
                        (wi - p[i]) * dy[i] / (S::one() - p[i])
                    })
                    .collect();
                let tau = s.iter().copied().sum::<S>() / S::lit(n as f64) / p1;
                let contrib = (0..n).map(|i| (s[i] - if sample.w[i] { tau } else { S::zero() }) / p1).collect();
                Ok((tau, contrib))
            }
        }
        Effect::Datt { g } => {
            sample.level_index(g)?;
            let aug = match adj {
                Adjustment::Ipw => None,
                _ => {
                    let d1 = need(&nv.dm, (true, g), "outcome regression Δm")?;
                    let d0 = need(&nv.dm, (false, g), "outcome regression Δm")?;
                    Some(d1.iter().zip(d0).map(|(&a, &b)| a - b).collect::<Vec<S>>())
                }
            };
            let mut arms = Vec::new();
            if adj != Adjustment::Ra {
                let p = need_p(nv)?;
                for w in [true, false] {
                    let pi = need(&nv.pi, (w, g), "exposure propensity")?;
                    let weights = ipw_arm_weights(sample, p, pi, w, g)?;
                    let residuals = match adj {
                        Adjustment::Dr => {
                            let d = need(&nv.dm, (w, g), "outcome regression Δm")?;
                            dy.iter().zip(d).map(|(&a, &b)| a - b).collect()
                        }
                        _ => dy.clone(),
                    };
                    let sign = if w { S::one() } else { -S::one() };
                    arms.push(Arm { sign, weights, residuals, label: format!("(W={}, G={g})", w as u8) });
                }
            }
            combine(&arms, aug.as_deref(), normalize, n)
        }
        Effect::Spillover { w, g, g_ref } => {
            if g == g_ref {
                return Err(Error::InvalidContrast);
            }
            sample.level_index(g)?;
            sample.level_index(g_ref)?;
            let aug = match adj {
                Adjustment::Ipw => None,
                _ => {
                    let a = need(&nv.m_post, (w, g), "second-period outcome regression")?;
                    let b = need(&nv.m_post, (w, g_ref), "second-period outcome regression")?;
                    Some(a.iter().zip(b).map(|(&x, &y)| x - y).collect::<Vec<S>>())
                }
            };
            let mut arms = Vec::new();
            if adj != Adjustment::Ra {
                let p = need_p(nv)?;
                for (lvl, sign) in [(g, S::one()), (g_ref, -S::one())] {
                    let pi = need(&nv.pi, (w, lvl), "exposure propensity")?;
                    let weights = ipw_arm_weights(sample, p, pi, w, lvl)?;
                    let residuals = match adj {
                        Adjustment::Dr => {
                            let m = need(&nv.m_post, (w, lvl), "second-period outcome regression")?;
                            y2.iter().zip(m).map(|(&a, &b)| a - b).collect()
                        }
                        _ => y2.clone(),
                    };
                    arms.push(Arm { sign, weights, residuals, label: format!("(W={}, G={lvl})", w as u8) });
                }
            }
            combine(&arms, aug.as_deref(), normalize, n)
        }
    }
}

fn estimate<T: Real>(sample: &Sample<T>, nv: &NuisanceValues<T>, effect: Effect, adj: Adjustment, normalize: bool) -> Result<PointEstimate<T>> {
    let (value, influence) = effect_contributions(sample, nv, effect, adj, normalize)?;
    let note = match effect {
        Effect::Datt { .. } => DATT_NOTE,
        Effect::Spillover { .. } => "spillover; causal reading requires the conditional-independence condition on W_-i",
        _ => "canonical DID; ignores interference",
    };
    Ok(PointEstimate::new(value, influence, note))
}

pub fn canonical_twfe<T: Real>(sample: &Sample<T>) -> Result<PointEstimate<T>> {
    estimate(sample, &NuisanceValues::default(), Effect::Canonical, Adjustment::Ipw, true)
}

pub fn abadie_ipw<T: Real>(sample: &Sample<T>, p: &[T], normalize: bool) -> Result<PointEstimate<T>> {
    let nv = NuisanceValues { p: Some(p.to_vec()), ..Default::default() };
    estimate(sample, &nv, Effect::Abadie, Adjustment::Ipw, normalize)
}

pub fn ipw_datt<T: Real>(sample: &Sample<T>, nv: &NuisanceValues<T>, g: i64, normalize: bool) -> Result<PointEstimate<T>> {
    estimate(sample, nv, Effect::Datt { g }, Adjustment::Ipw, normalize)
}

pub fn ra_datt<T: Real>(sample: &Sample<T>, nv: &NuisanceValues<T>, g: i64) -> Result<PointEstimate<T>> {
    estimate(sample, nv, Effect::Datt { g }, Adjustment::Ra, true)
}

pub fn dr_datt<T: Real>(sample: &Sample<T>, nv: &NuisanceValues<T>, g: i64, normalize: bool) -> Result<PointEstimate<T>> {
    estimate(sample, nv, Effect::Datt { g }, Adjustment::Dr, normalize)
}

pub fn dr_spillover<T: Real>(sample: &Sample<T>, nv: &NuisanceValues<T>, w: bool, g: i64, g_ref: i64, normalize: bool) -> Result<PointEstimate<T>> {
    estimate(sample, nv, Effect::Spillover { w, g, g_ref }, Adjustment::Dr, normalize)
}

/// Empirical exposure shares among treated units, `P̂(G = g | W = 1)`.
pub fn treated_shares<T: Real>(sample: &Sample<T>) -> Result<BTreeMap<i64, T>> {
    let n1 = sample.w.iter().filter(|&&w| w).count();
    if n1 == 0 {
        return Err(Error::DegenerateArm("no treated units".into()));
    }
    Ok(sample.levels.iter().map(|&g| (g, T::lit(sample.cell_count(true, g) as f64 / n1 as f64))).collect())
}

/// `Σ_g τ(g) · share(g)`; shares must sum to one.
pub fn weighted_overall<T: Real>(values: &BTreeMap<i64, T>, shares: &BTreeMap<i64, T>) -> Result<T> {
    let total: T = shares.values().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-10) {
        return Err(Error::Consistency(format!("exposure shares sum to {total}, not 1")));
    }
    shares
        .iter()
        .map(|(g, &s)| values.get(g).map(|&v| v * s).ok_or_else(|| Error::Config(format!("no estimate for exposure level {g}"))))
        .sum()
}

/// Overall direct effect from per-level estimates and empirical treated
/// shares; the influence includes the share estimation.
pub fn aggregate_overall<T: Real>(sample: &Sample<T>, per_level: &BTreeMap<i64, PointEstimate<T>>) -> Result<PointEstimate<T>> {
    let shares = treated_shares(sample)?;
    let values = per_level.iter().map(|(&g, e)| (g, e.value)).collect();
    let value = weighted_overall(&values, &shares)?;
    let n = sample.len();
    let p1 = T::lit(sample.w.iter().filter(|&&w| w).count() as f64 / n as f64);
    let mut influence = vec![T::zero(); n];
    for (g, &s) in &shares {
        let e = &per_level[g];
        for i in 0..n {
            influence[i] += s * e.influence[i];
            if sample.w[i] {
                let ind = if sample.g[i] == *g { T::one() } else { T::zero() };
                influence[i] += e.value * (ind - s) / p1;
            }
        }
    }
    Ok(PointEstimate::new(value, influence, "overall direct effect; treated-share weighted DATT"))
}

/// OLS coefficients and per-unit influence rows `(X'X/n)^{-1} Σ_t x_it e_it`.
struct OlsFit<T> {
    coef: Vec<T>,
    names: Vec<String>,
    influence: Vec<Vec<T>>,
}

fn ols_by_unit<T: Real>(rows: &[(usize, Vec<T>, T)], n_units: usize, names: Vec<String>) -> Result<OlsFit<T>> {
    let x = Matrix::from_rows(&rows.iter().map(|r| r.1.clone()).collect::<Vec<_>>());
    let y: Vec<T> = rows.iter().map(|r| r.2).collect();
    let coef = least_squares(&x, &y, &names, 1e-10)?;
    let bread = x.gram().scale(T::one() / T::lit(n_units as f64)).inverse()?;
    let k = coef.len();
    let mut score = vec![vec![T::zero(); k]; n_units];
    for (u, xr, yr) in rows {
        let e = *yr - crate::linalg::dot(xr, &coef);
        for a in 0..k {
            score[*u][a] += xr[a] * e;
        }
    }
    let influence = score.iter().map(|s| bread.mul_vec(s)).collect();
    Ok(OlsFit { coef, names, influence })
}

fn combination<T: Real>(fit: &OlsFit<T>, weights: &[(usize, T)]) -> PointEstimate<T> {
    let value = weights.iter().map(|&(j, c)| c * fit.coef[j]).sum();
    let influence = fit.influence.iter().map(|row| weights.iter().map(|&(j, c)| c * row[j]).sum()).collect();
    PointEstimate::new(value, influence, DATT_NOTE)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedTwfe<T> {
    pub beta1: T,
    /// `None` when the `(1-W)S` column is identically zero.
    pub beta2: Option<T>,
    /// `None` when the `WS` column is identically zero.
    pub beta3: Option<T>,
    pub datt0: PointEstimate<T>,
    /// Requires both exposure columns.
    pub datt1: Option<PointEstimate<T>>,
}

/// First-differenced TWFE augmented with a binary exposure indicator `s`:
/// `ΔY ~ 1 + W + (1-W)s + Ws`. Exposure columns that are identically zero
/// are dropped.
pub fn augmented_twfe<T: Real>(sample: &Sample<T>, s: &[bool]) -> Result<AugmentedTwfe<T>> {
    let dy = sample.dy();
    let one = T::one();
    let has0 = (0..sample.len()).any(|i| !sample.w[i] && s[i]);
    let has1 = (0..sample.len()).any(|i| sample.w[i] && s[i]);
    let rows: Vec<(usize, Vec<T>, T)> = (0..sample.len())
        .map(|i| {
            let w = if sample.w[i] { one } else { T::zero() };
            let si = if s[i] { one } else { T::zero() };
            let mut r = vec![one, w];
            if has0 {
                r.push((one - w) * si);
            }
            if has1 {
                r.push(w * si);
            }
            (i, r, dy[i])
        })
        .collect();
    let mut names: Vec<String> = vec!["1".into(), "W".into()];
    if has0 {
        names.push("(1-W)*S".into());
    }
    if has1 {
        names.push("W*S".into());
    }
    let fit = ols_by_unit(&rows, sample.len(), names)?;
    let j2 = has0.then_some(2);
    let j3 = has1.then(|| if has0 { 3 } else { 2 });
    let datt1 = match (j2, j3) {
        (Some(a), Some(b)) => Some(combination(&fit, &[(1, one), (b, one), (a, -one)])),
        _ => None,
    };
    Ok(AugmentedTwfe { beta1: fit.coef[1], beta2: j2.map(|j| fit.coef[j]), beta3: j3.map(|j| fit.coef[j]), datt0: combination(&fit, &[(1, one)]), datt1 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaturatedTwfe<T> {
    pub names: Vec<String>,
    pub coefficients: Vec<T>,
    pub datt: BTreeMap<i64, PointEstimate<T>>,
}

/// Stacked two-period saturated TWFE. Levels other than the lowest get
/// `(1-W)·1{G=g}·post` and `W·1{G=g}·post` terms; `τ(g) = β_{W·post} +
/// η_{1g} − η_{0g}` and `τ(baseline) = β_{W·post}`.
pub fn saturated_twfe<T: Real, S: AsRef<str>>(sample: &Sample<T>, covariates: &[S]) -> Result<SaturatedTwfe<T>> {
    let n = sample.len();
    let base = *sample.levels.first().ok_or_else(|| Error::DegenerateArm("empty sample".into()))?;
    let others: Vec<i64> = sample.levels[1..].to_vec();
    for &g in &others {
        for w in [false, true] {
            if sample.cell_count(w, g) == 0 {
                return Err(Error::Config(format!("level indicator for (W={}, G={g}) is empty and not identified", w as u8)));
            }
        }
    }
    let cov: Vec<&[T]> = covariates.iter().map(|c| sample.column(c.as_ref())).collect::<Result<_>>()?;
    let mut names: Vec<String> = ["1", "W", "post", "W*post"].iter().map(|s| s.to_string()).collect();
    for g in &others {
        names.push(format!("(1-W)*G={g}*post"));
        names.push(format!("W*G={g}*post"));
    }
    names.extend(covariates.iter().map(|c| c.as_ref().to_string()));
    let one = T::one();
    let mut rows = Vec::with_capacity(2 * n);
    for i in 0..n {
        let w = if sample.w[i] { one } else { T::zero() };
        for (post, y) in [(T::zero(), sample.y_pre[i]), (one, sample.y_post[i])] {
            let mut r = vec![one, w, post, w * post];
            for &g in &others {
                let ind = if sample.g[i] == g { one } else { T::zero() };
                r.push((one - w) * ind * post);
                r.push(w * ind * post);
            }
            r.extend(cov.iter().map(|c| c[i]));
            rows.push((i, r, y));
        }
    }
    let fit = ols_by_unit(&rows, n, names)?;
    let mut datt = BTreeMap::new();
    datt.insert(base, combination(&fit, &[(3, one)]));
    for (k, &g) in others.iter().enumerate() {
        let j0 = 4 + 2 * k;
        datt.insert(g, combination(&fit, &[(3, one), (j0 + 1, one), (j0, -one)]));
    }
    Ok(SaturatedTwfe { names: fit.names.clone(), coefficients: fit.coef.clone(), datt })
}
