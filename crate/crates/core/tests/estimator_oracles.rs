mod common;

use std::collections::BTreeMap;

use common::{normal_equations, sample_from};
use nbrdid::estimators::{
    abadie_ipw, aggregate_overall, augmented_twfe, canonical_twfe, dr_datt, dr_spillover, ipw_datt, normalized_weights, ra_datt, saturated_twfe, treated_shares, weighted_overall,
    NuisanceValues, PointEstimate,
};
use nbrdid::estimators::{Adjustment, Effect};
use nbrdid::gmm::{assemble_oracle, solve_gmm, EffectRequest};
use nbrdid::Error;

struct Fixture {
    w: Vec<bool>,
    g: Vec<i64>,
    y1: Vec<f64>,
    y2: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    pi: BTreeMap<(bool, i64), Vec<f64>>,
    m1: BTreeMap<(bool, i64), Vec<f64>>,
    m2: BTreeMap<(bool, i64), Vec<f64>>,
}

/// Ten units, two exposure levels, every (w, g) cell populated.
fn fixture() -> Fixture {
    let w = vec![true, true, true, false, false, true, false, false, true, false];
    let g = vec![1, 0, 1, 1, 0, 0, 1, 0, 1, 0];
    let y1 = vec![1.2, 0.4, 2.1, 0.9, -0.3, 1.7, 0.2, 1.1, 0.8, -0.6];
    let y2 = vec![3.5, 1.9, 4.4, 2.0, 1.1, 3.3, 1.6, 2.4, 3.1, 0.7];
    let z = vec![0.3, -1.1, 0.8, 0.1, -0.4, 1.5, -0.9, 0.6, 0.2, -1.3];
    let p: Vec<f64> = z.iter().map(|&v| 0.5 + 0.2 * (v / 2.0f64).tanh()).collect();
    let mut pi = BTreeMap::new();
    let mut m1 = BTreeMap::new();
    let mut m2 = BTreeMap::new();
    for (k, &wv) in [false, true].iter().enumerate() {
        let pg1: Vec<f64> = z.iter().map(|&v| 0.45 + 0.1 * k as f64 + 0.15 * (v / 3.0f64).sin()).collect();
        pi.insert((wv, 1), pg1.clone());
        pi.insert((wv, 0), pg1.iter().map(|&q| 1.0 - q).collect());
        for gv in [0i64, 1] {
            let a = 0.1 * (k as f64 + 1.0) + 0.05 * gv as f64;
            m1.insert((wv, gv), z.iter().map(|&v| 1.0 + a + 0.9 * v).collect());
            m2.insert((wv, gv), z.iter().map(|&v| 2.0 + 3.0 * a + k as f64 + 1.1 * v).collect());
        }
    }
    Fixture { w, g, y1, y2, z, p, pi, m1, m2 }
}

fn nuisances(f: &Fixture) -> NuisanceValues<f64> {
    let dm = f.m2.iter().map(|(&k, v)| (k, v.iter().zip(&f.m1[&k]).map(|(a, b)| a - b).collect())).collect();
    NuisanceValues { p: Some(f.p.clone()), pi: f.pi.clone(), m_pre: f.m1.clone(), m_post: f.m2.clone(), dm }
}

/// Direct evaluation of the doubly robust display with raw weights.
fn dr_oracle_raw(f: &Fixture, g: i64) -> f64 {
    let n = f.w.len();
    let mut total = 0.0;
    for i in 0..n {
        let wi = if f.w[i] { 1.0 } else { 0.0 };
        let ind = if f.g[i] == g { 1.0 } else { 0.0 };
        let r1 = (f.y2[i] - f.m2[&(true, g)][i]) - (f.y1[i] - f.m1[&(true, g)][i]);
        let r0 = (f.y2[i] - f.m2[&(false, g)][i]) - (f.y1[i] - f.m1[&(false, g)][i]);
        let dm1 = f.m2[&(true, g)][i] - f.m1[&(true, g)][i];
        let dm0 = f.m2[&(false, g)][i] - f.m1[&(false, g)][i];
        total += wi / f.p[i] * ind / f.pi[&(true, g)][i] * r1 - (1.0 - wi) / (1.0 - f.p[i]) * ind / f.pi[&(false, g)][i] * r0 + dm1 - dm0;
    }
    total / n as f64
}

/// Same display with each arm's weights rescaled to sum to one.
fn dr_oracle_normalized(f: &Fixture, g: i64) -> f64 {
    let n = f.w.len();
    let (mut a1, mut s1, mut a0, mut s0, mut aug) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let dm1 = f.m2[&(true, g)][i] - f.m1[&(true, g)][i];
        let dm0 = f.m2[&(false, g)][i] - f.m1[&(false, g)][i];
        aug += dm1 - dm0;
        if f.g[i] != g {
            continue;
        }
        let dy = f.y2[i] - f.y1[i];
        if f.w[i] {
            let a = 1.0 / (f.p[i] * f.pi[&(true, g)][i]);
            a1 += a;
            s1 += a * (dy - dm1);
        } else {
            let a = 1.0 / ((1.0 - f.p[i]) * f.pi[&(false, g)][i]);
            a0 += a;
            s0 += a * (dy - dm0);
        }
    }
    s1 / a1 - s0 / a0 + aug / n as f64
}

/// Spillover display for arm `w` contrasting levels `g` and `gr`.
fn spill_oracle_raw(f: &Fixture, w: bool, g: i64, gr: i64) -> f64 {
    let n = f.w.len();
    let mut total = 0.0;
    for i in 0..n {
        let arm = if f.w[i] == w { 1.0 } else { 0.0 };
        let pw = if w { f.p[i] } else { 1.0 - f.p[i] };
        let term = |lvl: i64| {
            let ind = if f.g[i] == lvl { 1.0 } else { 0.0 };
            arm / pw * ind / f.pi[&(w, lvl)][i] * (f.y2[i] - f.m2[&(w, lvl)][i]) + f.m2[&(w, lvl)][i]
        };
        total += term(g) - term(gr);
    }
    total / n as f64
}

fn sample_of(f: &Fixture) -> nbrdid::Sample {
    sample_from(&f.w, &f.g, &f.y1, &f.y2, &f.z)
}

#[test]
fn dr_datt_matches_brute_force_raw_weights() {
    let f = fixture();
    let s = sample_of(&f);
    let nv = nuisances(&f);
    for g in [0, 1] {
        let est = dr_datt(&s, &nv, g, false).unwrap();
        assert!((est.value - dr_oracle_raw(&f, g)).abs() < 1e-12, "g={g}: {} vs {}", est.value, dr_oracle_raw(&f, g));
    }
}

#[test]
fn dr_datt_matches_brute_force_normalized_weights() {
    let f = fixture();
    let s = sample_of(&f);
    let nv = nuisances(&f);
    for g in [0, 1] {
        let est = dr_datt(&s, &nv, g, true).unwrap();
        assert!((est.value - dr_oracle_normalized(&f, g)).abs() < 1e-12);
    }
}

#[test]
fn dr_spillover_matches_brute_force_both_arms() {
    let f = fixture();
    let s = sample_of(&f);
    let nv = nuisances(&f);
    for w in [true, false] {
        for (g, gr) in [(1, 0), (0, 1)] {
            let est = dr_spillover(&s, &nv, w, g, gr, false).unwrap();
            let want = spill_oracle_raw(&f, w, g, gr);
            assert!((est.value - want).abs() < 1e-12, "w={w} g={g}: {} vs {want}", est.value);
        }
    }
}

#[test]
fn q5_only_system_reproduces_brute_force() {
    let f = fixture();
    let s = sample_of(&f);
    let req = EffectRequest { effect: Effect::Datt { g: 1 }, adjustment: Adjustment::Dr, normalize: false };
    let sys = assemble_oracle(&s, nuisances(&f), req).unwrap();
    assert_eq!(sys.n_params(), 1);
    let sol = solve_gmm(&sys, None, None).unwrap();
    assert!((sol.tau() - dr_oracle_raw(&f, 1)).abs() < 1e-12);
    let mean: f64 = sol.unit_moments.column(0).iter().sum::<f64>() / s.len() as f64;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn spillover_rejects_equal_levels() {
    let f = fixture();
    let s = sample_of(&f);
    assert!(matches!(dr_spillover(&s, &nuisances(&f), true, 1, 1, true), Err(Error::InvalidContrast)));
}

#[test]
fn influence_contributions_have_mean_zero() {
    let f = fixture();
    let s = sample_of(&f);
    let nv = nuisances(&f);
    for normalize in [false, true] {
        let est = dr_datt(&s, &nv, 1, normalize).unwrap();
        let m: f64 = est.influence.iter().sum::<f64>() / est.influence.len() as f64;
        assert!(m.abs() < 1e-13);
    }
}

#[test]
fn dr_equals_ra_when_regressions_interpolate() {
    let f = fixture();
    let s = sample_of(&f);
    let mut nv = nuisances(&f);
    // Δm equals ΔY inside each cell, so every weighted residual is zero.
    for w in [false, true] {
        for g in [0, 1] {
            let dm: Vec<f64> = (0..s.len()).map(|i| if s.w[i] == w && s.g[i] == g { f.y2[i] - f.y1[i] } else { f.z[i] + g as f64 }).collect();
            nv.dm.insert((w, g), dm);
        }
    }
    for g in [0, 1] {
        for normalize in [false, true] {
            let dr = dr_datt(&s, &nv, g, normalize).unwrap().value;
            let ra = ra_datt(&s, &nv, g).unwrap().value;
            assert_eq!(dr, ra);
        }
    }
}

#[test]
fn ra_datt_constant_difference() {
    let f = fixture();
    let s = sample_of(&f);
    let mut nv = NuisanceValues::default();
    nv.dm.insert((true, 1), f.z.iter().map(|&z| 1.0 + z).collect());
    nv.dm.insert((false, 1), f.z.clone());
    assert!((ra_datt(&s, &nv, 1).unwrap().value - 1.0).abs() < 1e-15);
    nv.dm.insert((true, 1), f.z.clone());
    assert_eq!(ra_datt(&s, &nv, 1).unwrap().value, 0.0);
}

#[test]
fn ipw_datt_six_unit_hand_value() {
    // Oracle propensities p = 0.5, π = 0.5; ΔY = 2 + 1.5 W.
    let w = [true, false, true, false, true, false];
    let g = [1, 1, 0, 0, 1, 1];
    let y1 = [0.0; 6];
    let y2: Vec<f64> = w.iter().map(|&t| 2.0 + if t { 1.5 } else { 0.0 }).collect();
    let s = sample_from(&w, &g, &y1, &y2, &[0.0; 6]);
    let mut nv = NuisanceValues { p: Some(vec![0.5; 6]), ..Default::default() };
    for wv in [false, true] {
        for gv in [0, 1] {
            nv.pi.insert((wv, gv), vec![0.5; 6]);
        }
    }
    // Raw weights: (1/6) Σ [W/(0.25) 1{G=1} ΔY − (1−W)/(0.25) 1{G=1} ΔY]
    // = (1/6)(4·3.5·2 − 4·2·2) = 4/6·3 = 2.
    let raw = ipw_datt(&s, &nv, 1, false).unwrap().value;
    assert!((raw - 2.0).abs() < 1e-14);
    let hajek = ipw_datt(&s, &nv, 1, true).unwrap().value;
    assert!((hajek - 1.5).abs() < 1e-14);
}

#[test]
fn ipw_datt_equal_trends_cancel() {
    let w = [true, false, true, false];
    let s = sample_from(&w, &[0; 4], &[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0], &[0.0; 4]);
    let mut nv = NuisanceValues { p: Some(vec![0.5; 4]), ..Default::default() };
    nv.pi.insert((true, 0), vec![1.0; 4]);
    nv.pi.insert((false, 0), vec![1.0; 4]);
    assert_eq!(ipw_datt(&s, &nv, 0, true).unwrap().value, 0.0);
}

#[test]
fn ipw_datt_equals_abadie_at_single_level() {
    let f = fixture();
    let g = vec![0; f.w.len()];
    let s = sample_from(&f.w, &g, &f.y1, &f.y2, &f.z);
    let share = f.w.iter().filter(|&&t| t).count() as f64 / f.w.len() as f64;
    let p = vec![share; f.w.len()];
    let mut nv = NuisanceValues { p: Some(p.clone()), ..Default::default() };
    nv.pi.insert((true, 0), vec![1.0; f.w.len()]);
    nv.pi.insert((false, 0), vec![1.0; f.w.len()]);
    for normalize in [false, true] {
        let a = ipw_datt(&s, &nv, 0, normalize).unwrap().value;
        let b = abadie_ipw(&s, &p, normalize).unwrap().value;
        assert!((a - b).abs() < 1e-13, "normalize={normalize}: {a} vs {b}");
    }
}

#[test]
fn canonical_twfe_two_group_means() {
    let w = [true, true, false, false];
    let s = sample_from(&w, &[0; 4], &[0.0; 4], &[3.0, 5.0, 1.0, 1.0], &[0.0; 4]);
    assert!((canonical_twfe(&s).unwrap().value - 3.0).abs() < 1e-15);
    let s = sample_from(&w, &[0; 4], &[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0], &[0.0; 4]);
    assert_eq!(canonical_twfe(&s).unwrap().value, 0.0);
    let s = sample_from(&[true, true], &[0; 2], &[0.0; 2], &[1.0; 2], &[0.0; 2]);
    assert!(matches!(canonical_twfe(&s), Err(Error::DegenerateArm(_))));
}

#[test]
fn abadie_single_pair_hand_value() {
    let s = sample_from(&[true, false], &[0, 0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]);
    for normalize in [false, true] {
        assert!((abadie_ipw(&s, &[0.5, 0.5], normalize).unwrap().value - 1.0).abs() < 1e-15);
    }
    assert!(matches!(abadie_ipw(&s, &[1.0, 0.5], true), Err(Error::DivisionGuard { .. })));
}

#[test]
fn abadie_constant_score_is_difference_of_means() {
    let f = fixture();
    let s = sample_of(&f);
    let share = f.w.iter().filter(|&&t| t).count() as f64 / f.w.len() as f64;
    let a = abadie_ipw(&s, &vec![share; f.w.len()], true).unwrap().value;
    let c = canonical_twfe(&s).unwrap().value;
    assert!((a - c).abs() < 1e-13);
}

#[test]
fn hajek_weights_sum_to_one() {
    let f = fixture();
    for g in [0, 1] {
        for w in [false, true] {
            let raw: Vec<f64> = (0..f.w.len())
                .map(|i| {
                    if f.w[i] != w || f.g[i] != g {
                        return 0.0;
                    }
                    let pw = if w { f.p[i] } else { 1.0 - f.p[i] };
                    1.0 / (pw * f.pi[&(w, g)][i])
                })
                .collect();
            let s: f64 = normalized_weights(&raw).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn augmented_twfe_recovers_exact_coefficients() {
    let w = [true, true, true, true, false, false, false, false];
    let sflag = [true, false, true, false, true, false, true, true];
    let y1 = [0.5, -0.2, 1.0, 0.3, 0.0, 0.7, -1.0, 0.4];
    let y2: Vec<f64> = (0..8).map(|i| y1[i] + (w[i] as u8 as f64) + (sflag[i] as u8 as f64)).collect();
    let s = sample_from(&w, &[0; 8], &y1, &y2, &[0.0; 8]);
    let fit = augmented_twfe(&s, &sflag).unwrap();
    assert!((fit.beta1 - 1.0).abs() < 1e-12 && (fit.beta2.unwrap() - 1.0).abs() < 1e-12 && (fit.beta3.unwrap() - 1.0).abs() < 1e-12);
    assert!((fit.datt1.unwrap().value - 1.0).abs() < 1e-12);
    assert!((fit.datt0.value - 1.0).abs() < 1e-12);

    let y2: Vec<f64> = (0..8).map(|i| y1[i] + (w[i] as u8 as f64)).collect();
    let s = sample_from(&w, &[0; 8], &y1, &y2, &[0.0; 8]);
    let fit = augmented_twfe(&s, &[false; 8]).unwrap();
    assert!((fit.beta1 - 1.0).abs() < 1e-12 && (fit.datt0.value - 1.0).abs() < 1e-12);
    assert!(fit.beta2.is_none() && fit.beta3.is_none() && fit.datt1.is_none());
}

#[test]
fn augmented_twfe_matches_normal_equations() {
    let f = fixture();
    let s = sample_of(&f);
    let sflag: Vec<bool> = f.g.iter().map(|&g| g == 1).collect();
    let fit = augmented_twfe(&s, &sflag).unwrap();
    let x: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let w = f.w[i] as u8 as f64;
            let sv = sflag[i] as u8 as f64;
            vec![1.0, w, (1.0 - w) * sv, w * sv]
        })
        .collect();
    let dy: Vec<f64> = (0..10).map(|i| f.y2[i] - f.y1[i]).collect();
    let b = normal_equations(&x, &dy);
    assert!((fit.beta1 - b[1]).abs() < 1e-12 && (fit.beta2.unwrap() - b[2]).abs() < 1e-12 && (fit.beta3.unwrap() - b[3]).abs() < 1e-12);
    assert!((fit.datt1.unwrap().value - (b[1] + b[3] - b[2])).abs() < 1e-12);
}

fn twelve_unit() -> (Vec<bool>, Vec<i64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = vec![true, false, true, false, true, false, true, false, true, false, true, false];
    let g = vec![0, 0, 1, 1, 2, 2, 0, 1, 2, 0, 1, 2];
    let z = vec![0.2, -0.5, 1.1, 0.4, -0.8, 0.9, 0.0, -1.2, 0.6, 0.3, -0.1, 1.4];
    let y1: Vec<f64> = z.iter().enumerate().map(|(i, &v)| 1.0 + v + 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
    let y2: Vec<f64> = (0..12).map(|i| y1[i] + 1.0 + 0.8 * w[i] as u8 as f64 + 0.3 * g[i] as f64 + 0.05 * ((i * 3 % 4) as f64)).collect();
    (w, g, y1, y2, z)
}

#[test]
fn saturated_twfe_matches_stacked_normal_equations() {
    let (w, g, y1, y2, z) = twelve_unit();
    let s = sample_from(&w, &g, &y1, &y2, &z);
    let fit = saturated_twfe(&s, &["z"]).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..12 {
        let wv = w[i] as u8 as f64;
        for (post, yi) in [(0.0, y1[i]), (1.0, y2[i])] {
            let mut r = vec![1.0, wv, post, wv * post];
            for lvl in [1, 2] {
                let ind = if g[i] == lvl { 1.0 } else { 0.0 };
                r.push((1.0 - wv) * ind * post);
                r.push(wv * ind * post);
            }
            r.push(z[i]);
            x.push(r);
            y.push(yi);
        }
    }
    let b = normal_equations(&x, &y);
    for (a, c) in fit.coefficients.iter().zip(&b) {
        assert!((a - c).abs() < 1e-10, "{a} vs {c}");
    }
    assert!((fit.datt[&0].value - b[3]).abs() < 1e-10);
    assert!((fit.datt[&1].value - (b[3] + b[5] - b[4])).abs() < 1e-10);
    assert!((fit.datt[&2].value - (b[3] + b[7] - b[6])).abs() < 1e-10);
}

#[test]
fn saturated_twfe_recovers_generating_coefficients() {
    let (w, g, _, _, z) = twelve_unit();
    let coef = [0.4, -0.3, 1.2, 0.9, 0.25, -0.6, 0.5, 0.15, 0.7];
    let y2: Vec<f64> = (0..12)
        .map(|i| {
            let wv = w[i] as u8 as f64;
            let r1 = |lvl: i64| if g[i] == lvl { 1.0 } else { 0.0 };
            let pre = coef[0] + coef[1] * wv + coef[8] * z[i];
            pre + coef[2] + coef[3] * wv + coef[4] * (1.0 - wv) * r1(1) + coef[5] * wv * r1(1) + coef[6] * (1.0 - wv) * r1(2) + coef[7] * wv * r1(2)
        })
        .collect();
    let y1: Vec<f64> = (0..12).map(|i| coef[0] + coef[1] * w[i] as u8 as f64 + coef[8] * z[i]).collect();
    let s = sample_from(&w, &g, &y1, &y2, &z);
    let fit = saturated_twfe(&s, &["z"]).unwrap();
    for (a, c) in fit.coefficients.iter().zip(coef.iter()) {
        assert!((a - c).abs() < 1e-8);
    }
}

#[test]
fn saturated_twfe_single_level_is_canonical() {
    let f = fixture();
    let g = vec![0; 10];
    let s = sample_from(&f.w, &g, &f.y1, &f.y2, &f.z);
    let fit = saturated_twfe::<f64, &str>(&s, &[]).unwrap();
    assert!((fit.datt[&0].value - canonical_twfe(&s).unwrap().value).abs() < 1e-12);
}

#[test]
fn saturated_twfe_empty_cell_is_config_error() {
    let w = [true, false, true, false];
    let g = [0, 0, 1, 0];
    let s = sample_from(&w, &g, &[0.0; 4], &[1.0, 2.0, 3.0, 4.0], &[0.0; 4]);
    assert!(matches!(saturated_twfe::<f64, &str>(&s, &[]), Err(Error::Config(_))));
}

fn pe(value: f64, n: usize) -> PointEstimate<f64> {
    PointEstimate { value, influence: vec![0.0; n], n_used: n, interpretation: String::new() }
}

#[test]
fn overall_effect_weighted_by_treated_shares() {
    let vals: BTreeMap<i64, f64> = [(0, 2.0), (1, -1.0), (2, 0.5)].into_iter().collect();
    let shares: BTreeMap<i64, f64> = [(0, 0.2), (1, 0.3), (2, 0.5)].into_iter().collect();
    let got = weighted_overall(&vals, &shares).unwrap();
    assert!((got - (0.4 - 0.3 + 0.25)).abs() < 1e-15);
    let bad: BTreeMap<i64, f64> = [(0, 0.2), (1, 0.3)].into_iter().collect();
    assert!(matches!(weighted_overall(&vals, &bad), Err(Error::Consistency(_))));

    // τ(1) = 1, τ(0) = 0 with a treated share at g=1 of 0.607.
    let n1 = 1000;
    let k1 = 607;
    let w = vec![true; n1];
    let g: Vec<i64> = (0..n1).map(|i| (i < k1) as i64).collect();
    let s = sample_from(&w, &g, &vec![0.0; n1], &vec![0.0; n1], &vec![0.0; n1]);
    let per: BTreeMap<i64, PointEstimate<f64>> = [(0, pe(0.0, n1)), (1, pe(1.0, n1))].into_iter().collect();
    let est = aggregate_overall(&s, &per).unwrap();
    assert!((est.value - 0.607).abs() < 1e-12);
    assert_eq!(treated_shares(&s).unwrap()[&1], 0.607);
}

#[test]
fn overall_effect_single_level_is_that_level() {
    let f = fixture();
    let g = vec![3; 10];
    let s = sample_from(&f.w, &g, &f.y1, &f.y2, &f.z);
    let per: BTreeMap<i64, PointEstimate<f64>> = [(3, pe(0.42, 10))].into_iter().collect();
    assert_eq!(aggregate_overall(&s, &per).unwrap().value, 0.42);
}

#[test]
fn permuting_units_leaves_estimates_unchanged() {
    let f = fixture();
    let s = sample_of(&f);
    let nv = nuisances(&f);
    let perm = [7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
    let sp = s.permuted(&perm);
    let pick = |v: &Vec<f64>| perm.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let nvp = NuisanceValues {
        p: nv.p.as_ref().map(pick),
        pi: nv.pi.iter().map(|(&k, v)| (k, pick(v))).collect(),
        m_pre: nv.m_pre.iter().map(|(&k, v)| (k, pick(v))).collect(),
        m_post: nv.m_post.iter().map(|(&k, v)| (k, pick(v))).collect(),
        dm: nv.dm.iter().map(|(&k, v)| (k, pick(v))).collect(),
    };
    for normalize in [false, true] {
        for g in [0, 1] {
            let a = dr_datt(&s, &nv, g, normalize).unwrap().value;
            let b = dr_datt(&sp, &nvp, g, normalize).unwrap().value;
            assert!((a - b).abs() <= 1e-12);
        }
        let a = dr_spillover(&s, &nv, false, 1, 0, normalize).unwrap().value;
        let b = dr_spillover(&sp, &nvp, false, 1, 0, normalize).unwrap().value;
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn division_guards_fire() {
    let f = fixture();
    let s = sample_of(&f);
    let mut nv = nuisances(&f);
    nv.p.as_mut().unwrap()[0] = 1.0;
    assert!(matches!(dr_datt(&s, &nv, 1, true), Err(Error::DivisionGuard { unit: 0, .. })));
    let mut nv = nuisances(&f);
    nv.pi.get_mut(&(true, 1)).unwrap()[0] = 0.0;
    assert!(matches!(dr_datt(&s, &nv, 1, true), Err(Error::DivisionGuard { .. })));
}

#[test]
fn missing_level_is_rejected() {
    let f = fixture();
    let s = sample_of(&f);
    assert!(dr_datt(&s, &nuisances(&f), 5, true).is_err());
}
