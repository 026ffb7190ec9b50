#![allow(dead_code)]

use std::collections::BTreeMap;

use nbrdid::exposure::{compute_exposure, ExposureKind, ExposureSpec};
use nbrdid::population::{build_adjacency, Population, UnitRecord};
use nbrdid::sample::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Sample built directly from vectors; units sit 10 apart on a line and
/// carry the attribute column `z`.
pub fn sample_from(w: &[bool], g: &[i64], y1: &[f64], y2: &[f64], z: &[f64]) -> Sample<f64> {
    let n = w.len();
    let mut levels = g.to_vec();
    levels.sort_unstable();
    levels.dedup();
    let mut columns = BTreeMap::new();
    columns.insert("z".to_string(), z.to_vec());
    Sample {
        pop_index: (0..n).collect(),
        ids: (0..n).map(|i| format!("u{i}")).collect(),
        w: w.to_vec(),
        g: g.to_vec(),
        levels,
        y_pre: y1.to_vec(),
        y_post: y2.to_vec(),
        y_base: None,
        coords: (0..n).map(|i| vec![10.0 * i as f64, 0.0]).collect(),
        clusters: None,
        columns,
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Population on `U(0, side)^2` with a logistic treatment in `z`, and
/// `Y2 = 2 + W + G + z + e2` once exposure is known.
pub fn synthetic_population(n: usize, side: f64, cutoff: f64, seed: u64) -> (Population<f64>, Sample<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::with_capacity(n);
    for i in 0..n {
        let coords = vec![rng.gen::<f64>() * side, rng.gen::<f64>() * side];
        let z: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let w = rng.gen::<f64>() < logistic(0.4 * z);
        let e1: f64 = rng.sample(StandardNormal);
        let y1 = 1.0 + z + e1;
        units.push(UnitRecord { id: format!("u{i:04}"), coords, z: vec![z, x], w, y1, y2: 0.0, y0: None, cluster: None });
    }
    let pop = Population::new(units, vec!["z".into(), "x".into()], "synthetic").unwrap();
    let adj = build_adjacency(&pop, cutoff, true).unwrap();
    let exp = compute_exposure(&pop, &ExposureSpec { kind: ExposureKind::AnyTreatedNeighbor, adjacency: Some(&adj) }).unwrap();
    let mut units = pop.units().to_vec();
    for (i, u) in units.iter_mut().enumerate() {
        let e2: f64 = rng.sample(StandardNormal);
        let w = if u.w { 1.0 } else { 0.0 };
        u.y2 = 2.0 + w + exp.levels[i] as f64 + u.z[0] + 0.5 * w * u.z[0] + e2;
    }
    let pop = Population::new(units, vec!["z".into(), "x".into()], "synthetic").unwrap();
    let sample = Sample::new(&pop, &exp, Some(&adj)).unwrap();
    (pop, sample)
}

/// Gaussian elimination with partial pivoting on a copy of `(a | b)`.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// OLS by explicit normal equations `(X'X) β = X'y`.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..k {
            xty[a] += row[a] * yi;
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    gauss_solve(xtx, xty)
}
