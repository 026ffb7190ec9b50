use nbrdid::linalg::Matrix;
use nbrdid::population::Metric;
use nbrdid_simlab::design::{lim_residual, lim_solve, Assignment, Outcome};
use nbrdid_simlab::{DesignId, DesignSpec, FixedDesign, Generator};

fn small(id: DesignId, n: usize, side: f64, seed: u64) -> FixedDesign {
    FixedDesign::new(DesignSpec { n, side, ..DesignSpec::standard(id, seed) }).unwrap()
}

#[test]
fn design_ids_round_trip() {
    for name in ["1", "2", "3", "4", "5", "6", "appendixE", "appendixF-noSpill", "appendixF-spill", "placebo"] {
        let id: DesignId = name.parse().unwrap();
        assert_eq!(id.name(), name);
    }
    assert!("7".parse::<DesignId>().is_err());
}

#[test]
fn design_id_determines_assignment_and_outcome() {
    let spec = |id| DesignSpec::standard(id, 1);
    assert_eq!(spec(DesignId::D1).assignment, Assignment::Logit);
    assert_eq!(spec(DesignId::D2).outcome, Outcome::Additive { z_coef: 2.0 });
    assert_eq!(spec(DesignId::D3).assignment, Assignment::LogitSpatial);
    assert_eq!(spec(DesignId::D5).outcome, Outcome::LinearInMeans { squared: true });
    assert_eq!(spec(DesignId::AppendixE).n, 900);
    assert_eq!(spec(DesignId::AppendixFSpill).assignment, Assignment::Threshold);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(FixedDesign::new(DesignSpec { n: 1, ..DesignSpec::standard(DesignId::D1, 1) }).is_err());
    assert!(FixedDesign::new(DesignSpec { cutoff: 0.0, ..DesignSpec::standard(DesignId::D1, 1) }).is_err());
    assert!(FixedDesign::new(DesignSpec { lim_weight: 1.0, ..DesignSpec::standard(DesignId::D4, 1) }).is_err());
}

#[test]
fn locations_and_z_are_fixed_across_replications() {
    let d = small(DesignId::D3, 150, 6.0, 5);
    let a = d.draw(0).unwrap();
    let b = d.draw(17).unwrap();
    assert_eq!(a.fingerprint, d.fingerprint());
    assert_eq!(b.fingerprint, d.fingerprint());
    for (ua, ub) in a.population.units().iter().zip(b.population.units()) {
        assert_eq!(ua.coords, ub.coords);
        assert_eq!(ua.z[0], ub.z[0]);
    }
    let zu_same = a.population.units().iter().zip(b.population.units()).filter(|(x, y)| x.z[1] == y.z[1]).count();
    assert_eq!(zu_same, 0);
    assert_ne!(a.population.treatments(), b.population.treatments());
}

#[test]
fn seeds_change_the_fixed_design() {
    assert_ne!(small(DesignId::D1, 100, 5.0, 1).fingerprint(), small(DesignId::D1, 100, 5.0, 2).fingerprint());
    assert_eq!(small(DesignId::D1, 100, 5.0, 1).fingerprint(), small(DesignId::D1, 100, 5.0, 1).fingerprint());
}

#[test]
fn draws_are_reproducible() {
    let d = small(DesignId::D4, 120, 5.0, 9);
    let a = d.draw(3).unwrap();
    let b = d.draw(3).unwrap();
    assert_eq!(a.population, b.population);
    assert_eq!(a.sample, b.sample);
}

#[test]
fn exposure_is_any_treated_neighbor_and_sample_is_eligible_units() {
    let d = small(DesignId::D1, 200, 6.0, 4);
    let draw = d.draw(0).unwrap();
    let w = draw.population.treatments();
    for i in 0..200 {
        let any = d.adjacency.neighbors(i).iter().any(|&j| w[j]);
        assert_eq!(draw.exposure.levels[i], any as i64);
        assert_eq!(draw.exposure.eligible[i], d.adjacency.degree(i) > 0);
    }
    assert_eq!(draw.sample.len(), d.eligible_count());
}

#[test]
fn additive_outcomes_follow_the_design_equation() {
    let d = small(DesignId::D2, 100, 4.0, 3);
    let draw = d.draw(1).unwrap();
    let units = draw.population.units();
    let d1 = small(DesignId::D1, 100, 4.0, 3);
    let other = d1.draw(1).unwrap();
    for (i, (u, v)) in units.iter().zip(other.population.units()).enumerate() {
        assert!((u.y2 - v.y2 - u.z[0]).abs() < 1e-12, "unit {i}");
        assert_eq!(u.y1, v.y1);
    }
}

#[test]
fn linear_in_means_residual_is_tiny() {
    for id in [DesignId::D4, DesignId::D5] {
        let d = small(id, 300, 6.0, 2);
        for rep in 0..5 {
            let draw = d.draw(rep).unwrap();
            assert!(draw.lim_residual.unwrap() <= 1e-10);
        }
    }
}

#[test]
fn linear_in_means_solution_matches_dense_inverse() {
    let d = small(DesignId::D4, 60, 2.0, 8);
    let n = 60;
    let a = Matrix::from_fn(n, n, |i, j| d.adjacency.weight(i, j));
    let m = Matrix::identity(n).sub(&a.scale(0.2));
    let inv = m.inverse().unwrap();
    let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
    let dense = inv.mul_vec(&rhs);
    let iter = lim_solve(&d.adjacency, 0.2, &rhs).unwrap();
    for (x, y) in dense.iter().zip(&iter) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(lim_residual(&d.adjacency, 0.2, &iter, &rhs) <= 1e-12);
    let diag = d.lim_diag.as_ref().unwrap();
    for i in 0..n {
        assert!((diag[i] - inv[(i, i)]).abs() < 1e-12);
    }
}

#[test]
fn truths_follow_the_designs() {
    let d1 = small(DesignId::D1, 200, 6.0, 1).draw(0).unwrap().truth;
    assert_eq!((d1.tau1, d1.tau0, d1.tau), (1.0, 1.0, 1.0));
    let d6 = small(DesignId::D6, 200, 6.0, 1).draw(0).unwrap().truth;
    assert_eq!((d6.tau1, d6.tau0), (1.0, 0.0));
    assert!((d6.tau - d6.share_treated).abs() < 1e-15);
    let spill = small(DesignId::AppendixFSpill, 200, 6.0, 1).draw(0).unwrap().truth;
    assert_eq!((spill.tau1, spill.tau0), (-1.0, 0.0));
    assert!((spill.tau + spill.share_treated).abs() < 1e-15);
}

#[test]
fn design_six_share_matches_cell_counts() {
    let d = small(DesignId::D6, 300, 7.0, 6);
    let draw = d.draw(2).unwrap();
    let s = &draw.sample;
    let n1 = s.w.iter().filter(|&&w| w).count() as f64;
    let share = s.cell_count(true, 1) as f64 / n1;
    assert!((draw.truth.tau - share).abs() < 1e-15);
}

#[test]
fn heterogeneous_truth_is_mean_direct_effect_over_eligible_units() {
    let d = small(DesignId::AppendixE, 200, 6.0, 3);
    let t = d.draw(0).unwrap().truth;
    let diag = d.lim_diag.as_ref().unwrap();
    let elig: Vec<usize> = (0..200).filter(|&i| d.eligible[i]).collect();
    let want = elig.iter().map(|&i| 3.0 * d.z[i] * diag[i]).sum::<f64>() / elig.len() as f64;
    assert!((t.tau1 - want).abs() < 1e-12);
    assert_eq!(t.tau1, t.tau0);
}

#[test]
fn threshold_assignment_treats_units_above_the_mean() {
    let d = small(DesignId::AppendixFNoSpill, 200, 6.0, 2);
    let share = d.draw(0).unwrap().population.treated_count() as f64 / 200.0;
    assert!(share > 0.2 && share < 0.8);
}

#[test]
fn spatial_covariate_has_exponential_covariance() {
    let d = small(DesignId::D3, 40, 3.0, 11);
    let (mut i0, mut j0, mut best) = (0, 1, f64::INFINITY);
    for i in 0..40 {
        for j in (i + 1)..40 {
            let dist = Metric::Euclidean.eval(&d.coords[i], &d.coords[j]);
            if (dist - 0.7).abs() < best {
                best = (dist - 0.7).abs();
                (i0, j0) = (i, j);
            }
        }
    }
    let reps = 4000;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for rep in 0..reps {
        let u = d.draw(rep).unwrap().population;
        let (x, y) = (u.units()[i0].z[1], u.units()[j0].z[1]);
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let r = reps as f64;
    let want = 0.5f64.powf(Metric::Euclidean.eval(&d.coords[i0], &d.coords[j0]));
    assert!((sxx / r - 1.0).abs() < 0.07);
    assert!((syy / r - 1.0).abs() < 0.07);
    assert!((sxy / r - want).abs() < 0.06, "cov {} vs {want}", sxy / r);
}
