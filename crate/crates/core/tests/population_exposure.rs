use nbrdid::exposure::{compute_exposure, toggle_invariance_check, ExposureKind, ExposureMapping, ExposureSpec, RatioWeighting};
use nbrdid::population::{build_adjacency, pairs_within, read_population, write_population, ColumnMapping, Metric};
use nbrdid::{Error, Population, Result, Sample, UnitRecord};
use proptest::prelude::*;

fn unit(id: usize, coords: &[f64], w: bool, cluster: Option<&str>) -> UnitRecord {
    UnitRecord {
        id: format!("u{id}"),
        coords: coords.to_vec(),
        z: vec![id as f64],
        w,
        y1: 0.0,
        y2: 0.0,
        y0: None,
        cluster: cluster.map(str::to_string),
    }
}

fn line(xs: &[f64], w: &[bool]) -> Population {
    let units = xs.iter().zip(w).enumerate().map(|(i, (&x, &wi))| unit(i, &[x, 0.0], wi, None)).collect();
    Population::new(units, vec!["x".into()], "test").unwrap()
}

fn clustered(w: &[bool], labels: &[&str]) -> Population {
    let units = w.iter().zip(labels).enumerate().map(|(i, (&wi, &c))| unit(i, &[i as f64 * 10.0, 0.0], wi, Some(c))).collect();
    Population::new(units, vec!["x".into()], "test").unwrap()
}

fn random_population(pts: &[(f64, f64, bool)]) -> Population {
    let units = pts.iter().enumerate().map(|(i, &(x, y, w))| unit(i, &[x, y], w, Some(["a", "b", "c"][i % 3]))).collect();
    Population::new(units, vec!["x".into()], "test").unwrap()
}

#[test]
fn chebyshev_distance_examples() {
    let pop = line(&[0.0, 3.0], &[false, false]);
    assert_eq!(pop.distance(0, 1).unwrap(), 3.0);
    let units = vec![unit(0, &[0.0, 0.0], false, None), unit(1, &[3.0, 1.0], false, None), unit(2, &[5.0, 5.0], false, None), unit(3, &[5.0, 5.0], false, None), unit(4, &[0.2, 1.7], false, None), unit(5, &[1.0, 1.1], false, None)];
    let pop = Population::new(units, vec!["x".into()], "t").unwrap();
    assert_eq!(pop.distance(0, 1).unwrap(), 3.0);
    assert_eq!(pop.distance(2, 3).unwrap(), 0.0);
    assert!((pop.distance(4, 5).unwrap() - 0.8).abs() < 1e-15);
    assert!((pop.distance_with(0, 1, Metric::Euclidean).unwrap() - 10f64.sqrt()).abs() < 1e-15);
    assert!(matches!(pop.distance(0, 6), Err(Error::Bounds { index: 6, len: 6 })));
}

#[test]
fn adjacency_examples() {
    let pop = line(&[0.0, 0.25], &[false, false]);
    let adj = build_adjacency(&pop, 0.3, false).unwrap();
    assert_eq!(adj.edge_list(), vec![(0, 1, 1.0), (1, 0, 1.0)]);
    assert!(build_adjacency(&pop, 0.0, false).unwrap().is_empty());
    assert!(build_adjacency(&pop, -1.0, false).is_err());

    let pop = line(&[0.0, 1.0, 2.0, 3.0, 4.0], &[false; 5]);
    let adj = build_adjacency(&pop, 1.5, true).unwrap();
    let degrees: Vec<usize> = (0..5).map(|i| adj.degree(i)).collect();
    assert_eq!(degrees, vec![1, 2, 2, 2, 1]);
    assert_eq!(adj.weight(2, 1), 0.5);
    assert_eq!(adj.weight(0, 1), 1.0);
    assert_eq!(adj.weight(0, 2), 0.0);
    let mut buf = Vec::new();
    adj.write_edge_list(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("i,j,weight\n0,1,1\n"));
}

#[test]
fn coincident_units_are_neighbors_at_cutoff_zero_only_when_distinct() {
    let pop = line(&[1.0, 1.0, 2.0], &[false; 3]);
    let adj = build_adjacency(&pop, 0.0, false).unwrap();
    assert!(adj.pair(0, 1) && !adj.pair(0, 0) && adj.is_isolated(2));
}

#[test]
fn csv_ingestion_examples() {
    let schema = ColumnMapping::new(&["x", "y"], &["z1"]);
    let ok = "id,x,y,z1,w,y1,y2\na,0,0,1.5,1,2,3\nb,1,0,2.5,0,2,4\nc,0,1,3.5,1,1,1\n";
    let pop: Population = read_population(ok.as_bytes(), &schema, "mem").unwrap();
    assert_eq!((pop.len(), pop.dim(), pop.treated_count()), (3, 2, 2));
    assert_eq!(pop.unit(1).unwrap().z, vec![2.5]);

    let bad_w = "id,x,y,z1,w,y1,y2\na,0,0,1,1,2,3\nb,1,0,2,2,2,4\n";
    match read_population::<f64, _>(bad_w.as_bytes(), &schema, "mem") {
        Err(Error::Validation { row, .. }) => assert_eq!(row, 2),
        r => panic!("unexpected {r:?}"),
    }
    let missing = "id,x,y,w,y1,y2\na,0,0,1,2,3\n";
    assert!(matches!(read_population::<f64, _>(missing.as_bytes(), &schema, "mem"), Err(Error::Schema(c)) if c == "z1"));
    let garbled = "id,x,y,z1,w,y1,y2\na,0,0,1,1,2,3\nb,1,oops,2,0,2,4\n";
    match read_population::<f64, _>(garbled.as_bytes(), &schema, "mem") {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "y")),
        r => panic!("unexpected {r:?}"),
    }
    let dup = "id,x,y,z1,w,y1,y2\na,0,0,1,1,2,3\na,1,0,2,0,2,4\n";
    assert!(matches!(read_population::<f64, _>(dup.as_bytes(), &schema, "mem"), Err(Error::Validation { row: 2, .. })));
}

#[test]
fn any_treated_neighbor_examples() {
    // Unit 0 sits at the origin with three neighbors.
    let pop = line(&[0.0, 0.1, -0.1, 0.2], &[false, false, false, false]);
    let adj = build_adjacency(&pop, 0.3, false).unwrap();
    let spec = ExposureSpec { kind: ExposureKind::AnyTreatedNeighbor, adjacency: Some(&adj) };
    assert_eq!(compute_exposure(&pop, &spec).unwrap().levels[0], 0);
    let pop = pop.with_treatments(&[false, true, false, false]);
    let ex = compute_exposure(&pop, &spec).unwrap();
    assert_eq!(ex.levels, vec![1, 0, 1, 1]);
    assert_eq!(ex.level_set, vec![0, 1]);
}

#[test]
fn fraction_bins_are_half_open_with_closed_last_bin() {
    // Unit 0 has neighbors 1..=4; treated fraction is varied.
    let xs = [0.0, 0.1, 0.2, -0.1, -0.2, 5.0];
    let adj_pop = line(&xs, &[false; 6]);
    let adj = build_adjacency(&adj_pop, 0.25, false).unwrap();
    let spec = ExposureSpec { kind: ExposureKind::FractionTreatedBinned { edges: vec![0.0, 0.5, 1.0] }, adjacency: Some(&adj) };
    let level0 = |k: usize| {
        let w: Vec<bool> = (0..6).map(|i| (1..=k).contains(&i)).collect();
        spec.levels(&adj_pop, &w).unwrap()[0]
    };
    assert_eq!(level0(0), 0);
    assert_eq!(level0(1), 0);
    assert_eq!(level0(2), 1);
    assert_eq!(level0(4), 1);
    let ex = compute_exposure(&adj_pop, &spec).unwrap();
    assert!(!ex.eligible[5] && ex.eligible[0]);
    assert_eq!(ex.eligible_count(), 5);
    for bad in [vec![0.0, 1.0, 0.5], vec![0.1, 1.0], vec![0.0, 0.9], vec![0.0]] {
        let s = ExposureSpec { kind: ExposureKind::FractionTreatedBinned { edges: bad }, adjacency: Some(&adj) };
        assert!(matches!(compute_exposure(&adj_pop, &s), Err(Error::Config(_))));
    }
}

#[test]
fn cluster_ratio_example() {
    let pop = clustered(&[true, true, false, false, false, false], &["a", "a", "a", "b", "b", "b"]);
    for weighting in [RatioWeighting::Cluster, RatioWeighting::Unit] {
        let spec: ExposureSpec<f64> = ExposureSpec { kind: ExposureKind::LeaveOneOutClusterRatio { weighting }, adjacency: None };
        let ex = compute_exposure(&pop, &spec).unwrap();
        assert_eq!(ex.levels, vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(ex.eligible_count(), 6);
        assert!(toggle_invariance_check(&pop, &spec).unwrap().violations.is_empty());
    }
}

#[test]
fn cluster_ratio_configuration_errors() {
    let spec: ExposureSpec<f64> = ExposureSpec { kind: ExposureKind::LeaveOneOutClusterRatio { weighting: RatioWeighting::Cluster }, adjacency: None };
    let single = clustered(&[true, false, false], &["a", "a", "b"]);
    assert!(matches!(compute_exposure(&single, &spec), Err(Error::Config(_))));
    let none = line(&[0.0, 1.0], &[true, false]);
    assert!(compute_exposure(&none, &spec).is_err());
    let any: ExposureSpec<f64> = ExposureSpec { kind: ExposureKind::AnyTreatedNeighbor, adjacency: None };
    assert!(matches!(compute_exposure(&none, &any), Err(Error::Config(_))));
}

/// Cluster ratio that wrongly counts the unit itself.
struct SelfInclusiveRatio;

impl ExposureMapping<f64> for SelfInclusiveRatio {
    fn levels(&self, pop: &Population, w: &[bool]) -> Result<Vec<i64>> {
        let (cl, labels) = pop.cluster_indices()?;
        let mut size = vec![0.0; labels.len()];
        let mut treated = vec![0.0; labels.len()];
        for (i, &c) in cl.iter().enumerate() {
            size[c] += 1.0;
            treated[c] += w[i] as u8 as f64;
        }
        let ratio: Vec<f64> = cl.iter().map(|&c| treated[c] / size[c]).collect();
        let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
        Ok(ratio.iter().map(|&r| (r > mean) as i64).collect())
    }
}

#[test]
fn toggle_check_flags_self_inclusive_mapping() {
    let pop = clustered(&[true, false, false, false], &["a", "a", "b", "b"]);
    let report = toggle_invariance_check(&pop, &SelfInclusiveRatio).unwrap();
    assert_eq!(report.checked, 4);
    assert!(report.violations.contains(&(0, 1, 0)), "{report:?}");
}

#[test]
fn sample_restricts_to_eligible_and_keeps_full_neighbor_means() {
    // Unit 2 is isolated, unit 3 neighbors only unit 1.
    let pop = line(&[0.0, 0.2, 9.0, 0.45], &[true, false, true, false]);
    let adj = build_adjacency(&pop, 0.3, true).unwrap();
    let spec = ExposureSpec { kind: ExposureKind::AnyTreatedNeighbor, adjacency: Some(&adj) };
    let ex = compute_exposure(&pop, &spec).unwrap();
    let s = Sample::new(&pop, &ex, Some(&adj)).unwrap();
    assert_eq!(s.ids, vec!["u0", "u1", "u3"]);
    assert_eq!(s.g, vec![0, 1, 0]);
    assert_eq!(s.column("x").unwrap(), &[0.0, 1.0, 3.0]);
    assert_eq!(s.column("A.x").unwrap(), &[1.0, 1.5, 1.0]);
    assert!(s.column("C.x").is_err());
}

fn brute_force_pairs(coords: &[Vec<f64>], radius: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let d = coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if d <= radius {
                out.push((i, j));
            }
        }
    }
    out
}

fn point() -> impl Strategy<Value = (f64, f64, bool)> {
    (-3.0f64..3.0, -3.0f64..3.0, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chebyshev_is_a_metric(a in prop::collection::vec(-10.0f64..10.0, 3), b in prop::collection::vec(-10.0f64..10.0, 3), c in prop::collection::vec(-10.0f64..10.0, 3)) {
        let m = Metric::Chebyshev;
        prop_assert!(m.eval(&a, &c) <= m.eval(&a, &b) + m.eval(&b, &c) + 1e-12);
        prop_assert_eq!(m.eval(&a, &b), m.eval(&b, &a));
        prop_assert_eq!(m.eval(&a, &a), 0.0);
    }

    #[test]
    fn bucketed_pairs_match_brute_force(pts in prop::collection::vec(point(), 2..60), radius in 0.0f64..2.0) {
        let coords: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let got: Vec<(usize, usize)> = pairs_within(&coords, radius, Metric::Chebyshev).iter().map(|p| (p.0, p.1)).collect();
        prop_assert_eq!(got, brute_force_pairs(&coords, radius));
    }

    #[test]
    fn adjacency_is_symmetric_with_unit_row_sums(pts in prop::collection::vec(point(), 2..60), cutoff in 0.1f64..1.5) {
        let pop = random_population(&pts);
        let adj = build_adjacency(&pop, cutoff, true).unwrap();
        for i in 0..pop.len() {
            let row: f64 = (0..pop.len()).map(|j| adj.weight(i, j)).sum();
            prop_assert!(adj.is_isolated(i) || (row - 1.0).abs() < 1e-12);
            for j in 0..pop.len() {
                prop_assert_eq!(adj.pair(i, j), adj.pair(j, i));
            }
        }
    }

    #[test]
    fn every_exposure_kind_is_leave_one_out(pts in prop::collection::vec(point(), 6..40), cutoff in 0.2f64..1.5) {
        let pop = random_population(&pts);
        let adj = build_adjacency(&pop, cutoff, true).unwrap();
        let kinds = [
            ExposureKind::AnyTreatedNeighbor,
            ExposureKind::FractionTreatedBinned { edges: vec![0.0, 0.25, 0.5, 1.0] },
            ExposureKind::LeaveOneOutClusterRatio { weighting: RatioWeighting::Cluster },
            ExposureKind::LeaveOneOutClusterRatio { weighting: RatioWeighting::Unit },
        ];
        for kind in kinds {
            let spec = ExposureSpec { kind, adjacency: Some(&adj) };
            let report = toggle_invariance_check(&pop, &spec).unwrap();
            prop_assert!(report.violations.is_empty(), "{:?}", report);
        }
    }

    #[test]
    fn neighbor_exposures_are_local(pts in prop::collection::vec(point(), 4..40), cutoff in 0.2f64..1.5, flip in any::<prop::sample::Index>()) {
        let pop = random_population(&pts);
        let adj = build_adjacency(&pop, cutoff, false).unwrap();
        let j = flip.index(pop.len());
        let mut w = pop.treatments();
        for kind in [ExposureKind::AnyTreatedNeighbor, ExposureKind::FractionTreatedBinned { edges: vec![0.0, 0.5, 1.0] }] {
            let spec = ExposureSpec { kind, adjacency: Some(&adj) };
            let before = spec.levels(&pop, &w).unwrap();
            w[j] = !w[j];
            let after = spec.levels(&pop, &w).unwrap();
            w[j] = !w[j];
            for i in 0..pop.len() {
                if !adj.pair(i, j) {
                    prop_assert_eq!(before[i], after[i]);
                }
            }
            prop_assert!(before.iter().all(|&g| (0..=1).contains(&g)));
        }
    }

    #[test]
    fn csv_round_trip(pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, any::<bool>(), -1e6f64..1e6, prop::option::of(-5.0f64..5.0)), 1..30)) {
        let with_base = pts[0].4.is_some();
        let units: Vec<UnitRecord> = pts.iter().enumerate().map(|(i, p)| UnitRecord {
            id: format!("id{i}"),
            coords: vec![p.0, p.1],
            z: vec![p.3, p.0 * 1e-7],
            w: p.2,
            y1: p.3 / 3.0,
            y2: -p.1 / 7.0,
            y0: if with_base { Some(p.4.unwrap_or(0.1)) } else { None },
            cluster: Some(format!("c{}", i % 4)),
        }).collect();
        let pop = Population::new(units, vec!["z1".into(), "z2".into()], "mem").unwrap();
        let mut schema = ColumnMapping::new(&["x", "y"], &["z1", "z2"]);
        schema.cluster = Some("village".into());
        schema.baseline = with_base.then(|| "y0".to_string());
        schema.delimiter = b';';
        let mut buf = Vec::new();
        write_population(&pop, &schema, &mut buf).unwrap();
        let back: Population = read_population(buf.as_slice(), &schema, "mem").unwrap();
        prop_assert_eq!(&back, &pop);
        let mut again = Vec::new();
        write_population(&back, &schema, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }
}
