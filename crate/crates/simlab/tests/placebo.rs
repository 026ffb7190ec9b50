use nbrdid::analysis::{run_estimand, EstimandRequest, EstimandTarget};
use nbrdid::inference::{KernelSpec, VarianceMethod};
use nbrdid::Error;
use nbrdid_simlab::{parse_suite, replicate, DesignId, DesignSpec, FixedDesign, RunOptions, SuiteModels};

fn rejection_rate(delta: f64, reps: usize) -> f64 {
    let spec = DesignSpec { placebo_trend: Some(delta), ..DesignSpec::standard(DesignId::Placebo, 1) };
    let d = FixedDesign::new(spec).unwrap();
    let suite = parse_suite("placebo1", &SuiteModels::default()).unwrap();
    let mut opts = RunOptions::new(reps);
    opts.variance = vec![VarianceMethod::Shac(KernelSpec::bartlett(1.3))];
    let recs = replicate(&d, &suite, &opts).unwrap();
    let stats: Vec<f64> = recs
        .iter()
        .filter_map(|r| r.results[0].as_ref().ok())
        .filter_map(|x| x.se[0].map(|se| x.estimate / se))
        .collect();
    assert!(stats.len() as f64 >= 0.999 * reps as f64);
    stats.iter().filter(|z| z.abs() >= 1.959963984540054).count() as f64 / stats.len() as f64
}

#[test]
fn placebo_null_rejects_at_most_six_percent() {
    let r = rejection_rate(0.0, 2000);
    assert!(1.0 - r >= 0.94, "non-rejection rate {}", 1.0 - r);
}

#[test]
fn placebo_detects_a_half_unit_differential_trend() {
    let r = rejection_rate(0.5, 1000);
    assert!(r > 0.5, "rejection rate {r}");
}

#[test]
fn placebo_geometry_has_about_n_400_eligible_units() {
    let d = FixedDesign::new(DesignSpec::standard(DesignId::Placebo, 1)).unwrap();
    assert_eq!(d.spec.n, 400);
    assert!(d.eligible_count() > 300);
}

#[test]
fn zero_noise_equal_trends_give_exactly_zero() {
    let d = FixedDesign::new(DesignSpec::standard(DesignId::Placebo, 3)).unwrap();
    let mut s = d.draw(0).unwrap().sample;
    let z = s.column("z").unwrap().to_vec();
    s.y_base = Some(z.iter().map(|v| 2.0 * v).collect());
    s.y_pre = z.iter().map(|v| 2.0 * v + 1.0).collect();
    let spec = parse_suite("placebo1", &SuiteModels::default()).unwrap().remove(0).spec;
    for g in [0, 1] {
        let rows = run_estimand(&s, &spec, &EstimandRequest::at(EstimandTarget::PretrendPlacebo, g)).unwrap();
        assert!(rows[0].estimate().abs() < 1e-12, "g={g}: {}", rows[0].estimate());
    }
}

#[test]
fn placebo_without_an_earlier_period_is_a_schema_error() {
    let d = FixedDesign::new(DesignSpec::standard(DesignId::D1, 1)).unwrap();
    let s = d.draw(0).unwrap().sample;
    let spec = parse_suite("placebo1", &SuiteModels::default()).unwrap().remove(0).spec;
    let err = run_estimand(&s, &spec, &EstimandRequest::at(EstimandTarget::PretrendPlacebo, 1)).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
}
