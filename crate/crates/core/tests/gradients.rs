use point_transformer::harness::gradsuite::{run_suite, SuiteConfig, LAYER_TOLERANCE, NETWORK_TOLERANCE};

#[test]
fn every_component_passes_finite_differences() {
    let rows = run_suite(&SuiteConfig::default(), |r| {
        println!("{:<24} {:<32} {:.2e} (tol {:e}, retried {})", r.component, r.variant, r.max_rel_error, r.tolerance, r.retried)
    })
    .unwrap();
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert_eq!(rows.iter().filter(|r| r.component == "attention").count(), 40);
    for r in &rows {
        let expected = if r.component.ends_with("network") { NETWORK_TOLERANCE } else { r.tolerance.min(LAYER_TOLERANCE) };
        assert!(r.tolerance <= expected);
    }
}

#[test]
fn other_seeds_pass_too() {
    for seed in [1, 2] {
        let cfg = SuiteConfig { seed, network_probes: 1, ..SuiteConfig::default() };
        let rows = run_suite(&cfg, |_| {}).unwrap();
        let failed: Vec<_> = rows.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "seed {seed}: {failed:#?}");
    }
}
