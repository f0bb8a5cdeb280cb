use std::sync::Arc;

use restorekit::bench::{
    build_hybrid_testset, markdown, row_counts, run_fast_vs_slow, run_single_vs_both, run_success_rate, write_report,
    write_testset, BenchError, HybridTestsetSpec, ManifestRecord, SuccessRateParams,
};
use restorekit::config::{Config, Profile};
use restorekit::datagen::load_pool;
use restorekit_core::degrade::Degrader;
use restorekit_core::Raster;

fn pool(seed: u64) -> Vec<Arc<Raster>> {
    load_pool(None, seed).unwrap().0.default
}

#[test]
fn testset_has_the_fourteen_rows() {
    let spec = HybridTestsetSpec::default();
    assert_eq!(spec.rows.len(), 14);
    assert_eq!(spec.total(), 200);
    let degrader = Degrader::with_transform_proxies();
    let cases = build_hybrid_testset(&spec, &pool(3), 9, &degrader).unwrap();
    assert_eq!(cases.len(), 200);
    let counts = row_counts(&cases);
    assert_eq!(counts["blur+noise+jpeg"], 20);
    assert_eq!(counts["motionblur+noise"], 20);
    assert_eq!(counts["lowlight+noise"], 10);
    assert_eq!(counts["rainstreak+jpeg"], 10);
    for c in &cases {
        assert_eq!(c.plan.kinds().iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+"), c.row);
        assert!(degrader.replay_matches(&c.degraded).unwrap());
    }

    let again = build_hybrid_testset(&spec, &pool(3), 9, &degrader).unwrap();
    for (a, b) in cases.iter().zip(&again) {
        assert_eq!((&a.plan, a.seed, a.degraded.raster.digest()), (&b.plan, b.seed, b.degraded.raster.digest()));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = write_testset(&cases, dir.path()).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let records: Vec<ManifestRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 200);
    for r in &records {
        assert!(dir.path().join(&r.clean_path).is_file());
        assert!(dir.path().join(&r.degraded_path).is_file());
    }
}

#[test]
fn small_pool_is_rejected() {
    let small: Vec<_> = pool(1).into_iter().take(19).collect();
    let err = build_hybrid_testset(&HybridTestsetSpec::default(), &small, 1, &Degrader::new()).unwrap_err();
    assert!(matches!(err, BenchError::PoolTooSmall { distinct: 19, needed: 20 }));
    let dupes = vec![small[0].clone(); 40];
    assert!(matches!(
        build_hybrid_testset(&HybridTestsetSpec::default(), &dupes, 1, &Degrader::new()),
        Err(BenchError::PoolTooSmall { distinct: 1, .. })
    ));
}

#[test]
fn fast_vs_slow_with_oracles() {
    let cfg = Config::default();
    let (report, timing) = run_fast_vs_slow(&cfg, true, &pool(5), 5).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert_eq!(report.summary["agent_calls_fast_route_on"], 1.0);
    assert_eq!(report.summary["agent_calls_fast_route_off"], 2.0);
    let on = report.condition("fast_route_on").unwrap();
    assert_eq!(on.rows.len(), 11);
    assert_eq!(on.row("all").unwrap().n, 200);
    assert_eq!(timing.rows.len(), 22);

    // byte-identical apart from the timing file
    let (again, _) = run_fast_vs_slow(&cfg, true, &pool(5), 5).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let json = write_report(dir.path(), &report, Some(&timing)).unwrap();
    assert!(json.ends_with("fast-vs-slow.json"));
    assert!(dir.path().join("fast-vs-slow.timing.json").is_file());
    let md = std::fs::read_to_string(dir.path().join("fast-vs-slow.md")).unwrap();
    assert!(md.contains("| de-noise |"));
}

#[test]
fn hevc_needs_a_codec() {
    let err = run_fast_vs_slow(&Config::default(), false, &pool(5), 5).unwrap_err();
    assert!(err.to_string().contains("hevc"), "{err}");
}

#[test]
fn success_rate_oracle_is_perfect() {
    let params = SuccessRateParams { images_per_kind: 40, side: 48 };
    let (report, _) = run_success_rate(&Config::default(), true, &pool(2), 2, params).unwrap();
    assert!(report.check("oracle_perfect").unwrap().passed);
    assert!(!report.check("enough_images").unwrap().passed);
    let slow = report.condition("slow_agent").unwrap();
    assert_eq!(slow.rows.len(), 10);
    assert!(slow.rows.iter().all(|r| r.success_rate == Some(1.0) && r.invocations == Some(40)));
    let fast = report.condition("fast_agent").unwrap();
    assert!(fast.rows.iter().all(|r| r.success_rate == Some(1.0) && r.n == 20));
}

#[test]
fn success_rate_stub_tracks_its_prediction() {
    let mut cfg = Config::default();
    cfg.backends.profile = Profile::Stub;
    let params = SuccessRateParams { images_per_kind: 300, side: 40 };
    let (report, _) = run_success_rate(&cfg, true, &pool(4), 4, params).unwrap();
    let slow = report.condition("slow_agent").unwrap();
    for r in &slow.rows {
        let (got, want) = (r.success_rate.unwrap(), r.predicted.unwrap());
        // 300 draws: 4 standard deviations is about 0.1
        assert!((got - want).abs() < 0.1, "{}: {got} vs {want}", r.key);
    }
    assert!(report.summary["majority_lower_bound"] > 0.68);
}

#[test]
fn single_vs_both_orders_every_row() {
    let degrader = Degrader::with_transform_proxies();
    let spec = HybridTestsetSpec { side: 96, ..HybridTestsetSpec::default() };
    let cases = build_hybrid_testset(&spec, &pool(8), 8, &degrader).unwrap();
    let (report, _) = run_single_vs_both(&Config::default(), true, &cases, 8).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    let both = report.condition("both").unwrap();
    assert_eq!(both.rows.len(), 15);
    let json = serde_json::to_value(&report).unwrap();
    let row = json["conditions"][0]["rows"][0].as_object().unwrap();
    assert!(row.contains_key("lpips") && row["lpips"].is_null());
    assert!(report.fingerprints.resolved.simulator.unstable_penalty);
    assert!(markdown(&report, None).contains("| lowlight+noise |"));
}
