mod support;

use std::path::PathBuf;

use osmag_nav::eval::{
    generate_queries, map_size, records_to_jsonl, BackendSpec, DirMode, ExperimentError, MetricSet, ProfileSpec,
};
use osmag_nav::fixtures::{five_room_enriched, five_room_world, near_perfect_profile};
use osmag_nav::grid::WorldInstance;
use osmag_nav::{
    Experiment, ExperimentConfig, Granularity, MetricsConfig, MetricsReport, Query, QueryCategory, SemanticMap,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{expected, random_records};

fn assets() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/fixtures")
}

#[test]
fn metrics_match_brute_force_on_random_batches() {
    let cfg = MetricsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for batch in 0..50 {
        let records = random_records(&mut rng, 1 + batch * 3);
        let got = MetricSet::compute(&records, &cfg);
        let want = expected(&records, &cfg.n_values, &cfg.k_thresholds_m, cfg.success_radius_m);
        assert_eq!(got.r_rsr, want.r_rsr, "batch {batch}");
        for (n, k, rate) in &want.o_rsr {
            assert_eq!(got.o_rsr_at(*n, *k), Some(*rate), "batch {batch} n={n} k={k}");
        }
        assert_eq!(got.amd.mean_m, want.amd, "batch {batch}");
        assert_eq!(got.amd.excluded, want.amd_excluded, "batch {batch}");
        assert_eq!(got.apl.mean_m, want.apl, "batch {batch}");
        assert_eq!(got.dir_all_queries, want.dir_all, "batch {batch}");
        assert_eq!(got.dir_failed_only, want.dir_failed, "batch {batch}");
        assert!(got.dir_failed_only >= got.dir_all_queries);
        for &n in &cfg.n_values {
            let rates: Vec<f64> = cfg
                .k_thresholds_m
                .iter()
                .map(|&k| got.o_rsr_at(n, k).unwrap())
                .collect();
            assert!(
                rates.windows(2).all(|w| w[0] <= w[1]),
                "batch {batch} not monotone in k"
            );
        }
        for &k in &cfg.k_thresholds_m {
            assert!(
                got.o_rsr_at(1, k).unwrap() <= got.o_rsr_at(5, k).unwrap(),
                "batch {batch} not monotone in n"
            );
        }
    }
}

#[test]
fn dir_modes_on_a_constructed_batch() {
    // Ten records: four initially failed, two of those recovered.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records = random_records(&mut rng, 40);
    records.retain(|r| !r.ground_truth.is_empty() && !r.plan_points.is_empty());
    let mut failed: Vec<_> = records
        .iter()
        .filter(|r| osmag_nav::eval::initially_failed(r))
        .cloned()
        .collect();
    let mut hit: Vec<_> = records
        .iter()
        .filter(|r| !osmag_nav::eval::initially_failed(r))
        .cloned()
        .collect();
    failed.truncate(4);
    hit.truncate(6);
    assert_eq!((failed.len(), hit.len()), (4, 6));
    for (i, r) in failed.iter_mut().enumerate() {
        r.success = i < 2;
        r.success_point = (i < 2).then_some(0);
    }
    let batch: Vec<_> = failed.into_iter().chain(hit).collect();
    assert_eq!(osmag_nav::eval::dir(&batch, DirMode::AllQueries), 0.2);
    assert_eq!(osmag_nav::eval::dir(&batch, DirMode::FailedOnly), 0.5);
    assert_eq!(osmag_nav::eval::dir(&batch[4..], DirMode::FailedOnly), 0.0);
}

#[test]
fn query_categories_respect_their_definitions() {
    let map = five_room_enriched();
    let world = five_room_world();
    let nodes_of = |label: &str| -> Vec<_> {
        map.semantic_nodes()
            .filter(|n| n.object_name() == Some(label))
            .map(|n| map.node_metric(n.id).unwrap())
            .collect()
    };
    for g in [
        Granularity::Object,
        Granularity::ObjectRoom,
        Granularity::ObjectRoomFloor,
    ] {
        for q in generate_queries(&world, &map, g, QueryCategory::SO).unwrap() {
            let nodes = nodes_of(&q.object);
            for (_, inst) in world.instances_of(&q.object) {
                assert!(nodes.iter().any(|n| n.distance(&inst.position()) <= 1.0), "{q:?}");
            }
        }
        for q in generate_queries(&world, &map, g, QueryCategory::RO).unwrap() {
            let nodes = nodes_of(&q.object);
            assert!(!nodes.is_empty());
            for (_, inst) in world.instances_of(&q.object) {
                assert!(nodes.iter().all(|n| n.distance(&inst.position()) > 2.0), "{q:?}");
            }
        }
        for q in generate_queries(&world, &map, g, QueryCategory::UO).unwrap() {
            assert!(map.semantic_nodes().all(|n| !n.labels().contains(&q.object)), "{q:?}");
            assert_eq!(q.granularity(), g);
        }
    }
    let sinks = generate_queries(&world, &map, Granularity::Object, QueryCategory::SO).unwrap();
    assert!(sinks.contains(&Query::object("sink").with_category(QueryCategory::SO)));
}

#[test]
fn unmapped_measuring_cup_becomes_uo() {
    let map = five_room_enriched();
    let mut world = five_room_world();
    world.instances.push(WorldInstance::new("measuring cup", 27.0, 4.0));
    let uo = generate_queries(&world, &map, Granularity::ObjectRoomFloor, QueryCategory::UO).unwrap();
    let cup = uo.iter().find(|q| q.object == "measuring cup").expect("emitted");
    assert_eq!(cup.text(), "measuring cup in the lounge on floor 1");
}

#[test]
fn map_size_reports() {
    let empty = map_size(&SemanticMap::new(osmag_nav::fixtures::FIXTURE_ORIGIN), &[]).unwrap();
    assert!(empty.map_bytes < 200);
    let enriched = five_room_enriched();
    let a = map_size(&enriched, &[]).unwrap();
    let b = map_size(&enriched, &[]).unwrap();
    assert_eq!(a, b);
    assert!(a.map_bytes < 1_000_000);
    let with = map_size(&enriched, &[assets().join("five_room.osm")]).unwrap();
    assert_eq!(with.comparisons.len(), 1);
}

fn three_query_config() -> ExperimentConfig {
    let a = assets();
    ExperimentConfig {
        map: a.join("five_room_enriched.osm"),
        world: a.join("five_room_world.json"),
        backend: BackendSpec::Heuristic,
        profile: Some(ProfileSpec::Inline(near_perfect_profile())),
        proposals: None,
        suites: vec![],
        queries: vec![
            Query::object("sink"),
            Query::object("toolbox"),
            Query::object("umbrella"),
        ],
        starts: 5,
        seed: 3,
        map_mode: Default::default(),
        resolution: 0.1,
        nav: Default::default(),
        metrics: Default::default(),
        compare_sizes: vec![],
    }
}

#[test]
fn experiment_runs_every_pair_deterministically() {
    let cfg = three_query_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let first = Experiment::load(&path).unwrap().run(1).unwrap();
    assert_eq!(first.records.len(), 15);
    let second = Experiment::load(&path).unwrap().run(2).unwrap();
    assert_eq!(records_to_jsonl(&first.records), records_to_jsonl(&second.records));
    assert_eq!(first.report.to_json(), second.report.to_json());

    // The report is a pure function of the records.
    let again = MetricsReport::compute(&first.records, &cfg.metrics);
    assert_eq!(again.overall, first.report.overall);
}

#[test]
fn missing_file_aborts_before_running() {
    let mut cfg = three_query_config();
    cfg.world = PathBuf::from("/nonexistent/world.json");
    match Experiment::from_config(&cfg, &assets()) {
        Err(ExperimentError::Missing(p)) => assert_eq!(p, PathBuf::from("/nonexistent/world.json")),
        Err(e) => panic!("wrong error {e}"),
        Ok(_) => panic!("loaded with a missing world"),
    }
}
