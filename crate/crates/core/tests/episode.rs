use osmag_nav::eval::demo_experiment;
use osmag_nav::fixtures::near_perfect_profile;
use osmag_nav::{run_episode, DetectionProfile, EpisodeConfig, EpisodeRecord, Experiment, MapMode};

fn records(exp: &Experiment, starts: usize) -> Vec<EpisodeRecord> {
    let mut out = Vec::new();
    for (qi, q) in exp.queries.iter().enumerate() {
        for (si, start) in exp.starts.iter().take(starts).enumerate() {
            let cfg = EpisodeConfig {
                env: &exp.env,
                query: q.clone(),
                backend: exp.backend.as_ref(),
                profile: exp.profile.clone(),
                nav: exp.nav,
                map_mode: exp.map_mode,
                seed: osmag_nav::eval::episode_seed(exp.seed, qi, si),
                start: *start,
                source: None,
            };
            out.push(run_episode(&cfg, &format!("q{qi}-s{si}")));
        }
    }
    out
}

/// Invariants every record must hold whatever the detector did.
fn check_record(r: &EpisodeRecord, exp: &Experiment) {
    let id = &r.episode_id;
    let Some(plan) = &r.plan else {
        assert!(r.visits.is_empty() && !r.success, "{id}");
        return;
    };
    // Points follow the plan's room-major order, one per node.
    let flat = plan.flatten();
    assert_eq!(r.plan_points.len(), flat.len(), "{id}");
    for (p, (room, node)) in r.plan_points.iter().zip(&flat) {
        assert_eq!((p.room_id, p.node_id), (*room, Some(*node)), "{id}");
    }
    // Visits are a prefix of the points, in order.
    for (i, v) in r.visits.iter().enumerate() {
        assert_eq!(v.point, i, "{id}");
        if !v.reached {
            assert!(v.detection.is_none(), "{id}: unreached point {i} has a detection");
        }
    }
    let total: f64 = r.visits.iter().map(|v| v.leg_length).sum();
    assert!((total - r.driven_length).abs() < 1e-9, "{id}");
    if r.success {
        let k = r.success_point.unwrap();
        assert_eq!(k + 1, r.visits.len(), "{id}: search continued after success");
        let det = r.visits[k].detection.as_ref().unwrap();
        assert!(det.found && det.is_true_positive, "{id}");
        let inst = &exp.env.world().instances[det.matched_instance.unwrap()];
        assert!(
            inst.label.eq_ignore_ascii_case(&r.query.object),
            "{id}: matched {}",
            inst.label
        );
    } else {
        assert!(r.success_point.is_none() && r.success_node.is_none(), "{id}");
    }
}

#[test]
fn demo_records_hold_episode_invariants() {
    let exp = demo_experiment(11, MapMode::Full, near_perfect_profile()).unwrap();
    for r in records(&exp, 2) {
        check_record(&r, &exp);
    }
}

#[test]
fn disabled_detection_drives_every_reachable_point() {
    let exp = demo_experiment(11, MapMode::Full, DetectionProfile::disabled()).unwrap();
    for r in records(&exp, 1) {
        check_record(&r, &exp);
        assert!(!r.success);
        assert_eq!(r.visits.len(), r.plan_points.len(), "{}", r.episode_id);
        for v in r.visits.iter().filter(|v| v.reached) {
            let d = v.detection.as_ref().unwrap();
            assert!(!d.found);
            assert_eq!(d.views_used, 4);
        }
    }
}

#[test]
fn records_are_reproducible_and_round_trip() {
    let exp = demo_experiment(5, MapMode::RoomsOnly, osmag_nav::DetectionProfile::default()).unwrap();
    let a = records(&exp, 1);
    let b = records(&exp, 1);
    for (x, y) in a.iter().zip(&b) {
        let line = x.to_json_line();
        assert_eq!(line, y.to_json_line());
        assert!(!line.contains('\n'));
        assert_eq!(EpisodeRecord::from_json_line(&line).unwrap(), *x);
    }
}
