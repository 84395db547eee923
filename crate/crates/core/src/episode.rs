//! One query end to end: ask for a plan, drive to each planned point in
//! order, look around at each, stop at the first accepted detection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{detect_at_node, DetectionOutcome, DetectionProfile, ProposalSource, SimulatedDetector};
use crate::geo::{point_in_polygon, MetricPoint};
use crate::grid::{navigate, NavConfig, NavFailure};
use crate::grid::{render_grid, GridError, OccupancyGrid};
use crate::grid::{Pose, Scene, WorldError, WorldModel};
use crate::llm::TextBackend;
use crate::osmag::SemanticMap;
use crate::retrieval::{retrieve, Granularity, MapMode, Query, RetrievalPlan};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Map, world and the derived grids, built once and shared by episodes.
#[derive(Debug, Clone)]
pub struct Environment {
    pub map: SemanticMap,
    pub grid: OccupancyGrid,
    pub scene: Scene,
}

impl Environment {
    pub fn new(map: SemanticMap, world: WorldModel, resolution: f64) -> Result<Self, EpisodeError> {
        world.check()?;
        let grid = render_grid(&map, resolution)?;
        let scene = Scene::build(&world, &map, &grid);
        Ok(Self { map, grid, scene })
    }

    pub fn world(&self) -> &WorldModel {
        &self.scene.world
    }

    /// Every area whose polygon contains `p`, ascending by id.
    pub fn areas_containing(&self, p: MetricPoint) -> Vec<i64> {
        areas_containing(&self.map, p)
    }
}

pub fn areas_containing(map: &SemanticMap, p: MetricPoint) -> Vec<i64> {
    map.areas()
        .filter(|a| {
            map.area_polygon_metric(a.id)
                .map(|poly| {
                    let ring: Vec<_> = poly.iter().map(MetricPoint::as_planar).collect();
                    point_in_polygon(p.as_planar(), &ring, 1e-6)
                })
                .unwrap_or(false)
        })
        .map(|a| a.id)
        .collect()
}

pub struct EpisodeConfig<'a> {
    pub env: &'a Environment,
    pub query: Query,
    pub backend: &'a dyn TextBackend,
    pub profile: DetectionProfile,
    pub nav: NavConfig,
    pub map_mode: MapMode,
    pub seed: u64,
    pub start: Pose,
    /// Defaults to the simulated detector.
    pub source: Option<&'a dyn ProposalSource>,
}

/// A place the robot is sent: a planned node, or the interior anchor of a
/// planned room that came with no nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub room_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<i64>,
    pub position: MetricPoint,
    /// Distance to the nearest ground-truth instance; absent with none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_to_gt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVisit {
    /// Index into `plan_points`.
    pub point: usize,
    pub reached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav_failure: Option<NavFailure>,
    pub leg_length: f64,
    pub replans: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Index into the world's instance list.
    pub instance: usize,
    pub position: MetricPoint,
    pub areas: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub query: Query,
    pub granularity: Granularity,
    pub map_mode: MapMode,
    pub seed: u64,
    pub start: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RetrievalPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_error: Option<String>,
    pub plan_points: Vec<PlanPoint>,
    pub visits: Vec<NodeVisit>,
    pub driven_length: f64,
    pub success: bool,
    /// Index into `plan_points` of the successful detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_point: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_node: Option<i64>,
    pub ground_truth: Vec<GroundTruth>,
}

impl EpisodeRecord {
    pub fn top_room(&self) -> Option<i64> {
        self.plan.as_ref().and_then(RetrievalPlan::top_room)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("episode records always serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

pub fn ground_truth(env: &Environment, label: &str) -> Vec<GroundTruth> {
    env.world()
        .instances_of(label)
        .map(|(i, inst)| GroundTruth {
            instance: i,
            position: inst.position(),
            areas: env.areas_containing(inst.position()),
        })
        .collect()
}

fn nearest(gt: &[GroundTruth], p: MetricPoint) -> Option<f64> {
    gt.iter().map(|g| g.position.distance(&p)).min_by(f64::total_cmp)
}

/// Plan points in room-major order; a room without nodes contributes its
/// anchor.
pub fn plan_points(map: &SemanticMap, plan: &RetrievalPlan, gt: &[GroundTruth]) -> Vec<PlanPoint> {
    let mut out = Vec::new();
    for room in &plan.rooms {
        if room.nodes.is_empty() {
            if let Some(p) = map.area_anchor(room.area_id) {
                out.push(PlanPoint {
                    room_id: room.area_id,
                    node_id: None,
                    position: p,
                    distance_to_gt: nearest(gt, p),
                });
            }
            continue;
        }
        for &n in &room.nodes {
            if let Some(p) = map.node_metric(n) {
                out.push(PlanPoint {
                    room_id: room.area_id,
                    node_id: Some(n),
                    position: p,
                    distance_to_gt: nearest(gt, p),
                });
            }
        }
    }
    out
}

pub fn episode_id(query_index: usize, start_index: usize) -> String {
    format!("q{query_index:03}-s{start_index:02}")
}

pub fn run_episode(cfg: &EpisodeConfig, episode_id: &str) -> EpisodeRecord {
    let env = cfg.env;
    let gt = ground_truth(env, &cfg.query.object);
    let mut rec = EpisodeRecord {
        episode_id: episode_id.to_string(),
        query: cfg.query.clone(),
        granularity: cfg.query.granularity(),
        map_mode: cfg.map_mode,
        seed: cfg.seed,
        start: cfg.start,
        plan: None,
        retrieval_error: None,
        plan_points: Vec::new(),
        visits: Vec::new(),
        driven_length: 0.0,
        success: false,
        success_point: None,
        success_node: None,
        ground_truth: gt,
    };
    let plan = match retrieve(&env.map, &cfg.query, cfg.backend, cfg.map_mode) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("{episode_id}: retrieval failed: {e}");
            rec.retrieval_error = Some(e.to_string());
            return rec;
        }
    };
    rec.plan_points = plan_points(&env.map, &plan, &rec.ground_truth);
    rec.plan = Some(plan);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let simulated = SimulatedDetector;
    let source: &dyn ProposalSource = cfg.source.unwrap_or(&simulated);
    let mut known = env.grid.clone();
    let mut pose = cfg.start;
    for (i, point) in rec.plan_points.iter().enumerate() {
        let leg = navigate(&known, &env.scene, pose, point.position, &cfg.nav);
        rec.driven_length += leg.driven_length;
        pose = leg.end_pose;
        known = leg.grid_final;
        let mut visit = NodeVisit {
            point: i,
            reached: leg.reached,
            nav_failure: leg.failure,
            leg_length: leg.driven_length,
            replans: leg.replans,
            detection: None,
        };
        if !leg.reached {
            log::info!("{episode_id}: point {i} unreachable ({:?})", leg.failure);
            rec.visits.push(visit);
            continue;
        }
        let det = detect_at_node(
            &env.scene,
            pose.position(),
            &cfg.query.object,
            &cfg.profile,
            source,
            &mut rng,
        );
        let (found, tp) = (det.found, det.is_true_positive);
        visit.detection = Some(det);
        rec.visits.push(visit);
        if found {
            rec.success = tp;
            if tp {
                rec.success_point = Some(i);
                rec.success_node = point.node_id;
            }
            break;
        }
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::grid::WorldInstance;
    use crate::grid::{inflate, plan_path};
    use crate::llm::{HeuristicBackend, ScriptedBackend};
    use crate::osmag::{Area, MapNode, KEY_NAME, KEY_OBJECT_NAME, KEY_PARENT};
    use crate::retrieval::build_prompt;

    /// Two 6 x 5 rooms side by side joined by a 1 m door.
    fn two_rooms() -> SemanticMap {
        let mut m = SemanticMap::new(GeoPoint::new(31.0, 121.0));
        let pts = [
            (1, 0.0, 0.0),
            (2, 6.0, 0.0),
            (3, 6.0, 5.0),
            (4, 0.0, 5.0),
            (5, 12.0, 0.0),
            (6, 12.0, 5.0),
            (7, 6.0, 2.0),
            (8, 6.0, 3.0),
        ];
        for (id, x, y) in pts {
            let g = m.to_geo(MetricPoint::new(x, y)).unwrap();
            m.insert_node(MapNode::new(id, g)).unwrap();
        }
        m.insert_area(Area::new(10, &[1, 2, 3, 4]).with_tag(KEY_NAME, "kitchen"))
            .unwrap();
        m.insert_area(Area::new(11, &[2, 5, 6, 3]).with_tag(KEY_NAME, "office"))
            .unwrap();
        m.insert_passage(crate::osmag::Passage::new(20, &[7, 8], 10, 11))
            .unwrap();
        for (id, x, y, name, parent) in [(30, 2.0, 2.5, "sink", "10"), (31, 9.0, 2.5, "lamp", "11")] {
            let g = m.to_geo(MetricPoint::new(x, y)).unwrap();
            let n = MapNode::new(id, g)
                .with_tag(KEY_OBJECT_NAME, name)
                .with_tag(KEY_PARENT, parent);
            m.insert_node(n).unwrap();
        }
        m
    }

    fn env(instances: Vec<WorldInstance>) -> Environment {
        let world = WorldModel {
            instances,
            ..WorldModel::default()
        };
        Environment::new(two_rooms(), world, 0.1).unwrap()
    }

    fn cfg<'a>(
        env: &'a Environment,
        backend: &'a dyn TextBackend,
        object: &str,
        profile: DetectionProfile,
    ) -> EpisodeConfig<'a> {
        EpisodeConfig {
            env,
            query: Query::object(object),
            backend,
            profile,
            nav: NavConfig::default(),
            map_mode: MapMode::Full,
            seed: 3,
            start: Pose::new(10.55, 1.05, 0.0),
            source: None,
        }
    }

    #[test]
    fn target_at_mapped_node_found_first() {
        let e = env(vec![WorldInstance::new("sink", 2.0, 2.5)]);
        let c = cfg(&e, &HeuristicBackend, "sink", DetectionProfile::perfect());
        let r = run_episode(&c, "t");
        assert!(r.success);
        assert_eq!(r.success_point, Some(0));
        assert_eq!(r.success_node, Some(30));
        assert_eq!(r.visits.len(), 1);
        let truth = inflate(e.scene.truth_grid(), 0.25);
        let s = e.grid.cell_of(c.start.position());
        let g = e.grid.cell_of(MetricPoint::new(2.0, 2.5));
        let best = plan_path(&truth, s, g).unwrap().length_m();
        assert!((r.driven_length - best).abs() <= 0.1 * std::f64::consts::SQRT_2 + 1e-9);
    }

    #[test]
    fn disabled_detection_visits_every_point() {
        let e = env(vec![WorldInstance::new("sink", 2.0, 2.5)]);
        let c = cfg(&e, &HeuristicBackend, "sink", DetectionProfile::disabled());
        let r = run_episode(&c, "t");
        assert!(!r.success);
        assert_eq!(r.visits.len(), r.plan_points.len());
        for v in &r.visits {
            let d = v.detection.as_ref().unwrap();
            assert!(!d.found);
            assert_eq!(d.views_used, 4);
        }
        let total: f64 = r.visits.iter().map(|v| v.leg_length).sum();
        assert_eq!(total, r.driven_length);
    }

    #[test]
    fn relocated_target_found_in_second_room() {
        // The sink was moved next to the lamp.
        let e = env(vec![WorldInstance::new("sink", 9.5, 3.0)]);
        let q = Query::object("sink");
        let mut b = ScriptedBackend::new();
        b.insert(
            &build_prompt(&e.map, &q, MapMode::Full),
            r#"{"rooms":[{"room_id":10,"nodes":[30]},{"room_id":11,"nodes":[31]}]}"#,
        );
        let c = cfg(&e, &b, "sink", DetectionProfile::perfect());
        let r = run_episode(&c, "t");
        assert!(r.success);
        assert_eq!(r.success_node, Some(31));
        assert!(!r.visits[0].detection.as_ref().unwrap().found);
        assert_eq!(r.ground_truth[0].areas, vec![11]);
    }

    #[test]
    fn failed_retrieval_visits_nothing() {
        let e = env(vec![]);
        let b = ScriptedBackend::new();
        let c = cfg(&e, &b, "sink", DetectionProfile::perfect());
        let r = run_episode(&c, "t");
        assert!(r.retrieval_error.is_some());
        assert!(r.visits.is_empty() && !r.success && r.driven_length == 0.0);
    }

    #[test]
    fn record_round_trips_and_is_reproducible() {
        let e = env(vec![WorldInstance::new("sink", 9.5, 3.0)]);
        let c = cfg(&e, &HeuristicBackend, "sink", DetectionProfile::default());
        let a = run_episode(&c, "t").to_json_line();
        let b = run_episode(&c, "t").to_json_line();
        assert_eq!(a, b);
        assert_eq!(EpisodeRecord::from_json_line(&a).unwrap().to_json_line(), a);
    }
}
