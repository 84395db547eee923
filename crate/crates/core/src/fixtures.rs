//! Packaged fixtures: a five-room office floor with mapping records and a
//! world, a small scene for replanning, and a catalog of maps for format
//! tests. The same content ships as files under `assets/fixtures`.

use crate::detection::DetectionProfile;
use crate::enrichment::{ingest, IngestOptions, InstanceRecord, RecordsFile, RoomDescriptionRecord, ViewpointRecord};
use crate::eval::{BackendSpec, ExperimentConfig, MetricsConfig, ProfileSpec, SuiteSpec};
use crate::geo::{GeoPoint, MetricPoint};
use crate::grid::NavConfig;
use crate::grid::{Obstacle, Pose, SensorConfig, WorldInstance, WorldModel};
use crate::osmag::{
    serialize_osmag, Area, MapNode, Passage, SemanticMap, KEY_AREA_TYPE, KEY_LEVEL, KEY_NAME, KEY_OBJECT_NAME,
    KEY_OBSERVED_OBJECT, KEY_PARENT, KEY_ROOM_DESCRIPTION,
};
use crate::retrieval::{Granularity, MapMode, QueryCategory};

pub const FIXTURE_ORIGIN: GeoPoint = GeoPoint { lat: 31.0, lon: 121.0 };

pub const CONFERENCE_ROOM: i64 = 1;
pub const STUDENT_OFFICE: i64 = 2;
pub const PROFESSOR_OFFICE: i64 = 3;
pub const ROBOTICS_LAB: i64 = 4;
pub const LOUNGE: i64 = 5;

/// Builds maps in metres: geometry nodes are numbered from 1000 upward.
struct Builder {
    map: SemanticMap,
    next: i64,
}

impl Builder {
    fn new(origin: GeoPoint) -> Self {
        Self {
            map: SemanticMap::new(origin),
            next: 1000,
        }
    }

    fn point(&mut self, x: f64, y: f64) -> i64 {
        let p = MetricPoint::new(x, y);
        if let Some(n) = self
            .map
            .nodes()
            .find(|n| self.map.to_metric(n.position).is_ok_and(|q| q.distance(&p) < 1e-6))
        {
            return n.id;
        }
        let id = self.next;
        self.next += 1;
        let g = self.map.to_geo(p).expect("fixture points project");
        self.map.insert_node(MapNode::new(id, g)).expect("fresh id");
        id
    }

    fn area(&mut self, id: i64, corners: &[(f64, f64)], tags: &[(&str, &str)]) {
        let ids: Vec<i64> = corners.iter().map(|&(x, y)| self.point(x, y)).collect();
        let mut a = Area::new(id, &ids);
        for (k, v) in tags {
            a = a.with_tag(*k, *v);
        }
        self.map.insert_area(a).expect("fresh area id");
    }

    fn rect(&mut self, id: i64, x0: f64, y0: f64, x1: f64, y1: f64, tags: &[(&str, &str)]) {
        self.area(id, &[(x0, y0), (x1, y0), (x1, y1), (x0, y1)], tags);
    }

    fn door(&mut self, id: i64, a: (f64, f64), b: (f64, f64), from: i64, to: i64) {
        let s = [self.point(a.0, a.1), self.point(b.0, b.1)];
        self.map
            .insert_passage(Passage::new(id, &s, from, to))
            .expect("fresh passage id");
    }

    fn tagged(&mut self, x: f64, y: f64, tags: &[(&str, &str)]) -> i64 {
        let id = self.next;
        self.next += 1;
        let g = self.map.to_geo(MetricPoint::new(x, y)).expect("fixture points project");
        let mut n = MapNode::new(id, g);
        for (k, v) in tags {
            n = n.with_tag(*k, *v);
        }
        self.map.insert_node(n).expect("fresh id");
        id
    }
}

fn room(name: &str) -> Vec<(&str, &str)> {
    vec![(KEY_NAME, name), (KEY_AREA_TYPE, "room"), (KEY_LEVEL, "1")]
}

/// Five rooms on one floor, 29 m x 16 m, with a door between each pair of
/// neighbours that share a wall. No semantic content.
pub fn five_room_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(CONFERENCE_ROOM, 0.0, 8.0, 6.0, 16.0, &room("conference room"));
    b.rect(STUDENT_OFFICE, 6.0, 8.0, 24.0, 16.0, &room("student office"));
    b.rect(PROFESSOR_OFFICE, 0.0, 4.0, 4.0, 8.0, &room("professor office"));
    b.rect(ROBOTICS_LAB, 4.0, 0.0, 19.0, 8.0, &room("robotics lab"));
    b.rect(LOUNGE, 19.0, 0.0, 29.0, 8.0, &room("lounge"));
    b.door(101, (6.0, 11.0), (6.0, 12.0), CONFERENCE_ROOM, STUDENT_OFFICE);
    b.door(102, (1.5, 8.0), (2.5, 8.0), CONFERENCE_ROOM, PROFESSOR_OFFICE);
    b.door(103, (10.0, 8.0), (11.0, 8.0), STUDENT_OFFICE, ROBOTICS_LAB);
    b.door(104, (21.0, 8.0), (22.0, 8.0), STUDENT_OFFICE, LOUNGE);
    b.door(105, (4.0, 5.5), (4.0, 6.5), PROFESSOR_OFFICE, ROBOTICS_LAB);
    b.door(106, (19.0, 3.5), (19.0, 4.5), ROBOTICS_LAB, LOUNGE);
    b.map
}

fn inst(label: &str, x: f64, y: f64) -> InstanceRecord {
    InstanceRecord {
        label: label.into(),
        centroid: MetricPoint::new(x, y),
        source: "mapping run".into(),
    }
}

fn view(x: f64, y: f64, heading: f64, observed: &[&str]) -> ViewpointRecord {
    ViewpointRecord {
        capture_pose: MetricPoint::new(x, y),
        heading_deg: heading,
        observed: observed.iter().map(|s| s.to_string()).collect(),
    }
}

fn describe(area_id: i64, lines: &[&str]) -> RoomDescriptionRecord {
    RoomDescriptionRecord {
        area_id,
        descriptions: lines.iter().map(|s| s.to_string()).collect(),
    }
}

/// What a mapping run of the five-room floor produced: instance centroids,
/// captioned viewpoints and per-room image descriptions. Some objects were
/// missed by instance segmentation and only show up in descriptions.
pub fn five_room_records() -> RecordsFile {
    RecordsFile {
        instances: vec![
            inst("conference table", 3.0, 12.0),
            inst("projector", 3.0, 11.2),
            inst("laptop", 2.2, 11.1),
            inst("whiteboard", 3.0, 15.8),
            inst("desk", 10.0, 13.6),
            inst("desk", 16.0, 13.6),
            inst("desk", 16.0, 10.1),
            inst("monitor", 10.0, 14.0),
            inst("monitor", 16.0, 14.0),
            inst("coffee mug", 9.0, 13.1),
            inst("printer", 23.1, 15.1),
            inst("backpack", 15.0, 12.6),
            inst("bookshelf", 2.5, 4.3),
            inst("desk", 3.35, 7.35),
            inst("armchair", 1.0, 6.0),
            inst("workbench", 9.5, 2.6),
            inst("toolbox", 8.0, 3.1),
            inst("robot arm", 15.2, 6.2),
            inst("robot dog", 11.0, 6.8),
            inst("sofa", 26.0, 0.8),
            inst("refrigerator", 19.8, 7.1),
            inst("sink", 28.3, 6.8),
            inst("coffee machine", 28.3, 4.0),
            inst("microwave", 28.3, 7.4),
        ],
        viewpoints: vec![
            view(1.0, 9.0, 45.0, &["conference table", "projector", "chair"]),
            view(5.0, 15.0, 225.0, &["whiteboard", "conference table", "laptop"]),
            view(7.5, 11.5, 0.0, &["desk", "monitor", "coffee mug"]),
            view(16.0, 12.0, 0.0, &["desk", "monitor", "backpack"]),
            view(21.5, 12.0, 45.0, &["printer", "desk"]),
            view(3.0, 5.5, 135.0, &["bookshelf", "desk", "armchair"]),
            view(6.0, 5.0, 0.0, &["workbench", "toolbox", "robot dog"]),
            view(13.0, 4.5, 0.0, &["robot arm", "workbench"]),
            view(17.5, 2.0, 90.0, &["robot arm"]),
            view(21.0, 2.0, 45.0, &["sofa", "refrigerator", "coffee machine"]),
            view(24.5, 5.5, 0.0, &["sink", "microwave", "coffee machine"]),
        ],
        room_descriptions: vec![
            describe(
                CONFERENCE_ROOM,
                &[
                    "A meeting room with a long conference table, office chairs and a ceiling projector.",
                    "A whiteboard covers the north wall and a laptop sits on the table.",
                ],
            ),
            describe(
                STUDENT_OFFICE,
                &[
                    "An open office with rows of student desks, monitors and office chairs.",
                    "A printer stands in the corner; coffee mugs and backpacks sit on the desks.",
                ],
            ),
            describe(
                PROFESSOR_OFFICE,
                &[
                    "A small private office with a desk, an armchair and a tall bookshelf.",
                    "An umbrella leans against the wall near the armchair.",
                ],
            ),
            describe(
                ROBOTICS_LAB,
                &[
                    "A workshop with a long workbench, a robot arm and a quadruped robot dog.",
                    "A toolbox lies on the bench and a red fire extinguisher hangs on the wall by the lounge door.",
                ],
            ),
            describe(
                LOUNGE,
                &[
                    "A kitchenette with a sink, refrigerator, microwave and coffee machine.",
                    "A sofa faces the window; an electric kettle and a few mugs sit on the counter.",
                ],
            ),
        ],
    }
}

/// The five-room map after ingesting [`five_room_records`] with the null
/// summarizer.
pub fn five_room_enriched() -> SemanticMap {
    let (map, report) = ingest(&five_room_map(), &five_room_records(), None, IngestOptions::default())
        .expect("fixture records are well formed");
    debug_assert!(report.skips.is_empty(), "{:?}", report.skips);
    map
}

/// The floor as it is now: furniture the map does not show, and the twelve
/// objects queried by the demo. Projector, sink and friends are where they
/// were mapped; the toolbox, laptop and a coffee mug have moved; kettle,
/// umbrella and fire extinguisher were never mapped as objects.
pub fn five_room_world() -> WorldModel {
    WorldModel {
        obstacles: vec![
            Obstacle::rect(2.0, 11.0, 4.0, 13.0),
            Obstacle::rect(4.4, 9.0, 5.2, 9.8),
            Obstacle::rect(8.0, 13.0, 12.0, 14.2),
            Obstacle::rect(14.0, 13.0, 18.0, 14.2),
            Obstacle::rect(14.0, 9.5, 18.0, 10.7),
            Obstacle::rect(22.5, 14.5, 23.8, 15.8),
            Obstacle::rect(1.0, 4.0, 3.5, 4.6),
            Obstacle::rect(2.8, 6.8, 3.9, 7.9),
            Obstacle::rect(7.0, 2.0, 12.0, 3.2),
            Obstacle::rect(14.5, 5.7, 16.0, 6.7),
            Obstacle::rect(24.0, 0.3, 28.0, 1.3),
            Obstacle::rect(23.8, 2.0, 25.2, 3.0),
            Obstacle::rect(27.8, 3.0, 28.9, 7.8),
            Obstacle::rect(19.3, 6.5, 20.3, 7.7),
        ],
        instances: vec![
            WorldInstance::new("projector", 3.0, 11.2),
            WorldInstance::new("printer", 23.1, 15.1),
            WorldInstance::new("bookshelf", 2.5, 4.3),
            WorldInstance::new("robot arm", 15.2, 6.2),
            WorldInstance::new("refrigerator", 19.8, 7.1),
            WorldInstance::new("sink", 28.3, 6.8),
            WorldInstance::new("laptop", 4.8, 9.4),
            WorldInstance::new("toolbox", 11.0, 4.7),
            WorldInstance::new("coffee mug", 24.5, 2.5),
            WorldInstance::new("kettle", 28.3, 5.0),
            WorldInstance::new("umbrella", 0.3, 6.5),
            WorldInstance::new("fire extinguisher", 18.7, 0.4),
        ],
        sensor: SensorConfig::default(),
        include_map_walls: true,
        starts: Vec::new(),
    }
}

/// Proposes every visible target and verifies perfectly; spurious boxes
/// still appear and are always rejected.
pub fn near_perfect_profile() -> DetectionProfile {
    DetectionProfile {
        p_propose_tp: 1.0,
        fp_rate: 0.3,
        p_verify_tp: 1.0,
        p_verify_fp: 0.0,
        ..DetectionProfile::default()
    }
}

/// Two rooms joined by a door; a couch the map does not know about stands
/// across the direct route from start to goal.
pub fn replanning_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(1, 0.0, 0.0, 10.0, 6.0, &room("living room"));
    b.rect(2, 10.0, 0.0, 16.0, 6.0, &room("kitchen"));
    b.door(101, (10.0, 2.5), (10.0, 3.5), 1, 2);
    b.map
}

pub fn replanning_world() -> WorldModel {
    WorldModel {
        obstacles: vec![Obstacle::rect(4.5, 1.2, 5.5, 6.0)],
        instances: vec![WorldInstance::new("pillow", 5.0, 3.0)],
        starts: vec![Pose::new(1.05, 3.05, 0.0)],
        ..WorldModel::default()
    }
}

pub const REPLANNING_GOAL: MetricPoint = MetricPoint { x: 14.05, y: 3.05 };

fn nested_floor_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(
        1,
        0.0,
        0.0,
        20.0,
        10.0,
        &[(KEY_NAME, "floor 0"), (KEY_AREA_TYPE, "floor"), (KEY_LEVEL, "0")],
    );
    b.rect(2, 0.0, 0.0, 8.0, 10.0, &[(KEY_NAME, "living room"), (KEY_PARENT, "1")]);
    b.rect(
        3,
        8.0,
        0.0,
        20.0,
        10.0,
        &[(KEY_NAME, "kitchen"), (KEY_PARENT, "floor 0")],
    );
    b.door(101, (8.0, 4.0), (8.0, 5.0), 2, 3);
    b.tagged(2.0, 2.0, &[(KEY_OBJECT_NAME, "pillow"), (KEY_PARENT, "2")]);
    b.tagged(
        12.0,
        6.0,
        &[(KEY_OBSERVED_OBJECT, "stove;kettle"), (KEY_PARENT, "kitchen")],
    );
    b.map
}

fn two_floor_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(1, 0.0, 0.0, 10.0, 10.0, &[(KEY_NAME, "ground floor"), (KEY_LEVEL, "0")]);
    b.rect(
        2,
        100.0,
        0.0,
        110.0,
        10.0,
        &[(KEY_NAME, "first floor"), (KEY_LEVEL, "1")],
    );
    b.rect(3, 1.0, 1.0, 5.0, 5.0, &[(KEY_NAME, "hall"), (KEY_PARENT, "1")]);
    b.rect(4, 101.0, 1.0, 105.0, 5.0, &[(KEY_NAME, "study"), (KEY_PARENT, "2")]);
    b.tagged(102.0, 2.0, &[(KEY_OBJECT_NAME, "lamp"), (KEY_PARENT, "4")]);
    b.map
}

fn escaping_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(
        1,
        0.0,
        0.0,
        5.0,
        5.0,
        &[
            (KEY_NAME, "R&D \"lab\" <east>"),
            (
                KEY_ROOM_DESCRIPTION,
                "Café corner, 30% shelves & a 'kettle', naïve ünïcode",
            ),
        ],
    );
    b.tagged(
        1.0,
        1.0,
        &[(KEY_OBJECT_NAME, "mug <blue> & \"tall\""), (KEY_PARENT, "1")],
    );
    b.map
}

fn polyline_passage_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(
        1,
        0.0,
        0.0,
        6.0,
        6.0,
        &[(KEY_NAME, "west"), ("building", "A"), ("note", "keeps unknown tags")],
    );
    b.rect(2, 6.0, 0.0, 12.0, 6.0, &[(KEY_NAME, "east")]);
    let s = [b.point(6.0, 1.0), b.point(6.0, 2.0), b.point(6.0, 3.0)];
    b.map
        .insert_passage(Passage::new(101, &s, 1, 2).with_tag("width", "2.0"))
        .expect("fresh passage id");
    b.map
}

fn southern_map() -> SemanticMap {
    let mut b = Builder::new(GeoPoint::new(-33.8688, 151.2093));
    b.rect(1, -10.0, -10.0, 10.0, 10.0, &[(KEY_NAME, "atrium")]);
    b.tagged(-5.0, -5.0, &[(KEY_OBJECT_NAME, "bench"), (KEY_PARENT, "atrium")]);
    b.map
}

fn dense_objects_map() -> SemanticMap {
    let mut b = Builder::new(FIXTURE_ORIGIN);
    b.rect(1, 0.0, 0.0, 30.0, 30.0, &[(KEY_NAME, "warehouse")]);
    for i in 0..60 {
        let (x, y) = (1.0 + (i % 10) as f64 * 2.9, 1.0 + (i / 10) as f64 * 4.5);
        b.tagged(x, y, &[(KEY_OBJECT_NAME, &format!("crate {i}")), (KEY_PARENT, "1")]);
    }
    b.map
}

/// Ten maps exercising the format: hierarchy, levels, escaping, polyline
/// passages, unknown tags, both hemispheres, and the empty map.
pub fn catalog() -> Vec<(&'static str, SemanticMap)> {
    vec![
        ("five_room", five_room_map()),
        ("five_room_enriched", five_room_enriched()),
        ("replanning", replanning_map()),
        ("nested_floor", nested_floor_map()),
        ("two_floors", two_floor_map()),
        ("escaping", escaping_map()),
        ("polyline_passage", polyline_passage_map()),
        ("southern", southern_map()),
        ("dense_objects", dense_objects_map()),
        ("empty", SemanticMap::new(FIXTURE_ORIGIN)),
    ]
}

/// File name and content of every shipped fixture file.
pub fn asset_files() -> Vec<(&'static str, String)> {
    vec![
        ("five_room.osm", serialize_osmag(&five_room_map())),
        ("five_room_records.json", json(&five_room_records())),
        ("five_room_enriched.osm", serialize_osmag(&five_room_enriched())),
        ("five_room_world.json", json(&five_room_world())),
        ("near_perfect_profile.json", json(&near_perfect_profile())),
        ("replanning.osm", serialize_osmag(&replanning_map())),
        ("replanning_world.json", json(&replanning_world())),
        ("five_room_experiment.json", json(&five_room_experiment())),
    ]
}

/// Config equivalent to the "full" demo run, pointing at the shipped files.
pub fn five_room_experiment() -> ExperimentConfig {
    let suites = [
        Granularity::Object,
        Granularity::ObjectRoom,
        Granularity::ObjectRoomFloor,
    ]
    .into_iter()
    .flat_map(|granularity| {
        [QueryCategory::SO, QueryCategory::RO, QueryCategory::UO].map(|category| SuiteSpec { granularity, category })
    })
    .collect();
    ExperimentConfig {
        map: "five_room_enriched.osm".into(),
        world: "five_room_world.json".into(),
        backend: BackendSpec::Heuristic,
        profile: Some(ProfileSpec::Path("near_perfect_profile.json".into())),
        proposals: None,
        suites,
        queries: Vec::new(),
        starts: crate::eval::DEMO_STARTS,
        seed: 7,
        map_mode: MapMode::Full,
        resolution: crate::grid::DEFAULT_RESOLUTION_M,
        nav: NavConfig::default(),
        metrics: MetricsConfig::default(),
        compare_sizes: Vec::new(),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("fixtures serialize") + "\n"
}
