//! Independent oracles and generators shared by the integration and
//! acceptance tests. Nothing here calls the code it is used to check.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use osmag_nav::detection::DetectionOutcome;
use osmag_nav::episode::{GroundTruth, NodeVisit, PlanPoint};
use osmag_nav::grid::{Cell, CellState};
use osmag_nav::llm::{BackendKind, LlmError};
use osmag_nav::retrieval::{PlanRoom, RetrievalPlan};
use osmag_nav::{
    CompletionRequest, EpisodeRecord, Granularity, MapMode, MetricPoint, OccupancyGrid, Pose, Query, SemanticMap,
    TextBackend,
};
use rand::seq::IndexedRandom;
use rand::Rng;

// ---------------------------------------------------------------- planning

pub fn random_grid(rng: &mut impl Rng, side: usize, density: f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(1.0, MetricPoint::new(0.0, 0.0), side, side).unwrap();
    for y in 0..side as i32 {
        for x in 0..side as i32 {
            if rng.random_bool(density) {
                g.set(Cell { x, y }, CellState::Occupied);
            }
        }
    }
    g
}

fn passable(g: &OccupancyGrid, x: i32, y: i32) -> bool {
    x >= 0
        && y >= 0
        && (x as usize) < g.width()
        && (y as usize) < g.height()
        && g.get(Cell { x, y }) != Some(CellState::Occupied)
}

/// Cost key ordered by its real value; distinct (straight, diagonal) pairs
/// never tie because sqrt 2 is irrational.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Steps(pub u32, pub u32);

impl Steps {
    pub fn value(self) -> f64 {
        self.0 as f64 + self.1 as f64 * std::f64::consts::SQRT_2
    }
}

impl Ord for Steps {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.value().total_cmp(&o.value())
    }
}

impl PartialOrd for Steps {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

/// Plain Dijkstra with the same move rules: 8 neighbours, and a diagonal is
/// refused only when both orthogonal cells beside it are blocked.
pub fn dijkstra(g: &OccupancyGrid, start: Cell, goal: Cell) -> Option<Steps> {
    if !passable(g, start.x, start.y) || !passable(g, goal.x, goal.y) {
        return None;
    }
    let w = g.width();
    let idx = |x: i32, y: i32| y as usize * w + x as usize;
    let mut dist: Vec<Option<Steps>> = vec![None; w * g.height()];
    let mut heap = BinaryHeap::new();
    dist[idx(start.x, start.y)] = Some(Steps(0, 0));
    heap.push(Reverse((Steps(0, 0), start.x, start.y)));
    while let Some(Reverse((d, x, y))) = heap.pop() {
        if dist[idx(x, y)] != Some(d) {
            continue;
        }
        if (x, y) == (goal.x, goal.y) {
            return Some(d);
        }
        for dx in -1..=1 {
            for dy in -1..=1 {
                if (dx, dy) == (0, 0) || !passable(g, x + dx, y + dy) {
                    continue;
                }
                let diagonal = dx != 0 && dy != 0;
                if diagonal && !passable(g, x + dx, y) && !passable(g, x, y + dy) {
                    continue;
                }
                let nd = if diagonal {
                    Steps(d.0, d.1 + 1)
                } else {
                    Steps(d.0 + 1, d.1)
                };
                let slot = &mut dist[idx(x + dx, y + dy)];
                if slot.is_none_or(|old| nd < old) {
                    *slot = Some(nd);
                    heap.push(Reverse((nd, x + dx, y + dy)));
                }
            }
        }
    }
    None
}

// ---------------------------------------------------------------- retrieval

/// Every structural rule a plan must satisfy, checked from scratch.
pub fn plan_violations(map: &SemanticMap, plan: &RetrievalPlan) -> Vec<String> {
    let mut out = Vec::new();
    if plan.rooms.is_empty() {
        out.push("no rooms".into());
    }
    if plan.rooms.len() > 3 {
        out.push(format!("{} rooms", plan.rooms.len()));
    }
    let mut seen_rooms = BTreeSet::new();
    let mut seen_nodes = BTreeSet::new();
    for r in &plan.rooms {
        if map.area(r.area_id).is_none() {
            out.push(format!("room {} does not exist", r.area_id));
        }
        if !seen_rooms.insert(r.area_id) {
            out.push(format!("room {} repeated", r.area_id));
        }
        if r.nodes.len() > 3 {
            out.push(format!("room {} has {} nodes", r.area_id, r.nodes.len()));
        }
        for n in &r.nodes {
            match map.node(*n) {
                None => out.push(format!("node {n} does not exist")),
                Some(node) => {
                    let parent = node.tags.get("parent").and_then(|p| map.resolve_area(p));
                    if parent != Some(r.area_id) {
                        out.push(format!("node {n} is not in room {}", r.area_id));
                    }
                    if !node.tags.contains_key("semantic_osmAG:object_name")
                        && !node.tags.contains_key("semantic_osmAG:observed_object")
                    {
                        out.push(format!("node {n} is not semantic"));
                    }
                }
            }
            if !seen_nodes.insert(*n) {
                out.push(format!("node {n} repeated"));
            }
        }
    }
    // Visiting order must not come back to a room once it has moved on.
    let order: Vec<i64> = plan.flatten().into_iter().map(|(room, _)| room).collect();
    let mut closed = BTreeSet::new();
    for w in order.windows(2) {
        if w[0] != w[1] && !closed.insert(w[0]) {
            out.push(format!("room {} revisited", w[0]));
        }
        if closed.contains(&w[1]) {
            out.push(format!("room {} revisited", w[1]));
        }
    }
    out
}

/// LLM-style replies meant to break the plan parser: fabricated ids, extra
/// rooms, nodes filed under the wrong room, junk types and broken JSON.
pub fn adversarial_reply(rng: &mut impl Rng, map: &SemanticMap) -> String {
    let areas: Vec<i64> = map.areas().map(|a| a.id).collect();
    let nodes: Vec<i64> = map.nodes().map(|n| n.id).collect();
    let any_id = |rng: &mut dyn rand::RngCore| -> serde_json::Value {
        match rng.random_range(0..10) {
            0..=3 => (*nodes.choose(rng).unwrap()).into(),
            4 => (*areas.choose(rng).unwrap()).into(),
            5 => rng.random_range(-5..100_000i64).into(),
            6 => format!("{}", nodes.choose(rng).unwrap()).into(),
            7 => 1.5.into(),
            8 => serde_json::Value::Null,
            _ => serde_json::json!({ "id": nodes.choose(rng).unwrap() }),
        }
    };
    let room_count = rng.random_range(0..8);
    let mut rooms = Vec::new();
    for _ in 0..room_count {
        let room_id: serde_json::Value = match rng.random_range(0..8) {
            0..=4 => (*areas.choose(rng).unwrap()).into(),
            5 => rng.random_range(-3..5000i64).into(),
            6 => format!("{}", areas.choose(rng).unwrap()).into(),
            _ => "kitchen".into(),
        };
        let node_count = rng.random_range(0..7);
        let ids: Vec<serde_json::Value> = (0..node_count).map(|_| any_id(rng)).collect();
        let mut room = serde_json::json!({ "room_id": room_id, "room_name": "somewhere", "nodes": ids });
        match rng.random_range(0..12) {
            0 => {
                room.as_object_mut().unwrap().remove("nodes");
            }
            1 => room["nodes"] = serde_json::json!("1, 2, 3"),
            2 => {
                room.as_object_mut().unwrap().remove("room_id");
            }
            _ => {}
        }
        rooms.push(room);
    }
    let body = match rng.random_range(0..10) {
        0 => serde_json::json!({ "rooms": "none" }),
        1 => serde_json::json!({ "answer": rooms }),
        2 => serde_json::json!(rooms),
        _ => serde_json::json!({ "rooms": rooms }),
    };
    let mut text = serde_json::to_string(&body).unwrap();
    match rng.random_range(0..10) {
        0 => text.truncate(rng.random_range(0..=text.len())),
        1 => text = text.replace('"', "'"),
        2 => text = format!("Sure! Here is the plan:\n```json\n{text}\n```\nGood luck."),
        3 => text = format!("{{ broken {text}"),
        4 => text = format!("{text} and also {{\"rooms\": []}}"),
        5 => text = "I cannot help with that.".into(),
        _ => {}
    }
    text
}

/// Replies with a fixed text whatever the prompt.
pub struct FixedReply(pub String);

impl TextBackend for FixedReply {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, _req: &CompletionRequest) -> Result<String, LlmError> {
        Ok(self.0.clone())
    }
}

// ---------------------------------------------------------------- metrics

/// Synthetic records: random ground truth, plan points and outcomes,
/// including empty plans and queries with no instance at all.
pub fn random_records(rng: &mut impl Rng, count: usize) -> Vec<EpisodeRecord> {
    (0..count)
        .map(|i| {
            let gt: Vec<GroundTruth> = (0..rng.random_range(0..3))
                .map(|j| GroundTruth {
                    instance: j,
                    position: MetricPoint::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
                    areas: vec![rng.random_range(1..4)],
                })
                .collect();
            let empty = rng.random_bool(0.1);
            let n_points = if empty { 0 } else { rng.random_range(1..10) };
            let near = |rng: &mut dyn rand::RngCore, gt: &[GroundTruth]| match gt.choose(rng) {
                Some(g) if rng.random_bool(0.5) => MetricPoint::new(
                    g.position.x + rng.random_range(-2.5..2.5),
                    g.position.y + rng.random_range(-2.5..2.5),
                ),
                _ => MetricPoint::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
            };
            let plan_points: Vec<PlanPoint> = (0..n_points)
                .map(|k| PlanPoint {
                    room_id: 1 + (k / 3) as i64,
                    node_id: Some(100 + k as i64),
                    position: near(rng, &gt),
                    distance_to_gt: None,
                })
                .collect();
            let plan = (!empty).then(|| RetrievalPlan {
                rooms: vec![PlanRoom {
                    area_id: rng.random_range(1..4),
                    name: String::new(),
                    nodes: vec![],
                }],
                drops: vec![],
                raw: String::new(),
            });
            let success_point =
                (!empty && !gt.is_empty() && rng.random_bool(0.5)).then(|| rng.random_range(0..n_points));
            let visits: Vec<NodeVisit> = (0..success_point.map_or(n_points, |s| s + 1))
                .map(|k| NodeVisit {
                    point: k,
                    reached: true,
                    nav_failure: None,
                    leg_length: 1.0,
                    replans: 0,
                    detection: Some(DetectionOutcome {
                        found: Some(k) == success_point,
                        matched_instance: (Some(k) == success_point).then_some(0),
                        views_used: 1,
                        is_true_positive: Some(k) == success_point,
                        trace: vec![],
                    }),
                })
                .collect();
            EpisodeRecord {
                episode_id: format!("e{i}"),
                query: Query::object("thing"),
                granularity: Granularity::Object,
                map_mode: MapMode::Full,
                seed: i as u64,
                start: Pose::new(0.0, 0.0, 0.0),
                plan,
                retrieval_error: None,
                plan_points,
                visits,
                driven_length: rng.random_range(0.0..40.0),
                success: success_point.is_some(),
                success_point,
                success_node: success_point.map(|k| 100 + k as i64),
                ground_truth: gt,
            }
        })
        .collect()
}

/// Brute-force metric values, computed straight from record fields.
#[derive(Debug, PartialEq)]
pub struct Expected {
    pub r_rsr: f64,
    pub o_rsr: Vec<(usize, f64, f64)>,
    pub amd: Option<f64>,
    pub amd_excluded: usize,
    pub apl: Option<f64>,
    pub dir_all: f64,
    pub dir_failed: f64,
}

fn closest(r: &EpisodeRecord, take: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for p in r.plan_points.iter().take(take) {
        for g in &r.ground_truth {
            let d = p.position.distance(&g.position);
            if best.is_none_or(|b| d < b) {
                best = Some(d);
            }
        }
    }
    best
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn expected(records: &[EpisodeRecord], ns: &[usize], ks: &[f64], radius: f64) -> Expected {
    let total = records.len();
    let mut room_hits = 0;
    for r in records {
        if let Some(top) = r.plan.as_ref().and_then(|p| p.rooms.first()) {
            if r.ground_truth.iter().any(|g| g.areas.contains(&top.area_id)) {
                room_hits += 1;
            }
        }
    }
    let mut o_rsr = Vec::new();
    for &n in ns {
        for &k in ks {
            let hits = records
                .iter()
                .filter(|r| matches!(closest(r, n), Some(d) if d <= k))
                .count();
            o_rsr.push((n, k, frac(hits, total)));
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for r in records {
        if let Some(d) = closest(r, 5) {
            sum += d;
            count += 1;
        }
    }
    let amd = (count > 0).then(|| sum / count as f64);
    let (mut psum, mut pcount) = (0.0, 0usize);
    for r in records {
        let Some(i) = r.success_point else { continue };
        if !r.success {
            continue;
        }
        let p = r.plan_points[i].position;
        if r.ground_truth.iter().any(|g| p.distance(&g.position) <= radius) {
            psum += r.driven_length;
            pcount += 1;
        }
    }
    let apl = (pcount > 0).then(|| psum / pcount as f64);
    let failed: Vec<&EpisodeRecord> = records
        .iter()
        .filter(|r| closest(r, 5).is_none_or(|d| d > 1.0))
        .collect();
    let recovered = failed.iter().filter(|r| r.success).count();
    Expected {
        r_rsr: frac(room_hits, total),
        o_rsr,
        amd,
        amd_excluded: total - count,
        apl,
        dir_all: frac(recovered, total),
        dir_failed: frac(recovered, failed.len()),
    }
}
