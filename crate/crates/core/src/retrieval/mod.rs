//! Object retrieval: prompt construction over a coordinate-free map view,
//! and parsing of the model's room-organized JSON plan.

pub mod heuristic;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{CompletionRequest, LlmError, TextBackend};
use crate::osmag::{NodeKind, SemanticMap};

pub const PROMPT_VERSION: &str = "v1";
pub const MAX_ROOMS: usize = 3;
pub const MAX_NODES_PER_ROOM: usize = 3;

pub const SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/v1/system.txt");
pub const TASK_TEMPLATE: &str = include_str!("../../assets/prompts/v1/task.txt");
pub const CORRECTIVE_TEMPLATE: &str = include_str!("../../assets/prompts/v1/corrective.txt");

pub const TASK_HEADER: &str = "### TASK";
pub const MAP_HEADER: &str = "### MAP";
pub const QUERY_HEADER: &str = "### QUERY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "o")]
    Object,
    #[serde(rename = "or")]
    ObjectRoom,
    #[serde(rename = "orf")]
    ObjectRoomFloor,
}

impl Granularity {
    pub fn label(self) -> &'static str {
        match self {
            Granularity::Object => "o",
            Granularity::ObjectRoom => "or",
            Granularity::ObjectRoomFloor => "orf",
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['(', ')', ',', ' '], "").as_str() {
            "o" => Ok(Self::Object),
            "or" => Ok(Self::ObjectRoom),
            "orf" => Ok(Self::ObjectRoomFloor),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

/// Static, relocated, or unmapped object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryCategory {
    SO,
    RO,
    UO,
}

impl std::str::FromStr for QueryCategory {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SO" => Ok(Self::SO),
            "RO" => Ok(Self::RO),
            "UO" => Ok(Self::UO),
            other => Err(format!("unknown query category {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query object is empty")]
    EmptyObject,
    #[error("a floor requires a room")]
    FloorWithoutRoom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<QueryCategory>,
}

impl Query {
    pub fn new(object: &str, room: Option<&str>, floor: Option<&str>) -> Result<Self, QueryError> {
        let q = Self {
            object: object.trim().to_string(),
            room: room.map(|r| r.trim().to_string()),
            floor: floor.map(|f| f.trim().to_string()),
            category: None,
        };
        q.check()?;
        Ok(q)
    }

    pub fn object(object: &str) -> Self {
        Self {
            object: object.trim().to_string(),
            room: None,
            floor: None,
            category: None,
        }
    }

    pub fn with_category(mut self, c: QueryCategory) -> Self {
        self.category = Some(c);
        self
    }

    pub fn check(&self) -> Result<(), QueryError> {
        if self.object.is_empty() {
            return Err(QueryError::EmptyObject);
        }
        if self.floor.is_some() && self.room.is_none() {
            return Err(QueryError::FloorWithoutRoom);
        }
        Ok(())
    }

    pub fn granularity(&self) -> Granularity {
        match (&self.room, &self.floor) {
            (Some(_), Some(_)) => Granularity::ObjectRoomFloor,
            (Some(_), None) => Granularity::ObjectRoom,
            _ => Granularity::Object,
        }
    }

    /// Natural-language form, e.g. `pillow in the living room on floor 0`.
    pub fn text(&self) -> String {
        let mut s = self.object.clone();
        if let Some(r) = &self.room {
            let _ = write!(s, " in the {r}");
        }
        if let Some(f) = &self.floor {
            let _ = write!(s, " on floor {f}");
        }
        s
    }

    /// Inverse of [`Query::text`].
    pub fn parse(text: &str) -> Result<Self, QueryError> {
        let text = text.trim();
        let (rest, floor) = match text.rsplit_once(" on floor ") {
            Some((a, f)) => (a, Some(f)),
            None => (text, None),
        };
        let (object, room) = match rest.split_once(" in the ") {
            Some((o, r)) => (o, Some(r)),
            None => (rest, None),
        };
        Self::new(object, room, floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    #[default]
    Full,
    RoomsOnly,
}

impl std::str::FromStr for MapMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "rooms_only" | "rooms-only" => Ok(Self::RoomsOnly),
            other => Err(format!("unknown map mode {other:?}")),
        }
    }
}

/// Coordinate-free indented hierarchy of areas and their semantic nodes.
pub fn simplify_map(map: &SemanticMap, mode: MapMode) -> String {
    let mut out = String::new();
    let roots: Vec<i64> = map
        .areas()
        .map(|a| a.id)
        .filter(|&id| map.area_parent(id).is_none_or(|p| p == id))
        .collect();
    let mut seen = BTreeSet::new();
    for root in roots {
        write_area(map, root, 0, mode, &mut seen, &mut out);
    }
    // Areas only reachable through a parent cycle.
    let rest: Vec<i64> = map.areas().map(|a| a.id).filter(|id| !seen.contains(id)).collect();
    for id in rest {
        write_area(map, id, 0, mode, &mut seen, &mut out);
    }
    out
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn write_area(map: &SemanticMap, id: i64, depth: usize, mode: MapMode, seen: &mut BTreeSet<i64>, out: &mut String) {
    if !seen.insert(id) {
        return;
    }
    let Some(area) = map.area(id) else { return };
    let pad = "  ".repeat(depth);
    let name = area.name().map(single_line).unwrap_or_else(|| "(unnamed)".into());
    let _ = write!(out, "{pad}- area {id}: {name}");
    if let Some(level) = area.level() {
        let _ = write!(out, " [level {}]", single_line(level));
    }
    out.push('\n');
    if let Some(d) = area.description() {
        let _ = writeln!(out, "{pad}  description: {}", single_line(d));
    }
    if mode == MapMode::Full {
        for n in map.semantic_children(id) {
            match n.kind() {
                NodeKind::Object(name) => {
                    let _ = writeln!(out, "{pad}  - object {}: {}", n.id, single_line(&name));
                }
                NodeKind::Viewpoint(list) => {
                    let list: Vec<String> = list.iter().map(|s| single_line(s)).collect();
                    let _ = writeln!(out, "{pad}  - viewpoint {}: {}", n.id, list.join("; "));
                }
                NodeKind::Plain => {}
            }
        }
    }
    for child in map.children(id) {
        write_area(map, child, depth + 1, mode, seen, out);
    }
}

/// Assembles the three-part retrieval prompt: representation explainer
/// (system text), then task, simplified map and query (user text).
pub fn build_prompt(map: &SemanticMap, query: &Query, mode: MapMode) -> CompletionRequest {
    let user = format!(
        "{TASK_HEADER}\n{}\n\n{MAP_HEADER}\n{}\n{QUERY_HEADER}\n{}\n",
        TASK_TEMPLATE.trim_end(),
        simplify_map(map, mode),
        query.text()
    );
    CompletionRequest::new(SYSTEM_TEMPLATE.trim_end(), user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRoom {
    pub area_id: i64,
    pub name: String,
    pub nodes: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    RoomLimit,
    NodeLimit,
    UnknownRoom,
    MalformedRoom,
    DuplicateRoom,
    UnknownNode,
    NotSemantic,
    ParentMismatch,
    DuplicateNode,
    MalformedNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDrop {
    pub reason: DropReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalPlan {
    pub rooms: Vec<PlanRoom>,
    pub drops: Vec<PlanDrop>,
    /// Reply text the plan was parsed from.
    pub raw: String,
}

impl RetrievalPlan {
    /// Room-major visit order.
    pub fn flatten(&self) -> Vec<(i64, i64)> {
        self.rooms
            .iter()
            .flat_map(|r| r.nodes.iter().map(move |n| (r.area_id, *n)))
            .collect()
    }

    pub fn node_ids(&self) -> Vec<i64> {
        self.flatten().into_iter().map(|(_, n)| n).collect()
    }

    pub fn top_room(&self) -> Option<i64> {
        self.rooms.first().map(|r| r.area_id)
    }

    /// Checks every structural invariant against `map`; returns the first
    /// broken rule.
    pub fn check(&self, map: &SemanticMap) -> Result<(), String> {
        if self.rooms.len() > MAX_ROOMS {
            return Err(format!("{} rooms", self.rooms.len()));
        }
        let mut rooms = BTreeSet::new();
        let mut nodes = BTreeSet::new();
        for r in &self.rooms {
            if map.area(r.area_id).is_none() {
                return Err(format!("room {} not in map", r.area_id));
            }
            if !rooms.insert(r.area_id) {
                return Err(format!("room {} repeated", r.area_id));
            }
            if r.nodes.len() > MAX_NODES_PER_ROOM {
                return Err(format!("room {} has {} nodes", r.area_id, r.nodes.len()));
            }
            for n in &r.nodes {
                if map.node(*n).is_none() {
                    return Err(format!("node {n} not in map"));
                }
                if map.node_parent(*n) != Some(r.area_id) {
                    return Err(format!("node {n} not in room {}", r.area_id));
                }
                if !nodes.insert(*n) {
                    return Err(format!("node {n} repeated"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("reply contains no JSON object")]
    NoJson,
    #[error("reply JSON yields no valid room")]
    PlanEmpty,
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// First parseable JSON object in `text`, tolerating prose and code fences.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            return Some(obj);
        }
    }
    None
}

fn as_id(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        Value::Object(o) => o.get("id").or_else(|| o.get("node_id")).and_then(as_id),
        _ => None,
    }
}

/// Parses and sanitizes a model reply against `map`.
///
/// Invalid entries are dropped (and recorded) before the room and node
/// limits are applied, so a fabricated entry never displaces a real one.
pub fn parse_plan(text: &str, map: &SemanticMap) -> Result<RetrievalPlan, RetrievalError> {
    let obj = extract_json_object(text).ok_or(RetrievalError::NoJson)?;
    let entries = obj.get("rooms").and_then(Value::as_array).cloned().unwrap_or_default();

    let mut drops = Vec::new();
    let mut rooms: Vec<PlanRoom> = Vec::new();
    let mut used_nodes = BTreeSet::new();
    for entry in &entries {
        let room_id = entry.get("room_id").or_else(|| entry.get("id")).and_then(as_id);
        let Some(room_id) = room_id else {
            drops.push(PlanDrop {
                reason: DropReason::MalformedRoom,
                room_id: None,
                node_id: None,
            });
            continue;
        };
        let drop_room = |reason| PlanDrop {
            reason,
            room_id: Some(room_id),
            node_id: None,
        };
        let Some(area) = map.area(room_id) else {
            drops.push(drop_room(DropReason::UnknownRoom));
            continue;
        };
        if rooms.iter().any(|r| r.area_id == room_id) {
            drops.push(drop_room(DropReason::DuplicateRoom));
            continue;
        }
        if rooms.len() == MAX_ROOMS {
            drops.push(drop_room(DropReason::RoomLimit));
            continue;
        }
        let mut nodes = Vec::new();
        let raw_nodes = entry
            .get("nodes")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for raw in &raw_nodes {
            let drop_node = |reason, node_id| PlanDrop {
                reason,
                room_id: Some(room_id),
                node_id,
            };
            let Some(nid) = as_id(raw) else {
                drops.push(drop_node(DropReason::MalformedNode, None));
                continue;
            };
            let reason = match map.node(nid) {
                None => Some(DropReason::UnknownNode),
                Some(n) if !n.is_semantic() => Some(DropReason::NotSemantic),
                Some(_) if map.node_parent(nid) != Some(room_id) => Some(DropReason::ParentMismatch),
                Some(_) if used_nodes.contains(&nid) => Some(DropReason::DuplicateNode),
                Some(_) if nodes.len() == MAX_NODES_PER_ROOM => Some(DropReason::NodeLimit),
                Some(_) => None,
            };
            match reason {
                Some(r) => drops.push(drop_node(r, Some(nid))),
                None => {
                    used_nodes.insert(nid);
                    nodes.push(nid);
                }
            }
        }
        rooms.push(PlanRoom {
            area_id: room_id,
            name: area.display_name(),
            nodes,
        });
    }
    if rooms.is_empty() {
        return Err(RetrievalError::PlanEmpty);
    }
    Ok(RetrievalPlan {
        rooms,
        drops,
        raw: text.to_string(),
    })
}

/// Prompt, complete, parse; one corrective retry when the reply is unusable.
pub fn retrieve(
    map: &SemanticMap,
    query: &Query,
    backend: &dyn TextBackend,
    mode: MapMode,
) -> Result<RetrievalPlan, RetrievalError> {
    let req = build_prompt(map, query, mode);
    let reply = backend.complete(&req)?;
    match parse_plan(&reply, map) {
        Ok(plan) => Ok(plan),
        Err(first @ (RetrievalError::NoJson | RetrievalError::PlanEmpty)) => {
            log::info!("retrying retrieval after unusable reply: {first}");
            let mut retry = req.clone();
            retry.user_text.push('\n');
            retry
                .user_text
                .push_str(&CORRECTIVE_TEMPLATE.replace("{reason}", &first.to_string()));
            let reply = backend.complete(&retry)?;
            parse_plan(&reply, map)
        }
        Err(e) => Err(e),
    }
}
