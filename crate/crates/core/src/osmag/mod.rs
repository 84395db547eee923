//! In-memory semantic-osmAG: areas (polygonal rooms), passages (doors),
//! semantic nodes, and the `parent` hierarchy tying them together.
//!
//! Tags are the single source of truth for hierarchy and connectivity: the
//! `parent` tag of an area or semantic node, and the `osmAG:from` /
//! `osmAG:to` tags of a passage, are resolved against the map on demand.
//! A reference resolves by numeric area id first and by unique `name`
//! second, so both hand-authored and generated maps work.

mod validate;
mod xml;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::geo::{self, GeoPoint, MetricPoint, Planar, ProjectionError, CONTAINMENT_TOLERANCE_DEG};

pub use validate::{validate, Violation, PASSAGE_BOUNDARY_TOLERANCE_M};
pub use xml::{parse_osmag, serialize_osmag, ParseError};

pub const KEY_TYPE: &str = "osmAG:type";
pub const KEY_AREA_TYPE: &str = "osmAG:areaType";
pub const KEY_LEVEL: &str = "osmAG:level";
pub const KEY_FROM: &str = "osmAG:from";
pub const KEY_TO: &str = "osmAG:to";
pub const KEY_PARENT: &str = "parent";
pub const KEY_NAME: &str = "name";
pub const KEY_OBJECT_NAME: &str = "semantic_osmAG:object_name";
pub const KEY_OBSERVED_OBJECT: &str = "semantic_osmAG:observed_object";
pub const KEY_ROOM_DESCRIPTION: &str = "semantic_osmAG:room_description";

/// Separator between object names in a viewpoint node's observed list.
pub const OBSERVED_SEPARATOR: char = ';';

pub type Tags = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapNode {
    pub id: i64,
    pub position: GeoPoint,
    pub tags: Tags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Object(String),
    Viewpoint(Vec<String>),
    Plain,
}

impl MapNode {
    pub fn new(id: i64, position: GeoPoint) -> Self {
        Self {
            id,
            position,
            tags: Tags::new(),
        }
    }

    pub fn with_tag(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.tags.insert(k.into(), v.into());
        self
    }

    pub fn object_name(&self) -> Option<&str> {
        self.tags.get(KEY_OBJECT_NAME).map(String::as_str)
    }

    pub fn observed_objects(&self) -> Option<Vec<String>> {
        self.tags.get(KEY_OBSERVED_OBJECT).map(|v| split_observed(v))
    }

    /// Object tag wins when both keys are present; validation flags that case.
    pub fn kind(&self) -> NodeKind {
        if let Some(name) = self.object_name() {
            NodeKind::Object(name.to_string())
        } else if let Some(list) = self.observed_objects() {
            NodeKind::Viewpoint(list)
        } else {
            NodeKind::Plain
        }
    }

    pub fn is_semantic(&self) -> bool {
        !matches!(self.kind(), NodeKind::Plain)
    }

    /// Object names this node stands for: one for object-nodes, the observed
    /// list for viewpoint-nodes.
    pub fn labels(&self) -> Vec<String> {
        match self.kind() {
            NodeKind::Object(n) => vec![n],
            NodeKind::Viewpoint(l) => l,
            NodeKind::Plain => Vec::new(),
        }
    }
}

pub fn split_observed(value: &str) -> Vec<String> {
    value
        .split(OBSERVED_SEPARATOR)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Area {
    pub id: i64,
    /// Node ids as written on the wire, closing id included.
    pub ring: Vec<i64>,
    pub tags: Tags,
}

impl Area {
    /// Builds an area from an open vertex list, closing the ring.
    pub fn new(id: i64, vertices: &[i64]) -> Self {
        let mut ring = vertices.to_vec();
        if let (Some(first), Some(last)) = (vertices.first(), vertices.last()) {
            if first != last {
                ring.push(*first);
            }
        }
        let mut tags = Tags::new();
        tags.insert(KEY_TYPE.into(), "area".into());
        Self { id, ring, tags }
    }

    pub fn with_tag(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.tags.insert(k.into(), v.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.tags.get(KEY_NAME).map(String::as_str)
    }

    pub fn level(&self) -> Option<&str> {
        self.tags.get(KEY_LEVEL).map(String::as_str)
    }

    pub fn description(&self) -> Option<&str> {
        self.tags.get(KEY_ROOM_DESCRIPTION).map(String::as_str)
    }

    pub fn display_name(&self) -> String {
        self.name()
            .map(str::to_string)
            .unwrap_or_else(|| format!("area {}", self.id))
    }

    /// Vertex ids without the closing repeat.
    pub fn vertices(&self) -> &[i64] {
        match (self.ring.first(), self.ring.last()) {
            (Some(f), Some(l)) if self.ring.len() > 1 && f == l => &self.ring[..self.ring.len() - 1],
            _ => &self.ring,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Passage {
    pub id: i64,
    pub segment: Vec<i64>,
    pub tags: Tags,
}

impl Passage {
    pub fn new(id: i64, segment: &[i64], from_area: i64, to_area: i64) -> Self {
        let mut tags = Tags::new();
        tags.insert(KEY_TYPE.into(), "passage".into());
        tags.insert(KEY_FROM.into(), from_area.to_string());
        tags.insert(KEY_TO.into(), to_area.to_string());
        Self {
            id,
            segment: segment.to_vec(),
            tags,
        }
    }

    pub fn with_tag(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.tags.insert(k.into(), v.into());
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: i64 },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Outcome of resolving a reference tag such as `parent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AreaRef {
    Absent,
    Resolved(i64),
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticMap {
    pub projection_origin: GeoPoint,
    nodes: BTreeMap<i64, MapNode>,
    areas: BTreeMap<i64, Area>,
    passages: BTreeMap<i64, Passage>,
}

impl SemanticMap {
    pub fn new(projection_origin: GeoPoint) -> Self {
        Self {
            projection_origin,
            nodes: BTreeMap::new(),
            areas: BTreeMap::new(),
            passages: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MapNode> {
        self.nodes.values()
    }

    pub fn areas(&self) -> impl Iterator<Item = &Area> {
        self.areas.values()
    }

    pub fn passages(&self) -> impl Iterator<Item = &Passage> {
        self.passages.values()
    }

    pub fn node(&self, id: i64) -> Option<&MapNode> {
        self.nodes.get(&id)
    }

    pub fn area(&self, id: i64) -> Option<&Area> {
        self.areas.get(&id)
    }

    pub fn area_mut(&mut self, id: i64) -> Option<&mut Area> {
        self.areas.get_mut(&id)
    }

    pub fn passage(&self, id: i64) -> Option<&Passage> {
        self.passages.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.areas.is_empty() && self.passages.is_empty()
    }

    pub fn insert_node(&mut self, node: MapNode) -> Result<(), MapError> {
        if self.nodes.contains_key(&node.id) {
            return Err(MapError::DuplicateId {
                kind: "node",
                id: node.id,
            });
        }
        self.nodes.insert(node.id, node);
        Ok(())
    }

    fn way_taken(&self, id: i64) -> bool {
        self.areas.contains_key(&id) || self.passages.contains_key(&id)
    }

    pub fn insert_area(&mut self, area: Area) -> Result<(), MapError> {
        if self.way_taken(area.id) {
            return Err(MapError::DuplicateId {
                kind: "way",
                id: area.id,
            });
        }
        self.areas.insert(area.id, area);
        Ok(())
    }

    pub fn insert_passage(&mut self, passage: Passage) -> Result<(), MapError> {
        if self.way_taken(passage.id) {
            return Err(MapError::DuplicateId {
                kind: "way",
                id: passage.id,
            });
        }
        self.passages.insert(passage.id, passage);
        Ok(())
    }

    /// Smallest id strictly above every node id in the map (at least 1).
    pub fn next_node_id(&self) -> i64 {
        self.nodes.keys().next_back().map_or(1, |m| (m + 1).max(1))
    }

    pub fn resolve_area(&self, value: &str) -> Option<i64> {
        let value = value.trim();
        if let Ok(id) = value.parse::<i64>() {
            if self.areas.contains_key(&id) {
                return Some(id);
            }
        }
        let mut named = self.areas.values().filter(|a| a.name() == Some(value));
        match (named.next(), named.next()) {
            (Some(a), None) => Some(a.id),
            _ => None,
        }
    }

    fn resolve_tag(&self, tags: &Tags, key: &str) -> AreaRef {
        match tags.get(key) {
            None => AreaRef::Absent,
            Some(v) => match self.resolve_area(v) {
                Some(id) => AreaRef::Resolved(id),
                None => AreaRef::Missing(v.clone()),
            },
        }
    }

    pub fn area_parent_ref(&self, area_id: i64) -> AreaRef {
        self.areas
            .get(&area_id)
            .map_or(AreaRef::Absent, |a| self.resolve_tag(&a.tags, KEY_PARENT))
    }

    pub fn area_parent(&self, area_id: i64) -> Option<i64> {
        match self.area_parent_ref(area_id) {
            AreaRef::Resolved(p) => Some(p),
            _ => None,
        }
    }

    pub fn node_parent_ref(&self, node_id: i64) -> AreaRef {
        self.nodes
            .get(&node_id)
            .map_or(AreaRef::Absent, |n| self.resolve_tag(&n.tags, KEY_PARENT))
    }

    pub fn node_parent(&self, node_id: i64) -> Option<i64> {
        match self.node_parent_ref(node_id) {
            AreaRef::Resolved(p) => Some(p),
            _ => None,
        }
    }

    pub fn passage_connects(&self, passage: &Passage) -> Option<(i64, i64)> {
        match (
            self.resolve_tag(&passage.tags, KEY_FROM),
            self.resolve_tag(&passage.tags, KEY_TO),
        ) {
            (AreaRef::Resolved(a), AreaRef::Resolved(b)) => Some((a, b)),
            _ => None,
        }
    }

    /// Parent chain starting at `area_id` (inclusive), stopping before any
    /// repeat so cycles terminate.
    pub fn ancestors(&self, area_id: i64) -> Vec<i64> {
        let mut chain = vec![area_id];
        let mut seen = BTreeSet::from([area_id]);
        let mut cur = area_id;
        while let Some(p) = self.area_parent(cur) {
            if !seen.insert(p) {
                break;
            }
            chain.push(p);
            cur = p;
        }
        chain
    }

    pub fn depth(&self, area_id: i64) -> usize {
        self.ancestors(area_id).len() - 1
    }

    pub fn children(&self, area_id: i64) -> Vec<i64> {
        self.areas
            .keys()
            .copied()
            .filter(|&id| id != area_id && self.area_parent(id) == Some(area_id))
            .collect()
    }

    /// Areas with no child areas: the rooms a search plan may name.
    pub fn leaf_areas(&self) -> Vec<i64> {
        let parents: BTreeSet<i64> = self.areas.keys().filter_map(|&id| self.area_parent(id)).collect();
        self.areas.keys().copied().filter(|id| !parents.contains(id)).collect()
    }

    /// Semantic nodes whose `parent` resolves to `area_id`, in id order.
    pub fn semantic_children(&self, area_id: i64) -> Vec<&MapNode> {
        self.nodes
            .values()
            .filter(|n| n.is_semantic() && self.node_parent(n.id) == Some(area_id))
            .collect()
    }

    pub fn semantic_nodes(&self) -> impl Iterator<Item = &MapNode> {
        self.nodes.values().filter(|n| n.is_semantic())
    }

    /// Ring vertices in degree space, or `None` if any vertex is undeclared.
    pub fn area_ring_geo(&self, area_id: i64) -> Option<Vec<GeoPoint>> {
        let area = self.areas.get(&area_id)?;
        area.vertices()
            .iter()
            .map(|id| self.nodes.get(id).map(|n| n.position))
            .collect()
    }

    pub fn area_polygon_deg(&self, area_id: i64) -> Option<Vec<Planar>> {
        self.area_ring_geo(area_id)
            .map(|r| r.iter().map(GeoPoint::as_planar).collect())
    }

    pub fn area_polygon_metric(&self, area_id: i64) -> Option<Vec<MetricPoint>> {
        self.area_ring_geo(area_id)?
            .iter()
            .map(|g| self.to_metric(*g).ok())
            .collect()
    }

    pub fn segment_metric(&self, ids: &[i64]) -> Option<Vec<MetricPoint>> {
        ids.iter()
            .map(|id| self.nodes.get(id).and_then(|n| self.to_metric(n.position).ok()))
            .collect()
    }

    pub fn to_metric(&self, p: GeoPoint) -> Result<MetricPoint, ProjectionError> {
        geo::project(p, self.projection_origin)
    }

    pub fn to_geo(&self, p: MetricPoint) -> Result<GeoPoint, ProjectionError> {
        geo::unproject(p, self.projection_origin)
    }

    pub fn node_metric(&self, node_id: i64) -> Option<MetricPoint> {
        self.nodes.get(&node_id).and_then(|n| self.to_metric(n.position).ok())
    }

    /// Interior reference point of an area: its centroid when that lies
    /// inside the polygon, otherwise the first vertex nudged inward.
    pub fn area_anchor(&self, area_id: i64) -> Option<MetricPoint> {
        let poly: Vec<Planar> = self
            .area_polygon_metric(area_id)?
            .iter()
            .map(MetricPoint::as_planar)
            .collect();
        let c = geo::polygon_centroid(&poly);
        if geo::point_in_polygon(c, &poly, 0.0) {
            return Some(MetricPoint::new(c.x, c.y));
        }
        poly.iter()
            .map(|v| Planar::new(v.x + (c.x - v.x) * 0.1, v.y + (c.y - v.y) * 0.1))
            .find(|p| geo::point_in_polygon(*p, &poly, 0.0))
            .map(|p| MetricPoint::new(p.x, p.y))
    }

    /// Deepest area (by parent chain) whose polygon contains `p`; ties go to
    /// the smaller id.
    pub fn containing_area(&self, p: GeoPoint) -> Option<i64> {
        let q = p.as_planar();
        self.areas
            .keys()
            .filter(|&&id| {
                self.area_polygon_deg(id)
                    .is_some_and(|poly| geo::point_in_polygon(q, &poly, CONTAINMENT_TOLERANCE_DEG))
            })
            .map(|&id| (self.depth(id), id))
            .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    pub fn containing_area_metric(&self, p: MetricPoint) -> Option<i64> {
        self.to_geo(p).ok().and_then(|g| self.containing_area(g))
    }

    /// Equality up to `tol_deg` on coordinates; ids and tags must match exactly.
    pub fn semantically_eq(&self, other: &SemanticMap, tol_deg: f64) -> bool {
        let close = |a: &GeoPoint, b: &GeoPoint| (a.lat - b.lat).abs() <= tol_deg && (a.lon - b.lon).abs() <= tol_deg;
        close(&self.projection_origin, &other.projection_origin)
            && self.areas == other.areas
            && self.passages == other.passages
            && self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .values()
                .zip(other.nodes.values())
                .all(|(a, b)| a.id == b.id && a.tags == b.tags && close(&a.position, &b.position))
    }
}
