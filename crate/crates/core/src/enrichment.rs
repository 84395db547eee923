//! Turns offline perception records into semantic nodes and room
//! descriptions. Every operation returns a new map; the input is untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::MetricPoint;
use crate::llm::{CompletionRequest, LlmError, TextBackend};
use crate::osmag::{
    MapError, MapNode, SemanticMap, KEY_OBJECT_NAME, KEY_OBSERVED_OBJECT, KEY_PARENT, KEY_ROOM_DESCRIPTION,
};

pub const SUMMARIZE_SYSTEM: &str = include_str!("../assets/prompts/v1/summarize_system.txt");
/// Character budget of the null summarizer.
pub const NULL_SUMMARY_CHARS: usize = 500;
pub const DEFAULT_MERGE_RADIUS_M: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub label: String,
    pub centroid: MetricPoint,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewpointRecord {
    pub capture_pose: MetricPoint,
    #[serde(default)]
    pub heading_deg: f64,
    pub observed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomDescriptionRecord {
    pub area_id: i64,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordsFile {
    #[serde(default)]
    pub instances: Vec<InstanceRecord>,
    #[serde(default)]
    pub viewpoints: Vec<ViewpointRecord>,
    #[serde(default)]
    pub room_descriptions: Vec<RoomDescriptionRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnrichError {
    #[error("instance record has an empty label")]
    EmptyLabel,
    #[error("viewpoint record observed nothing")]
    EmptyObserved,
    #[error("room description record for area {0} has no descriptions")]
    EmptyDescriptions(i64),
    #[error("non-finite position ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("position ({x:.3}, {y:.3}) lies outside every area")]
    Orphan { x: f64, y: f64 },
    #[error("area {0} does not exist")]
    UnknownArea(i64),
    #[error("summarizer failed: {0}")]
    Summarizer(#[from] LlmError),
    #[error("summarizer returned an empty description")]
    EmptySummary,
    #[error("records file: {0}")]
    Schema(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

impl RecordsFile {
    pub fn from_json(text: &str) -> Result<Self, EnrichError> {
        let file: Self = serde_json::from_str(text).map_err(|e| EnrichError::Schema(e.to_string()))?;
        file.check()?;
        Ok(file)
    }

    /// Record-level invariants; any failure rejects the whole file.
    pub fn check(&self) -> Result<(), EnrichError> {
        let finite = |p: &MetricPoint| {
            if p.is_finite() {
                Ok(())
            } else {
                Err(EnrichError::NonFinite { x: p.x, y: p.y })
            }
        };
        for r in &self.instances {
            if r.label.trim().is_empty() {
                return Err(EnrichError::EmptyLabel);
            }
            finite(&r.centroid)?;
        }
        for r in &self.viewpoints {
            if r.observed.iter().all(|o| o.trim().is_empty()) {
                return Err(EnrichError::EmptyObserved);
            }
            finite(&r.capture_pose)?;
        }
        for r in &self.room_descriptions {
            if r.descriptions.is_empty() {
                return Err(EnrichError::EmptyDescriptions(r.area_id));
            }
        }
        Ok(())
    }
}

fn place_node(map: &mut SemanticMap, at: MetricPoint, key: &str, value: String) -> Result<i64, EnrichError> {
    if !at.is_finite() {
        return Err(EnrichError::NonFinite { x: at.x, y: at.y });
    }
    let geo = map.to_geo(at).map_err(MapError::from)?;
    let parent = map
        .containing_area(geo)
        .ok_or(EnrichError::Orphan { x: at.x, y: at.y })?;
    let id = map.next_node_id();
    let node = MapNode::new(id, geo)
        .with_tag(key, value)
        .with_tag(KEY_PARENT, parent.to_string());
    map.insert_node(node)?;
    Ok(id)
}

fn object_in_place(map: &mut SemanticMap, rec: &InstanceRecord) -> Result<i64, EnrichError> {
    let label = rec.label.trim();
    if label.is_empty() {
        return Err(EnrichError::EmptyLabel);
    }
    place_node(map, rec.centroid, KEY_OBJECT_NAME, label.to_string())
}

fn viewpoint_in_place(map: &mut SemanticMap, rec: &ViewpointRecord) -> Result<i64, EnrichError> {
    let observed: Vec<&str> = rec
        .observed
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if observed.is_empty() {
        return Err(EnrichError::EmptyObserved);
    }
    place_node(map, rec.capture_pose, KEY_OBSERVED_OBJECT, observed.join(";"))
}

fn summarize(rec: &RoomDescriptionRecord, summarizer: Option<&dyn TextBackend>) -> Result<String, EnrichError> {
    if rec.descriptions.is_empty() {
        return Err(EnrichError::EmptyDescriptions(rec.area_id));
    }
    let Some(backend) = summarizer else {
        return Ok(rec.descriptions.join(" ").chars().take(NULL_SUMMARY_CHARS).collect());
    };
    let user: String = rec.descriptions.iter().map(|d| format!("- {}\n", d.trim())).collect();
    let reply = backend.complete(&CompletionRequest::new(SUMMARIZE_SYSTEM.trim_end(), user))?;
    let reply = reply.trim();
    if reply.is_empty() {
        return Err(EnrichError::EmptySummary);
    }
    Ok(reply.to_string())
}

/// Adds an object-node at the record's centroid, parented to the deepest
/// containing area.
pub fn add_object_node(map: &SemanticMap, rec: &InstanceRecord) -> Result<(SemanticMap, i64), EnrichError> {
    let mut out = map.clone();
    let id = object_in_place(&mut out, rec)?;
    Ok((out, id))
}

/// Adds a viewpoint-node at the capture pose listing the observed objects.
pub fn add_viewpoint_node(map: &SemanticMap, rec: &ViewpointRecord) -> Result<(SemanticMap, i64), EnrichError> {
    let mut out = map.clone();
    let id = viewpoint_in_place(&mut out, rec)?;
    Ok((out, id))
}

/// Sets the area's description from its image descriptions. Without a
/// summarizer the text is the first 500 characters of the descriptions
/// joined by spaces.
pub fn attach_room_description(
    map: &SemanticMap,
    rec: &RoomDescriptionRecord,
    summarizer: Option<&dyn TextBackend>,
) -> Result<SemanticMap, EnrichError> {
    if map.area(rec.area_id).is_none() {
        return Err(EnrichError::UnknownArea(rec.area_id));
    }
    let text = summarize(rec, summarizer)?;
    let mut out = map.clone();
    out.area_mut(rec.area_id)
        .expect("checked above")
        .tags
        .insert(KEY_ROOM_DESCRIPTION.to_string(), text);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Instance,
    Viewpoint,
    RoomDescription,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub instances: usize,
    pub viewpoints: usize,
    pub room_descriptions: usize,
}

impl KindCounts {
    fn bump(&mut self, kind: RecordKind) {
        match kind {
            RecordKind::Instance => self.instances += 1,
            RecordKind::Viewpoint => self.viewpoints += 1,
            RecordKind::RoomDescription => self.room_descriptions += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.instances + self.viewpoints + self.room_descriptions
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub kind: RecordKind,
    /// Position in the record array of its kind.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    /// Nodes added (instances, viewpoints) and descriptions set.
    pub applied: KindCounts,
    pub skipped: KindCounts,
    /// Instance records folded into an earlier same-label record.
    pub merged_instances: usize,
    pub skips: Vec<SkippedRecord>,
    pub added_nodes: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Same-label instances closer than this become one node at their mean.
    /// Zero disables merging.
    pub merge_radius_m: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            merge_radius_m: DEFAULT_MERGE_RADIUS_M,
        }
    }
}

struct Cluster {
    label: String,
    first_index: usize,
    sum: (f64, f64),
    count: usize,
}

impl Cluster {
    fn mean(&self) -> MetricPoint {
        MetricPoint::new(self.sum.0 / self.count as f64, self.sum.1 / self.count as f64)
    }
}

/// Applies a whole records file: instances, then viewpoints, then room
/// descriptions, each in file order. Orphans and unknown areas are skipped
/// and reported; a schema or summarizer failure aborts with no output map.
pub fn ingest(
    map: &SemanticMap,
    records: &RecordsFile,
    summarizer: Option<&dyn TextBackend>,
    opts: IngestOptions,
) -> Result<(SemanticMap, IngestReport), EnrichError> {
    records.check()?;
    let mut out = map.clone();
    let mut report = IngestReport::default();
    let skip = |report: &mut IngestReport, kind, index, reason: String| {
        report.skipped.bump(kind);
        report.skips.push(SkippedRecord { kind, index, reason });
    };

    // Orphans are rejected per record, before merging, so a stray record
    // cannot drag a valid cluster outside its room.
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, rec) in records.instances.iter().enumerate() {
        if out.containing_area_metric(rec.centroid).is_none() {
            let e = EnrichError::Orphan {
                x: rec.centroid.x,
                y: rec.centroid.y,
            };
            skip(&mut report, RecordKind::Instance, i, e.to_string());
            continue;
        }
        let label = rec.label.trim();
        let near = clusters
            .iter_mut()
            .find(|c| c.label == label && c.mean().distance(&rec.centroid) < opts.merge_radius_m);
        match near {
            Some(c) => {
                c.sum.0 += rec.centroid.x;
                c.sum.1 += rec.centroid.y;
                c.count += 1;
                report.merged_instances += 1;
            }
            None => clusters.push(Cluster {
                label: label.to_string(),
                first_index: i,
                sum: (rec.centroid.x, rec.centroid.y),
                count: 1,
            }),
        }
    }
    for c in &clusters {
        let rec = InstanceRecord {
            label: c.label.clone(),
            centroid: c.mean(),
            source: String::new(),
        };
        match object_in_place(&mut out, &rec) {
            Ok(id) => {
                report.applied.bump(RecordKind::Instance);
                report.added_nodes.push(id);
            }
            Err(e @ EnrichError::Orphan { .. }) => {
                skip(&mut report, RecordKind::Instance, c.first_index, e.to_string())
            }
            Err(e) => return Err(e),
        }
    }

    for (i, rec) in records.viewpoints.iter().enumerate() {
        match viewpoint_in_place(&mut out, rec) {
            Ok(id) => {
                report.applied.bump(RecordKind::Viewpoint);
                report.added_nodes.push(id);
            }
            Err(e @ EnrichError::Orphan { .. }) => skip(&mut report, RecordKind::Viewpoint, i, e.to_string()),
            Err(e) => return Err(e),
        }
    }

    for (i, rec) in records.room_descriptions.iter().enumerate() {
        match attach_room_description(&out, rec, summarizer) {
            Ok(next) => {
                out = next;
                report.applied.bump(RecordKind::RoomDescription);
            }
            Err(e @ EnrichError::UnknownArea(_)) => skip(&mut report, RecordKind::RoomDescription, i, e.to_string()),
            Err(e) => return Err(e),
        }
    }
    Ok((out, report))
}
