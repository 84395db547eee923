use std::collections::BTreeSet;

use serde::Serialize;

use super::{AreaRef, NodeKind, SemanticMap, KEY_OBJECT_NAME, KEY_OBSERVED_OBJECT};
use crate::geo::{self, Planar, CONTAINMENT_TOLERANCE_DEG};

/// Passage endpoints may sit this far (meters) from an area boundary.
pub const PASSAGE_BOUNDARY_TOLERANCE_M: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `node`, `area` or `passage`.
    pub element: &'static str,
    pub id: i64,
    pub rule: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {} ({})", self.element, self.id, self.rule, self.detail)
    }
}

/// Checks every structural invariant of a semantic-osmAG map. An empty
/// result means the map is valid.
pub fn validate(map: &SemanticMap) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |element, id, rule, detail: String| {
        out.push(Violation {
            element,
            id,
            rule,
            detail,
        })
    };

    for n in map.nodes() {
        if !n.position.is_valid() {
            push("node", n.id, "coordinate-range", format!("{:?}", n.position));
        }
    }

    for a in map.areas() {
        let open = a.vertices();
        if a.ring.first() != a.ring.last() || a.ring.len() < 2 {
            push("area", a.id, "ring-not-closed", "first and last node ids differ".into());
        }
        if let Some(missing) = a.ring.iter().find(|id| map.node(**id).is_none()) {
            push(
                "area",
                a.id,
                "ring-dangling-node",
                format!("node {missing} is not declared"),
            );
            continue;
        }
        let distinct: BTreeSet<i64> = open.iter().copied().collect();
        if distinct.len() < 3 {
            push(
                "area",
                a.id,
                "ring-too-short",
                format!("{} distinct vertices", distinct.len()),
            );
            continue;
        }
        let poly = map.area_polygon_deg(a.id).unwrap_or_default();
        if !geo::is_simple(&poly) {
            push("area", a.id, "ring-self-intersecting", "polygon edges cross".into());
        }
        if let AreaRef::Missing(v) = map.area_parent_ref(a.id) {
            push("area", a.id, "parent-missing", format!("parent {v:?} names no area"));
        }
    }

    // One report per cycle, attributed to its smallest member.
    let mut reported: BTreeSet<i64> = BTreeSet::new();
    for a in map.areas() {
        let mut path = vec![a.id];
        let mut cur = a.id;
        while let Some(p) = map.area_parent(cur) {
            if let Some(pos) = path.iter().position(|&x| x == p) {
                let cycle: BTreeSet<i64> = path[pos..].iter().copied().collect();
                let head = *cycle.iter().next().unwrap();
                if reported.insert(head) {
                    let members: Vec<String> = cycle.iter().map(i64::to_string).collect();
                    push(
                        "area",
                        head,
                        "parent-cycle",
                        format!("cycle through areas {}", members.join(", ")),
                    );
                }
                break;
            }
            path.push(p);
            cur = p;
        }
    }

    for p in map.passages() {
        if p.segment.len() < 2 {
            push(
                "passage",
                p.id,
                "passage-segment-short",
                format!("{} nodes", p.segment.len()),
            );
            continue;
        }
        if let Some(missing) = p.segment.iter().find(|id| map.node(**id).is_none()) {
            push(
                "passage",
                p.id,
                "passage-dangling-node",
                format!("node {missing} is not declared"),
            );
            continue;
        }
        let Some((from, to)) = map.passage_connects(p) else {
            push(
                "passage",
                p.id,
                "passage-area-missing",
                "osmAG:from / osmAG:to must name existing areas".into(),
            );
            continue;
        };
        let seg = match map.segment_metric(&p.segment) {
            Some(s) => s,
            None => continue,
        };
        let ends = [seg[0], seg[seg.len() - 1]];
        for area_id in [from, to] {
            let Some(poly) = map.area_polygon_metric(area_id) else {
                continue;
            };
            let poly: Vec<Planar> = poly.iter().map(|m| m.as_planar()).collect();
            if poly.len() < 3 {
                continue;
            }
            let worst = ends
                .iter()
                .map(|e| geo::boundary_distance(e.as_planar(), &poly))
                .fold(0.0, f64::max);
            if worst > PASSAGE_BOUNDARY_TOLERANCE_M {
                push(
                    "passage",
                    p.id,
                    "passage-off-boundary",
                    format!("endpoint {worst:.3} m from boundary of area {area_id}"),
                );
            }
        }
    }

    for n in map.nodes() {
        if n.tags.contains_key(KEY_OBJECT_NAME) && n.tags.contains_key(KEY_OBSERVED_OBJECT) {
            push(
                "node",
                n.id,
                "semantic-key-conflict",
                "both object and viewpoint keys present".into(),
            );
        }
        if matches!(n.kind(), NodeKind::Plain) {
            continue;
        }
        if n.labels().is_empty() {
            push("node", n.id, "semantic-empty-label", "no object names".into());
        }
        match map.node_parent_ref(n.id) {
            AreaRef::Absent => push("node", n.id, "semantic-parent-missing", "no parent tag".into()),
            AreaRef::Missing(v) => push(
                "node",
                n.id,
                "semantic-parent-missing",
                format!("parent {v:?} names no area"),
            ),
            AreaRef::Resolved(area) => {
                let inside = map.area_polygon_deg(area).is_some_and(|poly| {
                    geo::point_in_polygon(n.position.as_planar(), &poly, CONTAINMENT_TOLERANCE_DEG)
                });
                if !inside {
                    push(
                        "node",
                        n.id,
                        "semantic-outside-parent",
                        format!("not inside area {area}"),
                    );
                }
            }
        }
    }
    out
}
