//! Deterministic stand-in for the planning model.
//!
//! Reads only the prompt text (the simplified map and the query), so it sees
//! exactly what a live model would see. Rooms and nodes are ranked by
//! token-set similarity between the queried object and node labels and room
//! descriptions.

use std::collections::BTreeSet;

use serde_json::json;

use super::{Query, MAP_HEADER, MAX_NODES_PER_ROOM, MAX_ROOMS, QUERY_HEADER};
use crate::llm::LlmError;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "by", "for", "from", "in", "is", "it", "of", "on", "or", "some", "the", "there",
    "this", "to", "with",
];

/// Weight of room-description coverage relative to an exact node match.
pub const DESCRIPTION_WEIGHT: f64 = 0.5;
pub const ROOM_NAME_BONUS: f64 = 2.0;
pub const LEVEL_BONUS: f64 = 1.0;

/// Lowercased, stopword-free, crudely singularized word set.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| match w.strip_suffix('s') {
            Some(stem) if stem.len() >= 3 && !stem.ends_with('s') => stem.to_string(),
            _ => w,
        })
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Fraction of `query` tokens present in `text`.
pub fn coverage(query: &BTreeSet<String>, text: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    query.intersection(text).count() as f64 / query.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
enum EntryKind {
    Object(String),
    Viewpoint(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
struct NodeEntry {
    id: i64,
    kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq)]
struct AreaEntry {
    id: i64,
    name: String,
    level: Option<String>,
    description: Option<String>,
    nodes: Vec<NodeEntry>,
    has_children: bool,
}

fn split_prompt(user_text: &str) -> Result<(&str, &str), LlmError> {
    let unsupported = |what: &str| LlmError::UnsupportedPrompt(format!("missing {what} section"));
    let map_at = user_text
        .find(&format!("{MAP_HEADER}\n"))
        .ok_or_else(|| unsupported(MAP_HEADER))?;
    let query_at = user_text
        .find(&format!("{QUERY_HEADER}\n"))
        .ok_or_else(|| unsupported(QUERY_HEADER))?;
    if query_at < map_at {
        return Err(LlmError::UnsupportedPrompt("sections out of order".into()));
    }
    let map = &user_text[map_at + MAP_HEADER.len() + 1..query_at];
    let rest = &user_text[query_at + QUERY_HEADER.len() + 1..];
    // A corrective instruction may follow the query line.
    let query = rest.lines().next().unwrap_or("").trim();
    Ok((map, query))
}

fn parse_id_and_text(s: &str) -> Option<(i64, &str)> {
    let (id, text) = s.split_once(':')?;
    Some((id.trim().parse().ok()?, text.trim()))
}

/// Reads back the indented map listing; levels are inherited down the tree.
fn parse_map_text(text: &str) -> Vec<AreaEntry> {
    let mut areas: Vec<AreaEntry> = Vec::new();
    // (indent, index into areas)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for line in text.lines() {
        let indent = line.len() - line.trim_start().len();
        let body = line.trim_start();
        if let Some(rest) = body.strip_prefix("- area ") {
            let Some((id, mut name)) = parse_id_and_text(rest) else {
                continue;
            };
            let mut level = None;
            if let Some(open) = name.rfind(" [level ") {
                if name.ends_with(']') {
                    level = Some(name[open + 8..name.len() - 1].to_string());
                    name = &name[..open];
                }
            }
            while stack.last().is_some_and(|&(d, _)| d >= indent) {
                stack.pop();
            }
            if let Some(&(_, parent)) = stack.last() {
                areas[parent].has_children = true;
                if level.is_none() {
                    level = areas[parent].level.clone();
                }
            }
            areas.push(AreaEntry {
                id,
                name: name.to_string(),
                level,
                description: None,
                nodes: Vec::new(),
                has_children: false,
            });
            stack.push((indent, areas.len() - 1));
            continue;
        }
        let Some(&(_, current)) = stack.last() else { continue };
        if let Some(rest) = body.strip_prefix("description:") {
            areas[current].description = Some(rest.trim().to_string());
        } else if let Some(rest) = body.strip_prefix("- object ") {
            if let Some((id, name)) = parse_id_and_text(rest) {
                areas[current].nodes.push(NodeEntry {
                    id,
                    kind: EntryKind::Object(name.to_string()),
                });
            }
        } else if let Some(rest) = body.strip_prefix("- viewpoint ") {
            if let Some((id, list)) = parse_id_and_text(rest) {
                let list = list
                    .split(';')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                areas[current].nodes.push(NodeEntry {
                    id,
                    kind: EntryKind::Viewpoint(list),
                });
            }
        }
    }
    areas
}

fn node_score(object: &BTreeSet<String>, node: &NodeEntry) -> f64 {
    match &node.kind {
        EntryKind::Object(name) => jaccard(object, &tokens(name)),
        EntryKind::Viewpoint(list) => list.iter().map(|l| jaccard(object, &tokens(l))).fold(0.0, f64::max),
    }
}

type RankedArea<'a> = (f64, &'a AreaEntry, Vec<(f64, &'a NodeEntry)>);

/// Ranks rooms and their nodes for the query in `user_text` and returns the
/// plan as JSON in the shape the task section asks for.
pub fn respond(user_text: &str) -> Result<String, LlmError> {
    let (map_text, query_text) = split_prompt(user_text)?;
    let query = Query::parse(query_text).map_err(|e| LlmError::UnsupportedPrompt(e.to_string()))?;
    let object = tokens(&query.object);
    let room_tokens = query.room.as_deref().map(tokens);

    let areas = parse_map_text(map_text);
    let mut ranked: Vec<RankedArea> = areas
        .iter()
        .filter(|a| !a.has_children)
        .map(|area| {
            let mut nodes: Vec<(f64, &NodeEntry)> = area.nodes.iter().map(|n| (node_score(&object, n), n)).collect();
            // Matching nodes: object-nodes first (they sit on the instance).
            // Non-matching nodes: viewpoints first (they saw the room).
            nodes.sort_by(|(sa, a), (sb, b)| {
                let rank = |s: f64, n: &NodeEntry| match (&n.kind, s > 0.0) {
                    (EntryKind::Object(_), true) | (EntryKind::Viewpoint(_), false) => 0,
                    _ => 1,
                };
                sb.total_cmp(sa)
                    .then(rank(*sa, a).cmp(&rank(*sb, b)))
                    .then(a.id.cmp(&b.id))
            });
            nodes.truncate(MAX_NODES_PER_ROOM);
            let best = nodes.first().map_or(0.0, |(s, _)| *s);
            let desc = area.description.as_deref().map(tokens).unwrap_or_default();
            let mut score = best + DESCRIPTION_WEIGHT * coverage(&object, &desc);
            if let Some(rt) = &room_tokens {
                score += ROOM_NAME_BONUS * jaccard(rt, &tokens(&area.name));
            }
            if let (Some(f), Some(l)) = (&query.floor, &area.level) {
                if f == l {
                    score += LEVEL_BONUS;
                }
            }
            (score, area, nodes)
        })
        .collect();
    ranked.sort_by(|(sa, a, _), (sb, b, _)| sb.total_cmp(sa).then(a.id.cmp(&b.id)));
    ranked.truncate(MAX_ROOMS);

    let rooms: Vec<_> = ranked
        .iter()
        .map(|(_, area, nodes)| {
            json!({
                "room_id": area.id,
                "room_name": area.name,
                "nodes": nodes.iter().map(|(_, n)| n.id).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({ "rooms": rooms }).to_string())
}
