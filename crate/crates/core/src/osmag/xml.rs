//! OSM XML reading and canonical writing.
//!
//! Canonical form: nodes then ways, each sorted by id; tags sorted by key;
//! coordinates with ten fractional digits; a `<bounds>` element whose
//! minimum corner is the projection origin.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use super::{Area, MapNode, Passage, SemanticMap, Tags, KEY_TYPE};
use crate::geo::GeoPoint;

const GENERATOR: &str = "osmag-nav";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed XML at line {line}: {message}")]
    Xml { line: usize, message: String },
    #[error("{element} at line {line}: {message}")]
    BadElement {
        element: String,
        line: usize,
        message: String,
    },
    #[error("way {way} (line {line}) references undeclared node {node}")]
    DanglingNode { way: i64, node: i64, line: usize },
    #[error("duplicate {kind} id {id} at line {line}")]
    DuplicateId { kind: &'static str, id: i64, line: usize },
    #[error("way {way} (line {line}) has no osmAG:type tag")]
    MissingType { way: i64, line: usize },
    #[error("way {way} (line {line}) has unsupported osmAG:type {value:?}")]
    UnknownType { way: i64, line: usize, value: String },
}

fn line_of(text: &str, offset: u64) -> usize {
    let mut end = (offset as usize).min(text.len());
    // events start after any skipped whitespace
    while end < text.len() && text.as_bytes()[end].is_ascii_whitespace() {
        end += 1;
    }
    text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
}

enum Open {
    Node {
        id: i64,
        position: GeoPoint,
        tags: Tags,
        line: usize,
    },
    Way {
        id: i64,
        refs: Vec<i64>,
        tags: Tags,
        line: usize,
    },
    /// Unrecognized element; its children are skipped.
    Skip,
}

struct RawWay {
    id: i64,
    refs: Vec<i64>,
    tags: Tags,
    line: usize,
}

fn attrs(e: &BytesStart<'_>, element: &str, line: usize) -> Result<BTreeMap<String, String>, ParseError> {
    let bad = |message: String| ParseError::BadElement {
        element: element.to_string(),
        line,
        message,
    };
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| bad(err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a.unescape_value().map_err(|err| bad(err.to_string()))?.into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    element: &str,
    line: usize,
) -> Result<T, ParseError> {
    map.get(key)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| ParseError::BadElement {
            element: element.to_string(),
            line,
            message: format!("missing or invalid attribute `{key}`"),
        })
}

/// Parses an osmAG / semantic-osmAG document.
pub fn parse_osmag(xml_text: &str) -> Result<SemanticMap, ParseError> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut nodes: BTreeMap<i64, (MapNode, usize)> = BTreeMap::new();
    let mut ways: Vec<RawWay> = Vec::new();
    let mut bounds: Option<GeoPoint> = None;
    let mut stack: Vec<Open> = Vec::new();
    let mut saw_root = false;

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event().map_err(|e| ParseError::Xml {
            line: line_of(xml_text, reader.error_position()),
            message: e.to_string(),
        })?;
        let line = line_of(xml_text, offset);
        match event {
            Event::Start(e) | Event::Empty(e) if !saw_root => {
                if e.name().as_ref() != b"osm" {
                    return Err(ParseError::Xml {
                        line,
                        message: "root element must be <osm>".into(),
                    });
                }
                saw_root = true;
            }
            Event::Start(e) => {
                let open = open_element(&e, line, &mut stack, &mut bounds)?;
                stack.push(open);
            }
            Event::Empty(e) => {
                let open = open_element(&e, line, &mut stack, &mut bounds)?;
                close_element(open, &mut nodes, &mut ways)?;
            }
            Event::End(e) => {
                if e.name().as_ref() == b"osm" && stack.is_empty() {
                    continue;
                }
                if let Some(open) = stack.pop() {
                    close_element(open, &mut nodes, &mut ways)?;
                }
            }
            Event::Text(t) => {
                if !t.iter().all(u8::is_ascii_whitespace) && !stack.iter().any(|o| matches!(o, Open::Skip)) {
                    return Err(ParseError::Xml {
                        line,
                        message: "unexpected text content".into(),
                    });
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_root {
        return Err(ParseError::Xml {
            line: 1,
            message: "document has no <osm> root element".into(),
        });
    }

    let origin = bounds.unwrap_or_else(|| {
        let mut it = nodes.values().map(|(n, _)| n.position);
        match it.next() {
            None => GeoPoint::new(0.0, 0.0),
            Some(first) => it.fold(first, |acc, p| GeoPoint::new(acc.lat.min(p.lat), acc.lon.min(p.lon))),
        }
    });
    let mut map = SemanticMap::new(origin);
    for (node, _) in nodes.into_values() {
        map.insert_node(node).expect("node ids deduplicated during parse");
    }

    ways.sort_by_key(|w| w.id);
    for w in ways {
        if let Some(missing) = w.refs.iter().find(|r| map.node(**r).is_none()) {
            return Err(ParseError::DanglingNode {
                way: w.id,
                node: *missing,
                line: w.line,
            });
        }
        let dup = ParseError::DuplicateId {
            kind: "way",
            id: w.id,
            line: w.line,
        };
        match w.tags.get(KEY_TYPE).map(String::as_str) {
            Some("area") => map
                .insert_area(Area {
                    id: w.id,
                    ring: w.refs,
                    tags: w.tags,
                })
                .map_err(|_| dup)?,
            Some("passage") => map
                .insert_passage(Passage {
                    id: w.id,
                    segment: w.refs,
                    tags: w.tags,
                })
                .map_err(|_| dup)?,
            Some(other) => {
                return Err(ParseError::UnknownType {
                    way: w.id,
                    line: w.line,
                    value: other.to_string(),
                })
            }
            None => {
                return Err(ParseError::MissingType {
                    way: w.id,
                    line: w.line,
                })
            }
        }
    }
    Ok(map)
}

fn open_element(
    e: &BytesStart<'_>,
    line: usize,
    stack: &mut [Open],
    bounds: &mut Option<GeoPoint>,
) -> Result<Open, ParseError> {
    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    if stack.iter().any(|o| matches!(o, Open::Skip)) {
        return Ok(Open::Skip);
    }
    match (name.as_str(), stack.last_mut()) {
        ("node", None) => {
            let a = attrs(e, "node", line)?;
            let id: i64 = required(&a, "id", "node", line)?;
            let el = format!("node {id}");
            let lat: f64 = required(&a, "lat", &el, line)?;
            let lon: f64 = required(&a, "lon", &el, line)?;
            Ok(Open::Node {
                id,
                position: GeoPoint::new(lat, lon),
                tags: Tags::new(),
                line,
            })
        }
        ("way", None) => {
            let a = attrs(e, "way", line)?;
            Ok(Open::Way {
                id: required(&a, "id", "way", line)?,
                refs: Vec::new(),
                tags: Tags::new(),
                line,
            })
        }
        ("bounds", None) => {
            let a = attrs(e, "bounds", line)?;
            *bounds = Some(GeoPoint::new(
                required(&a, "minlat", "bounds", line)?,
                required(&a, "minlon", "bounds", line)?,
            ));
            Ok(Open::Skip)
        }
        ("tag", Some(Open::Node { id, tags, .. })) | ("tag", Some(Open::Way { id, tags, .. })) => {
            let el = format!("tag of element {id}");
            let a = attrs(e, &el, line)?;
            let k: String = a.get("k").cloned().ok_or_else(|| ParseError::BadElement {
                element: el.clone(),
                line,
                message: "missing attribute `k`".into(),
            })?;
            let v = a.get("v").cloned().unwrap_or_default();
            tags.insert(k, v);
            Ok(Open::Skip)
        }
        ("nd", Some(Open::Way { id, refs, .. })) => {
            let el = format!("way {id}");
            let a = attrs(e, &el, line)?;
            refs.push(required(&a, "ref", &el, line)?);
            Ok(Open::Skip)
        }
        (other, Some(Open::Node { id, .. })) | (other, Some(Open::Way { id, .. })) => Err(ParseError::BadElement {
            element: format!("element {id}"),
            line,
            message: format!("unexpected child <{other}>"),
        }),
        _ => {
            log::debug!("skipping <{name}> at line {line}");
            Ok(Open::Skip)
        }
    }
}

fn close_element(
    open: Open,
    nodes: &mut BTreeMap<i64, (MapNode, usize)>,
    ways: &mut Vec<RawWay>,
) -> Result<(), ParseError> {
    match open {
        Open::Node {
            id,
            position,
            tags,
            line,
        } => {
            if nodes.contains_key(&id) {
                return Err(ParseError::DuplicateId { kind: "node", id, line });
            }
            nodes.insert(id, (MapNode { id, position, tags }, line));
        }
        Open::Way { id, refs, tags, line } => {
            if ways.iter().any(|w| w.id == id) {
                return Err(ParseError::DuplicateId { kind: "way", id, line });
            }
            ways.push(RawWay { id, refs, tags, line });
        }
        Open::Skip => {}
    }
    Ok(())
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

fn write_tags(out: &mut String, tags: &Tags) {
    for (k, v) in tags {
        let _ = writeln!(out, "    <tag k=\"{}\" v=\"{}\"/>", escape_attr(k), escape_attr(v));
    }
}

fn coord(v: f64) -> String {
    format!("{v:.10}")
}

/// Canonical XML for `map`.
pub fn serialize_osmag(map: &SemanticMap) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(out, "<osm version=\"0.6\" generator=\"{GENERATOR}\">");

    let origin = map.projection_origin;
    if map.node_count() > 0 || origin != GeoPoint::new(0.0, 0.0) {
        let (max_lat, max_lon) = map.nodes().fold((origin.lat, origin.lon), |(a, b), n| {
            (a.max(n.position.lat), b.max(n.position.lon))
        });
        let _ = writeln!(
            out,
            "  <bounds minlat=\"{}\" minlon=\"{}\" maxlat=\"{}\" maxlon=\"{}\"/>",
            coord(origin.lat),
            coord(origin.lon),
            coord(max_lat),
            coord(max_lon)
        );
    }

    for n in map.nodes() {
        let head = format!(
            "  <node id=\"{}\" lat=\"{}\" lon=\"{}\"",
            n.id,
            coord(n.position.lat),
            coord(n.position.lon)
        );
        if n.tags.is_empty() {
            let _ = writeln!(out, "{head}/>");
        } else {
            let _ = writeln!(out, "{head}>");
            write_tags(&mut out, &n.tags);
            out.push_str("  </node>\n");
        }
    }

    let mut ways: Vec<(i64, &[i64], &Tags)> = map
        .areas()
        .map(|a| (a.id, a.ring.as_slice(), &a.tags))
        .chain(map.passages().map(|p| (p.id, p.segment.as_slice(), &p.tags)))
        .collect();
    ways.sort_by_key(|w| w.0);
    for (id, refs, tags) in ways {
        let _ = writeln!(out, "  <way id=\"{id}\">");
        for r in refs {
            let _ = writeln!(out, "    <nd ref=\"{r}\"/>");
        }
        write_tags(&mut out, tags);
        out.push_str("  </way>\n");
    }
    out.push_str("</osm>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="31.0" lon="121.0"/>
  <node id="2" lat="31.0" lon="121.0001"/>
  <node id="3" lat="31.0001" lon="121.0001"/>
  <node id="4" lat="31.0001" lon="121.0"/>
  <way id="10">
    <nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/>
    <tag k="osmAG:type" v="area"/>
    <tag k="name" v="box"/>
    <tag k="x:custom" v="kept &amp; verbatim"/>
  </way>
</osm>
"#;

    #[test]
    fn minimal_document() {
        let m = parse_osmag(MINIMAL).unwrap();
        assert_eq!(m.areas().count(), 1);
        assert_eq!(m.passages().count(), 0);
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.area(10).unwrap().tags["x:custom"], "kept & verbatim");
        assert_eq!(m.projection_origin, GeoPoint::new(31.0, 121.0));
    }

    #[test]
    fn dangling_reference_names_the_id() {
        let doc = MINIMAL.replace(r#"<nd ref="4"/>"#, r#"<nd ref="99"/>"#);
        let err = parse_osmag(&doc).unwrap_err();
        assert_eq!(
            err,
            ParseError::DanglingNode {
                way: 10,
                node: 99,
                line: 7
            }
        );
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn duplicate_node_id() {
        let doc = MINIMAL.replace(r#"<node id="4""#, r#"<node id="3""#);
        assert!(matches!(
            parse_osmag(&doc),
            Err(ParseError::DuplicateId {
                kind: "node",
                id: 3,
                line: 6
            })
        ));
    }

    #[test]
    fn missing_type() {
        let doc = MINIMAL.replace(r#"<tag k="osmAG:type" v="area"/>"#, "");
        assert_eq!(parse_osmag(&doc), Err(ParseError::MissingType { way: 10, line: 7 }));
    }

    #[test]
    fn malformed_xml_reports_line() {
        let doc = MINIMAL.replace("</way>", "</wya>");
        match parse_osmag(&doc) {
            Err(ParseError::Xml { line, .. }) => assert!(line >= 12, "line {line}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_osmag("not xml"), Err(ParseError::Xml { .. })));
    }

    #[test]
    fn empty_map_is_header_and_root() {
        let s = serialize_osmag(&SemanticMap::new(GeoPoint::new(0.0, 0.0)));
        assert_eq!(
            s,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"osmag-nav\">\n</osm>\n"
        );
        assert!(parse_osmag(&s).unwrap().is_empty());
    }

    #[test]
    fn special_characters_survive() {
        let mut m = parse_osmag(MINIMAL).unwrap();
        m.area_mut(10)
            .unwrap()
            .tags
            .insert("note".into(), "line one\nline \"two\" <&> 'x'\ttab".into());
        let s = serialize_osmag(&m);
        let back = parse_osmag(&s).unwrap();
        assert_eq!(back.area(10).unwrap().tags, m.area(10).unwrap().tags);
        assert_eq!(serialize_osmag(&back), s);
    }
}
