use osmag_nav::{MetricsReport, RetrievalPlan, SemanticMap};

/// Ranked rooms with their candidate nodes, then any dropped entries.
pub fn plan(map: &SemanticMap, plan: &RetrievalPlan) -> String {
    let mut out = Vec::new();
    for (rank, room) in plan.rooms.iter().enumerate() {
        let name = map
            .area(room.area_id)
            .map(|a| a.display_name())
            .unwrap_or_else(|| room.name.clone());
        out.push(format!("{}. {} [{}]", rank + 1, name, room.area_id));
        for id in &room.nodes {
            let labels = map.node(*id).map(|n| n.labels().join(", ")).unwrap_or_default();
            out.push(format!("   node {id}: {labels}"));
        }
    }
    if plan.rooms.iter().all(|r| r.nodes.is_empty()) {
        out.push("   (room-level plan, no nodes)".into());
    }
    for d in &plan.drops {
        let what = match (d.room_id, d.node_id) {
            (_, Some(n)) => format!("node {n}"),
            (Some(r), None) => format!("room {r}"),
            (None, None) => "entry".into(),
        };
        out.push(format!("dropped {what}: {:?}", d.reason));
    }
    out.join("\n")
}

/// The results table with padded columns, plus the map size when known.
pub fn report(report: &MetricsReport) -> String {
    let rows: Vec<Vec<String>> = report
        .table_rows()
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|c| if c.is_empty() { "-".into() } else { c })
                .collect()
        })
        .collect();
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|c| c.len()).max().unwrap_or(0))
        .collect();
    let mut out: Vec<String> = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect();
    if let Some(size) = &report.map_size {
        out.push(format!(
            "map size: {} bytes, {} semantic nodes",
            size.map_bytes, size.semantic_nodes
        ));
        for c in &size.comparisons {
            out.push(format!("  {}: {} bytes", c.path, c.bytes));
        }
    }
    out.join("\n")
}
