//! Two-dimensional scatter plots of label embeddings.

use std::fmt::Write as _;

use conetax::{EmbeddingTable, Hierarchy};

/// Fill colours by level: family, subfamily, genus, species.
pub const LEVEL_COLOURS: [&str; 4] = ["cyan", "magenta", "yellow", "black"];

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of the first two coordinates of every row. With a hierarchy,
/// nodes are coloured by level and reduction edges are drawn as lines.
pub fn render(table: &EmbeddingTable, h: Option<&Hierarchy>, title: &str) -> String {
    let xy: Vec<(f64, f64)> = (0..table.len())
        .map(|i| {
            let r = table.row(i);
            (r[0], r.get(1).copied().unwrap_or(0.0))
        })
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &xy {
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    let scale = (SIZE - 2.0 * MARGIN) / (hi - lo);
    let px = |v: f64| MARGIN + (v - lo) * scale;
    let py = |v: f64| SIZE - MARGIN - (v - lo) * scale;

    let mut title = title.to_string();
    if table.dim() > 2 {
        title.push_str(&format!(" (first 2 of {} coordinates)", table.dim()));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some(h) = h {
        let _ = writeln!(out, r#"<g stroke="grey" stroke-width="0.5">"#);
        for (u, v) in h.transitive_reduction() {
            let (Some(a), Some(b)) = (table.index_of(h.id(u)), table.index_of(h.id(v))) else {
                continue;
            };
            let _ = writeln!(
                out,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
                px(xy[a].0),
                py(xy[a].1),
                px(xy[b].0),
                py(xy[b].1)
            );
        }
        let _ = writeln!(out, "</g>");
    }

    let _ = writeln!(out, r#"<g stroke="black" stroke-width="0.3">"#);
    for (i, id) in table.ids().iter().enumerate() {
        let colour = h
            .and_then(|h| h.index_of(id))
            .map(|n| LEVEL_COLOURS[(h.unwrap().level(n) - 1) % LEVEL_COLOURS.len()])
            .unwrap_or("grey");
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="{colour}"><title>{}</title></circle>"#,
            px(xy[i].0),
            py(xy[i].1),
            escape(id)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}
