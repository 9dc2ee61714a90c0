use std::fmt::Write;

use super::{EquityReport, HeterogeneityTable};

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart of tier means: one panel per model, one group per G.
pub fn equity_svg(report: &EquityReport) -> String {
    let values: Vec<f64> = report
        .models
        .iter()
        .flat_map(|m| m.per_granularity.iter().flat_map(|g| g.tier_means.values().copied()))
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else { (lo.min(hi - 1e-9), hi) };
    let span = (hi - lo) * 1.1;
    let floor = lo - (hi - lo) * 0.1;
    let (bar_w, gap, plot_h, left, top) = (18.0, 14.0, 200.0, 60.0, 40.0);

    let mut body = String::new();
    let mut x = left;
    for (mi, model) in report.models.iter().enumerate() {
        let panel_x = x;
        for g in &model.per_granularity {
            let group_x = x;
            for (ti, (tier, v)) in g.tier_means.iter().enumerate() {
                let h = if span > 0.0 { (v - floor) / span * plot_h } else { plot_h / 2.0 };
                let _ = writeln!(
                    body,
                    r#"<rect x="{:.1}" y="{:.1}" width="{bar_w}" height="{:.1}" fill="{}"><title>{} G={} tier {}: {:.4}</title></rect>"#,
                    x,
                    top + plot_h - h,
                    h,
                    PALETTE[ti % PALETTE.len()],
                    escape(&model.model),
                    g.granularity,
                    tier,
                    v
                );
                x += bar_w;
            }
            let _ = writeln!(
                body,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">G={}</text>"#,
                (group_x + x) / 2.0,
                top + plot_h + 14.0,
                g.granularity
            );
            x += gap;
        }
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{} (gap {:.2})</text>"#,
            (panel_x + x - gap) / 2.0,
            top + plot_h + 32.0,
            escape(&model.model),
            model.mean_gap
        );
        if mi + 1 < report.models.len() {
            x += gap * 2.0;
        }
    }
    let width = x + 20.0;
    let height = top + plot_h + 50.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    );
    for (label, y) in [(floor + span, top), (floor, top + plot_h)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label:.2}</text>"#,
            left - 4.0,
            y + 3.0
        );
    }
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap of effect magnitudes: rows are (country, topic), columns attributes.
pub fn heterogeneity_svg(table: &HeterogeneityTable) -> String {
    let mut attributes: Vec<&str> = Vec::new();
    let mut rows: Vec<(&str, &str)> = Vec::new();
    for r in &table.rows {
        if !attributes.contains(&r.attribute.as_str()) {
            attributes.push(&r.attribute);
        }
        if !rows.contains(&(r.country.as_str(), r.topic.as_str())) {
            rows.push((&r.country, &r.topic));
        }
    }
    let max = table.rows.iter().map(|r| r.magnitude).fold(0.0, f64::max);
    let dominant = table.dominant();
    let (cell_w, cell_h, left, top) = (90.0, 22.0, 160.0, 30.0);
    let width = left + cell_w * attributes.len() as f64 + 10.0;
    let height = top + cell_h * rows.len() as f64 + 10.0;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    svg.push('\n');
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (j, a) in attributes.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            left + cell_w * (j as f64 + 0.5),
            top - 8.0,
            escape(a)
        );
    }
    for (i, (country, topic)) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{} / {}</text>"#,
            left - 6.0,
            y + cell_h * 0.7,
            escape(country),
            escape(topic)
        );
        for (j, a) in attributes.iter().enumerate() {
            let Some(m) = table.magnitude(country, topic, a) else { continue };
            let t = if max > 0.0 { m / max } else { 0.0 };
            let shade = (255.0 - 200.0 * t).round() as u8;
            let x = left + cell_w * j as f64;
            let stroke = if dominant.get(&(country.to_string(), topic.to_string())).map(String::as_str) == Some(*a) {
                r#" stroke="black" stroke-width="2""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="rgb({shade},{shade},255)"{stroke}/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{m:.3}</text>"#,
                x + cell_w / 2.0,
                y + cell_h * 0.7
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
