//! Minimal static SVG charts for the report.

use std::fmt::Write as _;

use super::report::{CategoryBar, ModelCurve};
use crate::types::FactCategory;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plot_w() -> f64 {
    W - LEFT - RIGHT
}

fn plot_h() -> f64 {
    H - TOP - BOTTOM
}

fn y_of(v: f64) -> f64 {
    TOP + plot_h() * (1.0 - v.clamp(0.0, 1.0))
}

fn frame(out: &mut String, title: &str, x_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w() / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            LEFT + plot_w(),
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w() / 2.0,
        H - 15.0,
        escape(x_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 15.0,
            y,
            escape(name)
        );
    }
}

/// One polyline per model over the union of bin labels.
pub fn line_chart(title: &str, x_label: &str, curves: &[ModelCurve]) -> String {
    let mut bins: Vec<(usize, &str)> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| (p.lower, p.label.as_str())))
        .collect();
    bins.sort();
    bins.dedup();
    let step = plot_w() / bins.len().max(1) as f64;
    let x_of = |lower: usize| {
        let i = bins.iter().position(|b| b.0 == lower).unwrap_or(0);
        LEFT + step * (i as f64 + 0.5)
    };

    let mut out = String::new();
    frame(&mut out, title, x_label);
    for (lower, label) in &bins {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x_of(*lower),
            TOP + plot_h() + 16.0,
            escape(label)
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", x_of(p.lower), y_of(p.mean_faithscore)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x_of(p.lower),
                y_of(p.mean_faithscore)
            );
        }
    }
    let names: Vec<&str> = curves.iter().map(|c| c.model_name.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per fact category, one bar per model.
pub fn bar_chart(title: &str, bars: &[CategoryBar]) -> String {
    let mut models: Vec<&str> = bars.iter().map(|b| b.model_name.as_str()).collect();
    models.sort();
    models.dedup();
    let group_w = plot_w() / FactCategory::ALL.len() as f64;
    let bar_w = (group_w * 0.8) / models.len().max(1) as f64;

    let mut out = String::new();
    frame(&mut out, title, "fact type");
    for (gi, cat) in FactCategory::ALL.iter().enumerate() {
        let gx = LEFT + group_w * gi as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            TOP + plot_h() + 16.0,
            cat.header()
        );
        for (mi, model) in models.iter().enumerate() {
            let Some(b) = bars.iter().find(|b| b.category == *cat && b.model_name == *model) else {
                continue;
            };
            let y = y_of(b.fraction);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{y:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                gx + group_w * 0.1 + bar_w * mi as f64,
                TOP + plot_h() - y,
                PALETTE[mi % PALETTE.len()]
            );
        }
    }
    legend(&mut out, &models);
    out.push_str("</svg>\n");
    out
}
