//! Plain SVG rendering of frontiers and success tables.
//!
//! Output depends only on the input numbers, so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::Method;
use crate::error::Result;

use super::{BenchOutput, FrontierRow, SuccessTable};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn color(m: Method) -> &'static str {
    match m {
        Method::Tap => "#1f77b4",
        Method::Wachter => "#2ca02c",
        Method::Cw => "#d62728",
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, xmax: f64, ymax: f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = x0 + f * (x1 - x0);
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(s, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, y0 + 16.0, f * xmax);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{:.3}</text>"#, x0 - 6.0, f * ymax);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn legend(s: &mut String, methods: &[Method]) {
    for (i, m) in methods.iter().enumerate() {
        let y = MARGIN / 1.5 + 14.0 * i as f64;
        let x = WIDTH - MARGIN / 2.0 - 90.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, color(*m));
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}">{}</text>"#, x + 14.0, m.as_str());
    }
}

fn nice_max(v: f64) -> f64 {
    if v.is_finite() && v > 0.0 {
        v * 1.05
    } else {
        1.0
    }
}

/// Scatter of (ε, δ) for every row of one individual, colored by method.
pub fn frontier_svg(individual: usize, rows: &[&FrontierRow]) -> String {
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let xmax = nice_max(rows.iter().map(|r| finite(r.epsilon)).fold(0.0, f64::max));
    let ymax = nice_max(rows.iter().map(|r| finite(r.delta)).fold(0.0, f64::max));
    let mut s = header(&format!("individual {individual}: cost vs distance to target"));
    axes(&mut s, "epsilon", "delta", xmax, ymax);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let px = x0 + finite(r.epsilon) / xmax * (x1 - x0);
        let py = y0 - finite(r.delta) / ymax * (y0 - y1);
        let fill = if r.verified { color(r.method) } else { "none" };
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="{fill}" stroke="{}"/>"#,
            color(r.method)
        );
    }
    legend(&mut s, &methods);
    s.push_str("</svg>\n");
    s
}

/// Grouped bars of success rate per ε budget for one δ threshold; solid
/// bars are post-verification, outlines pre-verification.
pub fn success_svg(table: &SuccessTable, delta_threshold: f64) -> String {
    let rows: Vec<_> = table.rows.iter().filter(|r| r.delta_threshold == delta_threshold).collect();
    let mut budgets: Vec<f64> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for r in &rows {
        if !budgets.contains(&r.epsilon_budget) {
            budgets.push(r.epsilon_budget);
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut s = header(&format!("success rate, delta threshold {delta_threshold}"));
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let py = y0 - f * (y0 - y1);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{py:.1}" text-anchor="end">{f:.2}</text>"#, x0 - 6.0);
    }
    let group = (x1 - x0) / budgets.len().max(1) as f64;
    let bar = group * 0.8 / methods.len().max(1) as f64;
    for (gi, b) in budgets.iter().enumerate() {
        let gx = x0 + gi as f64 * group + group * 0.1;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group * 0.4,
            y0 + 16.0,
            if b.is_finite() { format!("{b}") } else { "inf".into() }
        );
        for (mi, m) in methods.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.epsilon_budget == *b && r.method == *m) else {
                continue;
            };
            let bx = gx + mi as f64 * bar;
            let h_pre = r.success_rate_pre_verification * (y0 - y1);
            let h_post = r.success_rate_post_verification * (y0 - y1);
            let c = color(*m);
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.2}" y="{:.2}" width="{:.2}" height="{h_pre:.2}" fill="none" stroke="{c}"/>"#,
                y0 - h_pre,
                bar * 0.9
            );
            let _ = writeln!(
                s,
                r#"<rect x="{bx:.2}" y="{:.2}" width="{:.2}" height="{h_post:.2}" fill="{c}"/>"#,
                y0 - h_post,
                bar * 0.9
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epsilon budget</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0);
    legend(&mut s, &methods);
    s.push_str("</svg>\n");
    s
}

/// Writes one frontier plot per individual and one bar chart per δ
/// threshold into `dir`; returns the written paths in order.
pub fn emit_plots(dir: &Path, out: &BenchOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &id in &out.individuals {
        let rows: Vec<&FrontierRow> = out.rows.iter().filter(|r| r.individual_id == id).collect();
        let path = dir.join(format!("frontier_{id}.svg"));
        std::fs::write(&path, frontier_svg(id, &rows))?;
        written.push(path);
    }
    let mut thresholds: Vec<f64> = Vec::new();
    for r in &out.table.rows {
        if !thresholds.contains(&r.delta_threshold) {
            thresholds.push(r.delta_threshold);
        }
    }
    for t in thresholds {
        let path = dir.join(format!("success_delta_{t}.svg"));
        std::fs::write(&path, success_svg(&out.table, t))?;
        written.push(path);
    }
    Ok(written)
}
