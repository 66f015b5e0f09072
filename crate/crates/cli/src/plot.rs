//! Median-vs-n plots of the summary cells, one series per quantity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;

use crate::output::{write_text, CellSummary};

fn series(cells: &[CellSummary]) -> BTreeMap<&str, Vec<&CellSummary>> {
    let mut out: BTreeMap<&str, Vec<&CellSummary>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.median.is_finite() && c.n > 0.0) {
        out.entry(c.quantity.as_str()).or_default().push(c);
    }
    out
}

/// `plot.dat` with one block per quantity and `plot.gp` drawing them.
pub fn write_gnuplot(dir: &Path, title: &str, cells: &[CellSummary]) -> Result<()> {
    let mut data = String::new();
    let groups = series(cells);
    for (name, pts) in &groups {
        writeln!(data, "\"{name}\"")?;
        for c in pts {
            let q1 = if c.q1.is_finite() { c.q1 } else { c.median };
            let q3 = if c.q3.is_finite() { c.q3 } else { c.median };
            writeln!(data, "{} {} {} {}", c.n, c.median, q1, q3)?;
        }
        data.push_str("\n\n");
    }
    let script = format!(
        "set title \"{title}\"\nset logscale x\nset xlabel \"n\"\nset ylabel \"median (interquartile bars)\"\nset key outside\n\
         plot for [i=0:{}] \"plot.dat\" index i using 1:2:3:4 with yerrorlines title columnheader(1)\n",
        groups.len().saturating_sub(1)
    );
    write_text(Some(&dir.join("plot.dat")), &data)?;
    write_text(Some(&dir.join("plot.gp")), &script)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const LEGEND: f64 = 220.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

pub fn write_svg(path: &Path, title: &str, cells: &[CellSummary]) -> Result<()> {
    let groups = series(cells);
    let all: Vec<&CellSummary> = groups.values().flatten().copied().collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &all {
        x0 = x0.min(c.n.ln());
        x1 = x1.max(c.n.ln());
        for y in [c.median, c.q1, c.q3].into_iter().filter(|y| y.is_finite()) {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let px = |n: f64| MARGIN + (n.ln() - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#)?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, MARGIN + plot_w / 2.0)?;
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )?;
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n (log scale)</text>"#, MARGIN + plot_w / 2.0, HEIGHT - 15.0)?;
    for (v, anchor_y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN + 10.0)] {
        writeln!(s, r#"<text x="{}" y="{anchor_y}" text-anchor="end">{v:.3}</text>"#, MARGIN - 6.0)?;
    }
    for (v, anchor_x) in [(x0.exp(), MARGIN), (x1.exp(), MARGIN + plot_w)] {
        writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle">{v:.0}</text>"#, HEIGHT - MARGIN + 16.0)?;
    }
    for (i, (name, pts)) in groups.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = pts.iter().map(|c| format!("{:.2},{:.2}", px(c.n), py(c.median))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "))?;
        for c in pts {
            if c.q1.is_finite() && c.q3.is_finite() {
                writeln!(
                    s,
                    r#"<line x1="{x:.2}" x2="{x:.2}" y1="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    py(c.q1),
                    py(c.q3),
                    x = px(c.n)
                )?;
            }
        }
        let ly = MARGIN + 16.0 * i as f64;
        let lx = WIDTH - LEGEND - MARGIN / 2.0 + 10.0;
        writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0)?;
        writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 24.0, ly + 4.0)?;
    }
    s.push_str("</svg>\n");
    write_text(Some(path), &s)
}
