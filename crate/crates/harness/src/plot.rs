//! Minimal deterministic SVG line plots of a results CSV.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::HarnessError;
use crate::output::ProbeRecord;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            title: String::new(),
            width: 720,
            height: 440,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum XAxis {
    Step,
    BatchSize,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// One polyline per `(target, estimator)` series, plotted against the step,
/// or against the batch size when every row shares one step. Batch-size
/// plots split series by label mode as well.
pub fn render_svg(rows: &[ProbeRecord], spec: &PlotSpec) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Validation("csv has no data rows".into()));
    }
    let steps: Vec<Option<usize>> = rows.iter().map(|r| r.step).collect();
    let one_step = steps.iter().all(|s| *s == steps[0]);
    let axis = if one_step && rows.iter().all(|r| r.batch_size.is_some()) && rows.len() > 1 {
        XAxis::BatchSize
    } else {
        XAxis::Step
    };
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let x = match axis {
            XAxis::Step => r.step,
            XAxis::BatchSize => r.batch_size,
        }
        .ok_or_else(|| HarnessError::Validation(format!("csv row {}: missing x value", i + 2)))?;
        let mut key = format!("{}/{}", r.target, r.estimator);
        if axis == XAxis::BatchSize {
            if let Some(l) = &r.label_mode {
                key.push_str(&format!(" ({l})"));
            }
        }
        series.entry(key).or_default().push((x as f64, r.cosine));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, top, bottom) = (64.0, 220.0, 36.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs = series.values().flatten().map(|p| p.0);
    let ys = series.values().flatten().map(|p| p.1);
    let (mut x0, mut x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, spec.width, spec.height);
    if !spec.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            num(left + pw / 2.0),
            escape(&spec.title)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        num(left),
        num(top),
        num(pw),
        num(ph)
    );
    for k in 0..=4 {
        let f = f64::from(k) / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            num(sx(xv)),
            num(top + ph + 16.0),
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            num(left - 6.0),
            num(sy(yv) + 4.0),
            tick_label(yv)
        );
    }
    let xlabel = match axis {
        XAxis::Step => "step",
        XAxis::BatchSize => "batch size",
    };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{xlabel}</text>"#,
        num(left + pw / 2.0),
        num(h - 10.0)
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", num(sx(x)), num(sy(y)))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}"/>"#, num(sx(x)), num(sy(y)));
        }
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            num(lx),
            num(ly - 4.0),
            num(lx + 18.0),
            num(ly - 4.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            num(lx + 24.0),
            num(ly),
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
