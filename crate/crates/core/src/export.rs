//! Text artifacts: schedule JSON, trace and report CSVs, Gantt charts.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::analysis::{closed_form_lbl, SweepPoint};
use crate::explore::Exploration;
use crate::hwmodel::{HardwareSpec, ResourceId};
use crate::scheduler::{MemoryTrace, Schedule};
use crate::workload::{HeadRole, LayerGraph};

#[derive(Serialize)]
struct NodeRecord<'a> {
    node: usize,
    layer: &'a str,
    index: usize,
    resource: ResourceId,
    start: u64,
    end: u64,
    compute_cycles: u64,
    stall_cycles: u64,
}

#[derive(Serialize)]
struct LayerRecord<'a> {
    layer: &'a str,
    resource: ResourceId,
    start: u64,
    end: u64,
    bypassed: bool,
    mapping: String,
}

#[derive(Serialize)]
struct ScheduleDoc<'a> {
    platform: &'a str,
    template: Option<String>,
    makespan: u64,
    peak_memory: u64,
    energy: f64,
    layers: Vec<LayerRecord<'a>>,
    nodes: Vec<NodeRecord<'a>>,
}

/// Per-node core, start and end as pretty JSON.
pub fn schedule_json(g: &LayerGraph, hw: &HardwareSpec, s: &Schedule, template: Option<&str>) -> String {
    let layers = g
        .layers
        .iter()
        .filter_map(|l| {
            let (start, end) = s.layer_span(l.id)?;
            Some(LayerRecord {
                layer: &l.name,
                resource: s.nodes.iter().find(|n| n.layer == l.id).map(|n| n.resource).unwrap_or(0),
                start,
                end,
                bypassed: s.bypassed.contains(&l.id),
                mapping: s.mappings.get(&l.id).map(|m| m.to_string()).unwrap_or_default(),
            })
        })
        .collect();
    let nodes = s
        .nodes
        .iter()
        .map(|n| NodeRecord {
            node: n.node,
            layer: &g.layer(n.layer).name,
            index: n.index,
            resource: n.resource,
            start: n.start,
            end: n.end,
            compute_cycles: n.compute_cycles,
            stall_cycles: n.stall_cycles,
        })
        .collect();
    let doc = ScheduleDoc {
        platform: &hw.name,
        template: template.map(str::to_string),
        makespan: s.makespan(),
        peak_memory: s.peak_memory(),
        energy: s.energy(),
        layers,
        nodes,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("schedule serializes");
    out.push('\n');
    out
}

pub fn memtrace_csv(trace: &MemoryTrace) -> String {
    let mut s = String::from("time,active_words\n");
    for p in &trace.points {
        let _ = writeln!(s, "{},{}", p.time, p.words);
    }
    s
}

/// Per-core traces in long form.
pub fn core_traces_csv(traces: &BTreeMap<ResourceId, MemoryTrace>) -> String {
    let mut s = String::from("core,time,active_words\n");
    for (core, t) in traces {
        for p in &t.points {
            let _ = writeln!(s, "{core},{},{}", p.time, p.words);
        }
    }
    s
}

/// One row per scheduled template.
pub fn report_csv(g: &LayerGraph, e: &Exploration) -> String {
    let mut s = String::from("template,makespan,energy,peak_memory,peak_vs_lbl,closed_form_lbl,best\n");
    let shape = g
        .find_role(0, HeadRole::Query)
        .map(|q| g.layer(q).output_shape)
        .map(|sh| (sh.rows as u64, sh.cols as u64));
    let lbl_peak = e
        .candidate(crate::scheduler::Template::LblMemoryOptimal)
        .map(|c| c.metrics.peak_memory);
    for (i, c) in e.candidates.iter().enumerate() {
        let ratio = lbl_peak
            .filter(|&p| p > 0)
            .map(|p| format!("{}", c.metrics.peak_memory as f64 / p as f64))
            .unwrap_or_default();
        let closed = shape.map(|(m, n)| (closed_form_lbl(m, n) * g.head_count as u64).to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.template,
            c.metrics.makespan,
            c.metrics.energy,
            c.metrics.peak_memory,
            ratio,
            closed,
            i == e.best
        );
    }
    s
}

fn role_color(role: Option<HeadRole>) -> &'static str {
    match role {
        Some(HeadRole::Query) => "#4e79a7",
        Some(HeadRole::Key) => "#f28e2b",
        Some(HeadRole::Value) => "#59a14f",
        Some(HeadRole::KeyT) => "#bab0ac",
        Some(HeadRole::Scores) => "#e15759",
        Some(HeadRole::Probs) => "#b07aa1",
        Some(HeadRole::Output) => "#76b7b2",
        None => "#9c755f",
    }
}

fn resource_label(hw: &HardwareSpec, r: ResourceId) -> String {
    if hw.simd_unit(r).is_some() {
        format!("simd {r}")
    } else {
        format!("core {r}")
    }
}

/// Gantt chart of every resource with the total memory trace below it.
pub fn gantt_svg(g: &LayerGraph, hw: &HardwareSpec, s: &Schedule) -> String {
    let resources = hw.resources();
    let span = s.makespan().max(1) as f64;
    let (left, width, lane, gap) = (80.0, 900.0, 22.0, 6.0);
    let lanes_h = resources.len() as f64 * (lane + gap);
    let plot_h = 160.0;
    let height = lanes_h + plot_h + 70.0;
    let x = |t: u64| left + t as f64 / span * width;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="11">"#,
        left + width + 20.0
    );
    for (i, &r) in resources.iter().enumerate() {
        let y = 10.0 + i as f64 * (lane + gap);
        let _ = writeln!(out, r#"<text x="4" y="{}">{}</text>"#, y + lane * 0.7, resource_label(hw, r));
        let _ = writeln!(out, r##"<rect x="{left}" y="{y}" width="{width}" height="{lane}" fill="#f4f4f4"/>"##);
        for n in s.nodes.iter().filter(|n| n.resource == r && n.end > n.start) {
            let layer = g.layer(n.layer);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y}" width="{:.2}" height="{lane}" fill="{}"><title>{} #{} [{}, {})</title></rect>"#,
                x(n.start),
                (x(n.end) - x(n.start)).max(0.2),
                role_color(layer.role.map(|(_, r)| r)),
                layer.name,
                n.index,
                n.start,
                n.end
            );
        }
    }
    let base = lanes_h + 20.0 + plot_h;
    let peak = s.trace.peak.max(1) as f64;
    let yv = |w: u64| base - w as f64 / peak * plot_h;
    let mut path = String::new();
    let mut prev: Option<u64> = None;
    for p in &s.trace.points {
        if let Some(w) = prev {
            let _ = write!(path, "L{:.2},{:.2} ", x(p.time), yv(w));
        } else {
            let _ = write!(path, "M{:.2},{:.2} ", x(p.time), yv(p.words));
        }
        let _ = write!(path, "L{:.2},{:.2} ", x(p.time), yv(p.words));
        prev = Some(p.words);
    }
    if let Some(w) = prev {
        let _ = write!(path, "L{:.2},{:.2}", x(s.makespan()), yv(w));
    }
    let _ = writeln!(out, r##"<path d="{}" fill="none" stroke="#333" stroke-width="1.2"/>"##, path.trim_end());
    let _ = writeln!(out, r##"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="#999"/>"##, left + width);
    let _ = writeln!(out, r#"<text x="4" y="{}">peak {}</text>"#, base - plot_h + 4.0, s.trace.peak);
    let _ = writeln!(out, r#"<text x="4" y="{}">words</text>"#, base);
    let _ = writeln!(out, r#"<text x="{left}" y="{}">0</text>"#, base + 16.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{} cycles</text>"#, left + width, base + 16.0, s.makespan());
    let mut lx = left;
    for role in HeadRole::ALL {
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            base + 30.0,
            role_color(Some(role)),
            lx + 14.0,
            base + 39.0,
            role.short()
        );
        lx += 60.0;
    }
    out.push_str("</svg>\n");
    out
}

/// Text Gantt: one line per resource, each column a time bin showing the
/// role that was busy longest in it.
pub fn gantt_ascii(g: &LayerGraph, hw: &HardwareSpec, s: &Schedule, columns: usize) -> String {
    let columns = columns.max(1);
    let span = s.makespan().max(1);
    let mut out = String::new();
    for r in hw.resources() {
        let mut busy: Vec<BTreeMap<char, u64>> = vec![BTreeMap::new(); columns];
        for n in s.nodes.iter().filter(|n| n.resource == r && n.end > n.start) {
            let c = glyph(g.layer(n.layer).role.map(|(_, r)| r));
            let first = (n.start * columns as u64 / span) as usize;
            let last = (((n.end - 1) * columns as u64) / span) as usize;
            for (col, bin) in busy.iter_mut().enumerate().take(last.min(columns - 1) + 1).skip(first) {
                let lo = (col as u64 * span).div_ceil(columns as u64).max(n.start);
                let hi = (((col + 1) as u64 * span).div_ceil(columns as u64)).min(n.end);
                *bin.entry(c).or_default() += hi.saturating_sub(lo).max(1);
            }
        }
        let line: String = busy
            .iter()
            .map(|b| b.iter().max_by_key(|(c, t)| (**t, std::cmp::Reverse(**c))).map(|(c, _)| *c).unwrap_or('.'))
            .collect();
        let _ = writeln!(out, "{:<8}|{line}|", resource_label(hw, r));
    }
    let _ = writeln!(out, "{:<8} 0{:>width$}", "", format!("{span} cycles"), width = columns + 1);
    let _ = writeln!(out, "Q=q K=k V=v QKT=s softmax=p PV=o  peak {} words", s.trace.peak);
    out
}

fn glyph(role: Option<HeadRole>) -> char {
    match role {
        Some(HeadRole::Query) => 'q',
        Some(HeadRole::Key) => 'k',
        Some(HeadRole::Value) => 'v',
        Some(HeadRole::KeyT) => 't',
        Some(HeadRole::Scores) => 's',
        Some(HeadRole::Probs) => 'p',
        Some(HeadRole::Output) => 'o',
        None => '#',
    }
}

pub fn alpha_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("m_over_n,alpha\n");
    for p in points {
        let _ = writeln!(s, "{},{}", p.ratio, p.alpha);
    }
    s
}

/// α against M/N on a log2 axis.
pub fn alpha_svg(points: &[SweepPoint]) -> String {
    let (left, top, width, height) = (60.0, 20.0, 600.0, 300.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="monospace" font-size="11">"#,
        left + width + 20.0,
        top + height + 50.0
    );
    if points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let lx: Vec<f64> = points.iter().map(|p| p.ratio.log2()).collect();
    let (lo, hi) = (lx[0], lx[lx.len() - 1]);
    let range = (hi - lo).max(1e-9);
    let x = |v: f64| left + (v - lo) / range * width;
    let y = |a: f64| top + (1.0 - a) * height;
    let _ = writeln!(out, r##"<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="#999"/>"##);
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#eee"/><text x="{2}" y="{3:.2}" text-anchor="end">{a}</text>"##,
            y(a),
            left + width,
            left - 6.0,
            y(a) + 4.0
        );
    }
    let mut k = lo.ceil() as i64;
    while (k as f64) <= hi {
        let label = if k >= 0 { format!("{}", 1u64 << k) } else { format!("1/{}", 1u64 << (-k)) };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            x(k as f64),
            top + height + 16.0
        );
        k += 2;
    }
    let d: Vec<String> = points
        .iter()
        .zip(&lx)
        .enumerate()
        .map(|(i, (p, &v))| format!("{}{:.2},{:.2}", if i == 0 { "M" } else { "L" }, x(v), y(p.alpha)))
        .collect();
    let _ = writeln!(out, r##"<path d="{}" fill="none" stroke="#e15759" stroke-width="2"/>"##, d.join(" "));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">M / N</text><text x="12" y="{}">alpha</text>"#,
        left + width / 2.0,
        top + height + 36.0,
        top + 10.0
    );
    out.push_str("</svg>\n");
    out
}
