//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and strings and returns JSON or SVG text.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use attnfuse::allocator::Allocation;
use attnfuse::analysis::{alpha_sweep, footprint};
use attnfuse::export::{alpha_svg, gantt_ascii, gantt_svg};
use attnfuse::hwmodel::{builtin_names, builtin_platform};
use attnfuse::scheduler::{schedule_graph, SchedulePolicy, Template};
use attnfuse::workload::build_mhsa;

/// Largest M or N the page will simulate.
pub const MAX_DIM: usize = 1024;

#[derive(Serialize)]
struct Curve {
    points: Vec<(f64, f64)>,
    svg: String,
}

/// α over `points` ratios M/N in `[lo, hi]`, as `{points, svg}`.
#[wasm_bindgen]
pub fn alpha_curve(lo: f64, hi: f64, points: usize) -> Result<String, String> {
    if points > 4096 {
        return Err("at most 4096 points".into());
    }
    let pts = alpha_sweep(lo, hi, points).map_err(|e| e.to_string())?;
    let curve = Curve { points: pts.iter().map(|p| (p.ratio, p.alpha)).collect(), svg: alpha_svg(&pts) };
    Ok(serde_json::to_string(&curve).expect("curve serializes"))
}

/// Closed-form footprints and α for one head shape.
#[wasm_bindgen]
pub fn footprints(m: u32, n: u32) -> Result<String, String> {
    let r = footprint(m as u64, n as u64).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&r).expect("report serializes"))
}

#[derive(Serialize)]
struct Simulation {
    platform: String,
    template: String,
    makespan: u64,
    peak_memory: u64,
    trace: Vec<(u64, u64)>,
    gantt_svg: String,
    gantt_text: String,
}

/// Schedules `heads` heads of M x N with one template, heads spread over
/// the cores, and returns the trace and Gantt chart.
#[wasm_bindgen]
pub fn simulate(m: u32, n: u32, heads: u32, platform: &str, template: &str) -> Result<String, String> {
    let (m, n, heads) = (m as usize, n as usize, heads as usize);
    if m > MAX_DIM || n > MAX_DIM || heads > 8 {
        return Err(format!("keep M, N <= {MAX_DIM} and heads <= 8"));
    }
    let t: Template = template.parse().map_err(|e: attnfuse::Error| e.to_string())?;
    let hw = builtin_platform(platform, 1).map_err(|e| e.to_string())?;
    let g = build_mhsa(m, n, heads).map_err(|e| e.to_string())?;
    let alloc = Allocation::head_affinity(&g, &hw).map_err(|e| e.to_string())?;
    let s = schedule_graph(&g, &alloc, &hw, &SchedulePolicy::template(t)).map_err(|e| e.to_string())?;
    let sim = Simulation {
        platform: hw.name.clone(),
        template: t.name().to_string(),
        makespan: s.makespan(),
        peak_memory: s.peak_memory(),
        trace: s.trace.points.iter().map(|p| (p.time, p.words)).collect(),
        gantt_svg: gantt_svg(&g, &hw, &s),
        gantt_text: gantt_ascii(&g, &hw, &s, 80),
    };
    Ok(serde_json::to_string(&sim).expect("simulation serializes"))
}

#[wasm_bindgen]
pub fn platforms() -> String {
    builtin_names().join(",")
}

#[wasm_bindgen]
pub fn templates() -> String {
    Template::ALL.iter().map(|t| t.name()).collect::<Vec<_>>().join(",")
}
