//! End-to-end runs producing named text artifacts, independent of any file
//! system so they can be compared byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::GaConfig;
use crate::analysis::{
    alpha, alpha_limits, alpha_sweep, seqlen_scaling_check, verify_grid, ClosedForms, ScalingReport, VerifyReport,
};
use crate::error::{Error, Result};
use crate::explore::{explore, Exploration, ExploreConfig};
use crate::export;
use crate::hwmodel::HardwareSpec;
use crate::workload::{HeadRole, LayerGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    ScheduleJson,
    MemtraceCsv,
    GanttSvg,
    GanttAscii,
    ReportCsv,
    AlphaSvg,
}

impl Artifact {
    pub const ALL: [Artifact; 6] = [
        Artifact::ScheduleJson,
        Artifact::MemtraceCsv,
        Artifact::GanttSvg,
        Artifact::GanttAscii,
        Artifact::ReportCsv,
        Artifact::AlphaSvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Artifact::ScheduleJson => "schedule_json",
            Artifact::MemtraceCsv => "memtrace_csv",
            Artifact::GanttSvg => "gantt_svg",
            Artifact::GanttAscii => "gantt_ascii",
            Artifact::ReportCsv => "report_csv",
            Artifact::AlphaSvg => "alpha_svg",
        }
    }
}

impl fmt::Display for Artifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Artifact {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Artifact::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Artifact::ALL.iter().map(|a| a.name()).collect();
            Error::InvalidArgument(format!("unknown artifact '{s}' (one of {})", names.join(", ")))
        })
    }
}

/// Output of one exploration: artifact file name to contents.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: BTreeMap<String, String>,
    pub summary: String,
    pub exploration: Exploration,
}

pub fn run_explore(g: &LayerGraph, hw: &HardwareSpec, cfg: &ExploreConfig, emit: &BTreeSet<Artifact>) -> Result<RunOutput> {
    let e = explore(g, hw, cfg)?;
    let best = e.best_candidate();
    let mut files = BTreeMap::new();
    for a in emit {
        match a {
            Artifact::ScheduleJson => {
                files.insert(
                    "schedule.json".to_string(),
                    export::schedule_json(g, hw, &e.schedule, Some(best.template.name())),
                );
            }
            Artifact::MemtraceCsv => {
                files.insert("memtrace.csv".to_string(), export::memtrace_csv(&e.schedule.trace));
                files.insert("memtrace_cores.csv".to_string(), export::core_traces_csv(&e.schedule.core_traces));
            }
            Artifact::GanttSvg => {
                files.insert("gantt.svg".to_string(), export::gantt_svg(g, hw, &e.schedule));
            }
            Artifact::GanttAscii => {
                files.insert("gantt.txt".to_string(), export::gantt_ascii(g, hw, &e.schedule, 96));
            }
            Artifact::ReportCsv => {
                files.insert("report.csv".to_string(), export::report_csv(g, &e));
            }
            Artifact::AlphaSvg => {
                let pts = alpha_sweep(1.0 / 64.0, 64.0, 97)?;
                files.insert("alpha.svg".to_string(), export::alpha_svg(&pts));
                files.insert("alpha.csv".to_string(), export::alpha_csv(&pts));
            }
        }
    }
    for (t, r) in &e.searches {
        files.insert(format!("ga_{t}.csv"), r.log_csv());
    }
    let summary = summarize(g, hw, &e);
    Ok(RunOutput { files, summary, exploration: e })
}

fn summarize(g: &LayerGraph, hw: &HardwareSpec, e: &Exploration) -> String {
    let mut s = String::new();
    let q = g.find_role(0, HeadRole::Query).map(|q| g.layer(q).output_shape);
    if let Some(shape) = q {
        let _ = writeln!(s, "workload  {} head(s) of M={} N={}", g.head_count, shape.rows, shape.cols);
    }
    let _ = writeln!(s, "platform  {} ({} cores, {} simd)", hw.name, hw.cores.len(), hw.simd.len());
    let _ = writeln!(s, "{:<20} {:>12} {:>14} {:>16}", "template", "makespan", "peak words", "energy");
    for (i, c) in e.candidates.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<20} {:>12} {:>14} {:>16.1}{}",
            c.template.name(),
            c.metrics.makespan,
            c.metrics.peak_memory,
            c.metrics.energy,
            if i == e.best { "  <- best" } else { "" }
        );
    }
    if let Some(shape) = q {
        let (a, t) = alpha(shape.rows as u64, shape.cols as u64);
        let _ = writeln!(s, "closed-form alpha {a} ({t})");
    }
    s
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub grid: VerifyReport,
    pub scaling: Option<ScalingReport>,
    pub limits_ok: bool,
    pub text: String,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.grid.passed() && self.limits_ok && self.scaling.as_ref().map(ScalingReport::passed).unwrap_or(true)
    }
}

/// Simulation-vs-formula checks over `sizes`², the α limits, and optionally
/// the sequence-length scaling check on `scaling_hw`.
pub fn run_verify(
    sizes: &[u64],
    hw: &HardwareSpec,
    forms: &ClosedForms,
    scaling: Option<(&HardwareSpec, &GaConfig)>,
) -> Result<VerifyOutcome> {
    let grid = verify_grid(sizes, hw, forms)?;
    let mut text = String::new();
    let failures: Vec<String> = grid.failures().map(|c| c.to_string()).collect();
    let _ = writeln!(text, "grid {:?} on {}: {} checks, {} failed", sizes, hw.name, grid.checks.len(), failures.len());
    for f in &failures {
        let _ = writeln!(text, "  {f}");
    }
    let limits = alpha_limits();
    let limits_ok = limits.iter().all(|l| l.pass());
    for l in limits.iter().filter(|l| !l.pass()) {
        let _ = writeln!(text, "  FAILED: {} at M={}, N={}: {} vs {}", l.name, l.m, l.n, l.value, l.target);
    }
    let _ = writeln!(text, "alpha limits: {}", if limits_ok { "ok" } else { "FAILED" });
    let scaling = match scaling {
        Some((shw, ga)) => {
            let r = seqlen_scaling_check(shw, 32, 81, 128, ga)?;
            let _ = writeln!(
                text,
                "scaling on {}: makespans {} / {} cycles, ratio {:.4} (reference {:.4}, MAC ratio {:.4}), MAC/cycle {:.3} / {:.3}: {}",
                shw.name,
                r.makespans.0,
                r.makespans.1,
                r.ratio,
                r.estimate_ratio,
                r.mac_ratio,
                r.mac_per_cycle.0,
                r.mac_per_cycle.1,
                if r.passed() { "ok" } else { "FAILED" }
            );
            Some(r)
        }
        None => None,
    };
    Ok(VerifyOutcome { grid, scaling, limits_ok, text })
}
