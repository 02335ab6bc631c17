//! Closed-form peak footprints of one attention head, the relative gain α of
//! fused over layer-by-layer execution, and checks of the simulator against
//! both.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::allocator::{Allocation, GaConfig};
use crate::error::{Error, Result};
use crate::explore::{explore, ExploreConfig};
use crate::hwmodel::HardwareSpec;
use crate::scheduler::{schedule_graph, Priority, SchedulePolicy, Template};
use crate::workload::build_attention_head;

/// Peak active words of the memory-optimal layer-by-layer schedule.
pub fn closed_form_lbl(m: u64, n: u64) -> u64 {
    if m <= n {
        3 * m * n
    } else {
        2 * m * n + m * m
    }
}

/// Peak active words of a fused template.
pub fn closed_form_lf(m: u64, n: u64, t: Template) -> Result<u64> {
    match t {
        Template::FuseQQkt => Ok(2 * m * n + m * m),
        Template::FuseQktQktv => Ok(3 * m * n),
        other => Err(Error::UnknownTemplate(format!("{other} has no fused closed form"))),
    }
}

pub const FUSED_TEMPLATES: [Template; 2] = [Template::FuseQQkt, Template::FuseQktQktv];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FootprintReport {
    pub m: u64,
    pub n: u64,
    pub a_lbl: u64,
    pub a_lf: Vec<(Template, u64)>,
    pub alpha: f64,
    pub best_template: Template,
}

pub fn footprint(m: u64, n: u64) -> Result<FootprintReport> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("M and N must be positive, got {m}x{n}")));
    }
    let a_lbl = closed_form_lbl(m, n);
    let a_lf: Vec<(Template, u64)> = FUSED_TEMPLATES
        .iter()
        .map(|&t| (t, closed_form_lf(m, n, t).expect("fused template")))
        .collect();
    let (alpha, best_template) = alpha(m, n);
    Ok(FootprintReport { m, n, a_lbl, a_lf, alpha, best_template })
}

/// α = A_LF / A_LBL for the best fused template. At M = N no template gains
/// and the layer-by-layer schedule is reported.
pub fn alpha(m: u64, n: u64) -> (f64, Template) {
    let lbl = closed_form_lbl(m, n);
    let (t, lf) = FUSED_TEMPLATES
        .iter()
        .map(|&t| (t, closed_form_lf(m, n, t).expect("fused template")))
        .min_by_key(|&(_, w)| w)
        .expect("two templates");
    if lf >= lbl {
        (1.0, Template::LblMemoryOptimal)
    } else {
        (lf as f64 / lbl as f64, t)
    }
}

/// α as a function of r = M/N alone.
pub fn alpha_of_ratio(r: f64) -> f64 {
    if r < 1.0 {
        (2.0 + r) / 3.0
    } else if r > 1.0 {
        3.0 / (2.0 + r)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub alpha: f64,
}

/// `points` ratios spaced geometrically over `[lo, hi]`.
pub fn alpha_sweep(lo: f64, hi: f64, points: usize) -> Result<Vec<SweepPoint>> {
    if !(lo > 0.0 && hi >= lo && points >= 1) {
        return Err(Error::InvalidArgument(format!("bad sweep {lo}..{hi} with {points} points")));
    }
    let step = if points == 1 { 0.0 } else { (hi / lo).ln() / (points - 1) as f64 };
    Ok((0..points)
        .map(|i| {
            let ratio = lo * (step * i as f64).exp();
            SweepPoint { ratio, alpha: alpha_of_ratio(ratio) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCheck {
    pub name: &'static str,
    pub m: u64,
    pub n: u64,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
}

impl LimitCheck {
    pub fn pass(&self) -> bool {
        (self.value - self.target).abs() < self.tolerance
    }
}

/// Both asymptotes of α over a geometric sweep of M/N from 1/256 to 256:
/// α tends to 2/3 for short sequences and to 3N/M for long ones.
pub fn alpha_limits() -> Vec<LimitCheck> {
    let mut checks = Vec::new();
    for k in (0..=8).map(|k| 1u64 << k) {
        let (m, n) = (1, k);
        checks.push(LimitCheck { name: "alpha -> 2/3", m, n, value: alpha(m, n).0, target: 2.0 / 3.0, tolerance: 1.0 / k as f64 });
        let (m, n) = (k, 1);
        checks.push(LimitCheck {
            name: "alpha * M / 3N -> 1",
            m,
            n,
            value: alpha(m, n).0 * m as f64 / (3 * n) as f64,
            target: 1.0,
            tolerance: 2.0 / k as f64,
        });
    }
    checks
}

/// Formulas the simulation is compared with. Replaceable so tests can inject
/// a wrong one.
#[derive(Debug, Clone, Copy)]
pub struct ClosedForms {
    pub lbl: fn(u64, u64) -> u64,
    pub fuse_q_qkt: fn(u64, u64) -> u64,
    pub fuse_qkt_qktv: fn(u64, u64) -> u64,
}

impl Default for ClosedForms {
    fn default() -> Self {
        Self {
            lbl: closed_form_lbl,
            fuse_q_qkt: |m, n| 2 * m * n + m * m,
            fuse_qkt_qktv: |m, n| 3 * m * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    Equal,
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub m: u64,
    pub n: u64,
    pub template: Template,
    pub quantity: &'static str,
    pub relation: Relation,
    pub expected: u64,
    pub actual: u64,
}

impl Check {
    pub fn pass(&self) -> bool {
        match self.relation {
            Relation::Equal => self.actual == self.expected,
            Relation::AtMost => self.actual <= self.expected,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.relation {
            Relation::Equal => "==",
            Relation::AtMost => "<=",
        };
        write!(
            f,
            "{}: {} of {} at M={}, N={}: {} {rel} {}",
            if self.pass() { "ok" } else { "FAILED" },
            self.quantity,
            self.template,
            self.m,
            self.n,
            self.actual,
            self.expected
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass())
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("m,n,template,quantity,relation,expected,actual,pass\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{},{},{},{},{:?},{},{},{}\n",
                c.m, c.n, c.template, c.quantity, c.relation, c.expected, c.actual, c.pass()
            ));
        }
        s
    }
}

pub fn verify_against_simulation(m: u64, n: u64, hw: &HardwareSpec) -> Result<VerifyReport> {
    verify_with(m, n, hw, &ClosedForms::default())
}

/// Schedules one head under every template on the first core of `hw` and
/// compares peaks, trace endpoints and makespans with `forms`.
pub fn verify_with(m: u64, n: u64, hw: &HardwareSpec, forms: &ClosedForms) -> Result<VerifyReport> {
    let g = build_attention_head(m as usize, n as usize)?;
    let core = hw.cores.first().ok_or_else(|| Error::InvalidArgument("platform has no cores".into()))?;
    let alloc = Allocation::on_core(&g, hw, core.id)?;
    let mn = m * n;
    let mut checks = Vec::new();
    let mut lbl_makespan = None;
    for t in [Template::LblMemoryOptimal, Template::FuseQQkt, Template::FuseQktQktv, Template::FuseQQktQktv] {
        let s = schedule_graph(&g, &alloc, hw, &SchedulePolicy::template(t))?;
        let check = |quantity, relation, expected, actual| Check { m, n, template: t, quantity, relation, expected, actual };
        let (relation, expected) = match t {
            Template::LblMemoryOptimal => (Relation::Equal, (forms.lbl)(m, n)),
            Template::FuseQQkt => (Relation::Equal, (forms.fuse_q_qkt)(m, n)),
            Template::FuseQktQktv => (Relation::Equal, (forms.fuse_qkt_qktv)(m, n)),
            _ => (Relation::AtMost, (forms.fuse_qkt_qktv)(m, n)),
        };
        checks.push(check("peak", relation, expected, s.peak_memory()));
        checks.push(check("trace start", Relation::Equal, mn, s.trace.first()));
        checks.push(check("trace end", Relation::Equal, mn, s.trace.last()));
        match (t, lbl_makespan) {
            (Template::LblMemoryOptimal, _) => lbl_makespan = Some(s.makespan()),
            (Template::FuseQQkt | Template::FuseQktQktv, Some(base)) => {
                checks.push(check("makespan", Relation::Equal, base, s.makespan()))
            }
            _ => {}
        }
    }
    Ok(VerifyReport { checks })
}

/// [`verify_with`] over every (M, N) pair of `sizes`.
pub fn verify_grid(sizes: &[u64], hw: &HardwareSpec, forms: &ClosedForms) -> Result<VerifyReport> {
    let pairs: Vec<(u64, u64)> = sizes.iter().flat_map(|&m| sizes.iter().map(move |&n| (m, n))).collect();
    let reports: Vec<VerifyReport> = pairs
        .par_iter()
        .map(|&(m, n)| verify_with(m, n, hw, forms))
        .collect::<Result<_>>()?;
    Ok(VerifyReport { checks: reports.into_iter().flat_map(|r| r.checks).collect() })
}

pub const STANDARD_GRID: [u64; 4] = [64, 128, 256, 512];

/// Published cycle counts for one head (N = 32) at sequence lengths 81 and
/// 128, in millions of cycles: simulator estimates and silicon measurements.
pub const REFERENCE_ESTIMATE_MCYCLES: (f64, f64) = (1.692, 3.540);
pub const REFERENCE_MEASURED_MCYCLES: (f64, f64) = (1.836, 3.905);
/// Measured throughput on the same platform, MAC per cycle.
pub const REFERENCE_MAC_PER_CYCLE: f64 = 3.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub n: u64,
    pub lengths: (u64, u64),
    pub makespans: (u64, u64),
    pub macs: (u64, u64),
    pub templates: (Template, Template),
    pub ratio: f64,
    pub mac_ratio: f64,
    pub estimate_ratio: f64,
    pub measured_ratio: f64,
    pub mac_per_cycle: (f64, f64),
}

impl ScalingReport {
    pub fn within(&self, target: f64, tolerance: f64) -> bool {
        (self.ratio / target - 1.0).abs() <= tolerance
    }

    pub fn near_estimate(&self) -> bool {
        self.within(self.estimate_ratio, 0.10)
    }

    pub fn near_mac_ratio(&self) -> bool {
        self.within(self.mac_ratio, 0.10)
    }

    pub fn throughput_plausible(&self) -> bool {
        [self.mac_per_cycle.0, self.mac_per_cycle.1].iter().all(|r| (2.0..=6.0).contains(r))
    }

    pub fn passed(&self) -> bool {
        self.near_estimate() && self.near_mac_ratio() && self.throughput_plausible()
    }
}

/// Explores one head of width `n` at two sequence lengths and compares the
/// predicted latency ratio with the reference ratios.
pub fn seqlen_scaling_check(hw: &HardwareSpec, n: u64, l1: u64, l2: u64, ga: &GaConfig) -> Result<ScalingReport> {
    let cfg = ExploreConfig {
        templates: Template::ALL.to_vec(),
        search_templates: Template::ALL.to_vec(),
        priority: Priority::Latency,
        ga: *ga,
        ..ExploreConfig::default()
    };
    let mut runs = Vec::new();
    for l in [l1, l2] {
        let g = build_attention_head(l as usize, n as usize)?;
        let e = explore(&g, hw, &cfg)?;
        let c = e.best_candidate();
        runs.push((c.metrics.makespan, g.total_macs(), c.template));
    }
    let (a, b) = (runs[0], runs[1]);
    Ok(ScalingReport {
        n,
        lengths: (l1, l2),
        makespans: (a.0, b.0),
        macs: (a.1, b.1),
        templates: (a.2, b.2),
        ratio: b.0 as f64 / a.0 as f64,
        mac_ratio: b.1 as f64 / a.1 as f64,
        estimate_ratio: REFERENCE_ESTIMATE_MCYCLES.1 / REFERENCE_ESTIMATE_MCYCLES.0,
        measured_ratio: REFERENCE_MEASURED_MCYCLES.1 / REFERENCE_MEASURED_MCYCLES.0,
        mac_per_cycle: (a.1 as f64 / a.0 as f64, b.1 as f64 / b.0 as f64),
    })
}
