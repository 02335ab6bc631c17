//! One exploration run: build the node graph once, allocate (genetic search on
//! multi-core platforms), schedule every template and keep the best.

use serde::Serialize;

use crate::allocator::{genetic_search, Allocation, GaConfig, Metrics, SearchResult};
use crate::analysis::alpha;
use crate::depgraph::{fine_grained_graph, NodeGraph};
use crate::error::{Error, Result};
use crate::hwmodel::HardwareSpec;
use crate::mapper::MappingOverrides;
use crate::scheduler::{schedule_in, Priority, Schedule, ScheduleContext, SchedulePolicy, Template};
use crate::workload::LayerGraph;

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    /// Templates to schedule; all of them when empty.
    pub templates: Vec<Template>,
    /// Templates the genetic search runs under. Empty: the template with the
    /// lowest closed-form footprint for the head shape.
    pub search_templates: Vec<Template>,
    /// Ranks candidates. Memory compares peaks first, latency makespans.
    pub priority: Priority,
    pub ga: GaConfig,
    pub overrides: MappingOverrides,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            templates: Vec::new(),
            search_templates: Vec::new(),
            priority: Priority::Latency,
            ga: GaConfig::default(),
            overrides: MappingOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub template: Template,
    pub allocation: Allocation,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub candidates: Vec<Candidate>,
    pub best: usize,
    pub schedule: Schedule,
    pub node_graph: NodeGraph,
    pub searches: Vec<(Template, SearchResult)>,
}

impl Exploration {
    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[self.best]
    }

    pub fn candidate(&self, t: Template) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.template == t)
    }
}

fn head_shape(g: &LayerGraph) -> Option<(u64, u64)> {
    let q = g.layer(g.find_role(0, crate::workload::HeadRole::Query)?);
    Some((q.output_shape.rows as u64, q.output_shape.cols as u64))
}

fn policy(t: Template, cfg: &ExploreConfig) -> SchedulePolicy {
    SchedulePolicy { overrides: cfg.overrides.clone(), ..SchedulePolicy::template(t) }
}

pub fn explore(g: &LayerGraph, hw: &HardwareSpec, cfg: &ExploreConfig) -> Result<Exploration> {
    let gaps = hw.capability_gaps(&g.layers.iter().map(|l| l.kind).collect::<Vec<_>>());
    if !gaps.is_empty() {
        return Err(Error::CapabilityGap(gaps));
    }
    let templates = if cfg.templates.is_empty() { Template::ALL.to_vec() } else { cfg.templates.clone() };
    let ng = fine_grained_graph(g, &SchedulePolicy::template(templates[0]).split_plan(g))?;
    let ctx = ScheduleContext::new(g, &ng)?;

    let mut allocations = Vec::new();
    let mut searches = Vec::new();
    if hw.cores.len() > 1 {
        let search_templates = if cfg.search_templates.is_empty() {
            let (m, n) = head_shape(g).ok_or_else(|| Error::InvalidArgument("workload has no attention head".into()))?;
            vec![alpha(m, n).1]
        } else {
            cfg.search_templates.clone()
        };
        for t in search_templates {
            let r = genetic_search(g, &ng, hw, &policy(t, cfg), &cfg.ga)?;
            allocations.push(r.allocation.clone());
            searches.push((t, r));
        }
    } else {
        let core = hw.cores.first().ok_or_else(|| Error::InvalidArgument("platform has no cores".into()))?;
        allocations.push(Allocation::on_core(g, hw, core.id)?);
    }

    let mut candidates = Vec::new();
    let mut schedules = Vec::new();
    for &t in &templates {
        let p = policy(t, cfg);
        let mut best: Option<(Schedule, Allocation)> = None;
        for a in &allocations {
            let s = schedule_in(&ctx, g, &ng, a, hw, &p)?;
            let better = match &best {
                None => true,
                Some((b, _)) => rank(&s, cfg.priority) < rank(b, cfg.priority),
            };
            if better {
                best = Some((s, a.clone()));
            }
        }
        let (s, a) = best.expect("at least one allocation");
        candidates.push(Candidate {
            template: t,
            allocation: a,
            metrics: Metrics { makespan: s.makespan(), energy: s.energy(), peak_memory: s.peak_memory() },
        });
        schedules.push(s);
    }
    let best = pick(&candidates, cfg.priority);
    let schedule = schedules.swap_remove(best);
    Ok(Exploration { candidates, best, schedule, node_graph: ng, searches })
}

fn rank(s: &Schedule, p: Priority) -> (u64, u64) {
    match p {
        Priority::Memory => (s.peak_memory(), s.makespan()),
        _ => (s.makespan(), s.peak_memory()),
    }
}

fn pick(c: &[Candidate], p: Priority) -> usize {
    let ms_min = c.iter().map(|c| c.metrics.makespan).min().unwrap_or(1).max(1) as f64;
    let pk_min = c.iter().map(|c| c.metrics.peak_memory).min().unwrap_or(1).max(1) as f64;
    let score = |m: &Metrics| -> (f64, f64) {
        let (ms, pk) = (m.makespan as f64, m.peak_memory as f64);
        match p {
            Priority::Latency => (ms, pk),
            Priority::Memory => (pk, ms),
            Priority::Weighted(l) => (l * pk / pk_min + (1.0 - l) * ms / ms_min, ms),
        }
    };
    (0..c.len())
        .min_by(|&a, &b| {
            let (x, y) = (score(&c[a].metrics), score(&c[b].metrics));
            x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(a.cmp(&b))
        })
        .unwrap_or(0)
}
