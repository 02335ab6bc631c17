//! Event-driven list scheduling of computation nodes plus the
//! active-feature memory trace of the resulting schedule.
//!
//! Memory is tracked per block: one block per graph-input row and one per
//! (non-transpose) node output. A block becomes active when its producer ends
//! and is released when its last consumer ends. When that last read covers the
//! block from the consumer's left operand (row `i` feeding output row `i`) the
//! release happens before the consumer's output is allocated, so a row of one
//! tensor is substituted by a row of the next one.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::Allocation;
use crate::depgraph::{
    fine_grained_graph, input_regions, NodeGraph, NodeId, Region, Span, Split, SplitPlan, TensorRef,
};
use crate::error::{Error, Result};
use crate::hwmodel::{HardwareSpec, OperandRole, ResourceId};
use crate::mapper::{node_latency, optimize_mapping, Executor, Feeds, Mapping, MappingOverrides, NodeCost};
use crate::workload::{HeadRole, LayerGraph, LayerId, LayerKind, Operand};

/// Hand-written schedules of one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// Q, K, Q·Kᵀ, V, softmax, P·V; V overlaps the softmax.
    LblMemoryOptimal,
    /// Q, K, V, Q·Kᵀ, softmax, P·V.
    LblVFirst,
    /// K, then Q fused into Q·Kᵀ, then V, softmax, P·V.
    FuseQQkt,
    /// K, V, Q layer by layer, then Q·Kᵀ, softmax and P·V fused.
    FuseQktQktv,
    /// K, V, then Q, Q·Kᵀ, softmax and P·V fused.
    FuseQQktQktv,
}

struct Phase {
    roles: &'static [HeadRole],
    fused: bool,
}

const fn lbl(roles: &'static [HeadRole]) -> Phase {
    Phase { roles, fused: false }
}

const fn fused(roles: &'static [HeadRole]) -> Phase {
    Phase { roles, fused: true }
}

use HeadRole::{Key as K, KeyT as KT, Output as O, Probs as P, Query as Q, Scores as S, Value as V};

impl Template {
    pub const ALL: [Template; 5] = [
        Template::LblMemoryOptimal,
        Template::LblVFirst,
        Template::FuseQQkt,
        Template::FuseQktQktv,
        Template::FuseQQktQktv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::LblMemoryOptimal => "lbl_memory_optimal",
            Template::LblVFirst => "lbl_v_first",
            Template::FuseQQkt => "fuse_q_qkt",
            Template::FuseQktQktv => "fuse_qkt_qktv",
            Template::FuseQQktQktv => "fuse_q_qkt_qktv",
        }
    }

    pub fn is_fused(self) -> bool {
        !self.fusion_roles().is_empty()
    }

    fn phases(self) -> Vec<Phase> {
        match self {
            Template::LblMemoryOptimal => vec![lbl(&[Q]), lbl(&[K, KT]), lbl(&[S]), lbl(&[V]), lbl(&[P]), lbl(&[O])],
            Template::LblVFirst => vec![lbl(&[Q]), lbl(&[K, KT]), lbl(&[V]), lbl(&[S]), lbl(&[P]), lbl(&[O])],
            Template::FuseQQkt => vec![lbl(&[K, KT]), fused(&[Q, S]), lbl(&[V]), lbl(&[P]), lbl(&[O])],
            Template::FuseQktQktv => vec![lbl(&[K, KT]), lbl(&[V]), lbl(&[Q]), fused(&[S, P, O])],
            Template::FuseQQktQktv => vec![lbl(&[K, KT]), lbl(&[V]), fused(&[Q, S, P, O])],
        }
    }

    fn fusion_roles(self) -> &'static [HeadRole] {
        match self {
            Template::LblMemoryOptimal | Template::LblVFirst => &[],
            Template::FuseQQkt => &[Q],
            Template::FuseQktQktv => &[S, P],
            Template::FuseQQktQktv => &[Q, S, P],
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

/// A template resolved against a concrete graph.
#[derive(Debug, Clone)]
pub struct TemplatePlan {
    pub template: Template,
    pub split: SplitPlan,
    /// Layers in template order, head by head.
    pub order: Vec<LayerId>,
    /// Producer layers whose outputs may bypass counted memory.
    pub fusion_set: BTreeSet<LayerId>,
    phase: BTreeMap<LayerId, (usize, usize, usize)>,
    fused_phase: Vec<bool>,
}

impl TemplatePlan {
    /// (head, phase, position in phase).
    fn rank(&self, layer: LayerId) -> (usize, usize, usize) {
        self.phase[&layer]
    }

    fn same_fused_phase(&self, a: LayerId, b: LayerId) -> bool {
        let (ha, pa, _) = self.rank(a);
        let (hb, pb, _) = self.rank(b);
        ha == hb && pa == pb && self.fused_phase[pa]
    }
}

pub fn apply_template(template: Template, g: &LayerGraph) -> Result<TemplatePlan> {
    let phases = template.phases();
    let mut order = Vec::new();
    let mut phase = BTreeMap::new();
    let mut fusion_set = BTreeSet::new();
    for head in 0..g.head_count {
        for (pi, ph) in phases.iter().enumerate() {
            for (pos, role) in ph.roles.iter().enumerate() {
                let id = g.find_role(head, *role).ok_or_else(|| {
                    Error::InvalidArgument(format!("head {head} has no {} layer", role.short()))
                })?;
                order.push(id);
                phase.insert(id, (head, pi, pos));
                if template.fusion_roles().contains(role) {
                    fusion_set.insert(id);
                }
            }
        }
    }
    if let Some(l) = g.layers.iter().find(|l| !phase.contains_key(&l.id)) {
        return Err(Error::InvalidArgument(format!(
            "template {template} does not cover layer {}",
            l.name
        )));
    }
    Ok(TemplatePlan {
        template,
        split: SplitPlan::uniform(g, Split::rows(1)),
        order,
        fusion_set,
        phase,
        fused_phase: phases.iter().map(|p| p.fused).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    /// Longest remaining path first.
    Latency,
    /// Smallest net growth of active memory first.
    Memory,
    /// `λ` weight on memory, `1 - λ` on latency.
    Weighted(f64),
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Latency => f.write_str("latency"),
            Priority::Memory => f.write_str("memory"),
            Priority::Weighted(l) => write!(f, "weighted:{l}"),
        }
    }
}

impl FromStr for Priority {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(Priority::Latency),
            "memory" => Ok(Priority::Memory),
            _ => {
                let lambda = s
                    .strip_prefix("weighted:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown priority '{s}' (latency, memory or weighted:<0..1>)"
                        ))
                    })?;
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::InvalidArgument(format!("weight {lambda} outside [0, 1]")));
                }
                Ok(Priority::Weighted(lambda))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// A layer starts only after all of its producer layers have finished.
    LayerByLayer,
    /// No layer barrier; nodes run as soon as their inputs exist.
    LayerFusedAuto,
    Template(Template),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulePolicy {
    pub mode: Mode,
    pub priority: Priority,
    pub overrides: MappingOverrides,
}

impl SchedulePolicy {
    pub fn new(mode: Mode, priority: Priority) -> Result<Self> {
        if let Priority::Weighted(l) = priority {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidArgument(format!("weight {l} outside [0, 1]")));
            }
        }
        Ok(Self { mode, priority, overrides: MappingOverrides::default() })
    }

    pub fn template(t: Template) -> Self {
        Self { mode: Mode::Template(t), priority: Priority::Latency, overrides: MappingOverrides::default() }
    }

    pub fn layer_by_layer(priority: Priority) -> Self {
        Self { mode: Mode::LayerByLayer, priority, overrides: MappingOverrides::default() }
    }

    /// Split plan the policy schedules at: one output row per node.
    pub fn split_plan(&self, g: &LayerGraph) -> SplitPlan {
        SplitPlan::uniform(g, Split::rows(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledNode {
    pub node: NodeId,
    pub layer: LayerId,
    pub index: usize,
    pub resource: ResourceId,
    pub start: u64,
    pub end: u64,
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: u64,
    pub words: u64,
}

/// Piecewise-constant active feature memory. Two points may share a time
/// when the value changes in steps at that instant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub points: Vec<TracePoint>,
    pub peak: u64,
}

impl MemoryTrace {
    fn push(&mut self, time: u64, words: u64) {
        if let Some(last) = self.points.last() {
            if last.words == words {
                return;
            }
        }
        self.points.push(TracePoint { time, words });
        self.peak = self.peak.max(words);
    }

    pub fn first(&self) -> u64 {
        self.points.first().map(|p| p.words).unwrap_or(0)
    }

    pub fn last(&self) -> u64 {
        self.points.last().map(|p| p.words).unwrap_or(0)
    }

    /// Value in effect at `time` (after every change at that instant).
    pub fn at(&self, time: u64) -> u64 {
        self.points
            .iter()
            .take_while(|p| p.time <= time)
            .last()
            .map(|p| p.words)
            .unwrap_or(0)
    }

    /// Largest value over `[from, to]`, including changes at both ends.
    pub fn max_between(&self, from: u64, to: u64) -> u64 {
        let mut m = self.at(from);
        for p in &self.points {
            if p.time >= from && p.time <= to {
                m = m.max(p.words);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Indexed by node id.
    pub nodes: Vec<ScheduledNode>,
    pub trace: MemoryTrace,
    /// Per-core share of the trace; SIMD work counts towards its core.
    pub core_traces: BTreeMap<ResourceId, MemoryTrace>,
    /// Layers whose outputs were forwarded without being stored.
    pub bypassed: BTreeSet<LayerId>,
    pub mappings: BTreeMap<LayerId, Mapping>,
}

impl Schedule {
    pub fn makespan(&self) -> u64 {
        makespan(&self.nodes)
    }

    pub fn peak_memory(&self) -> u64 {
        peak_memory(&self.trace)
    }

    pub fn energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.energy).sum()
    }

    /// Time span a layer occupies.
    pub fn layer_span(&self, layer: LayerId) -> Option<(u64, u64)> {
        let mut it = self.nodes.iter().filter(|n| n.layer == layer);
        let first = it.next()?;
        Some(it.fold((first.start, first.end), |(s, e), n| (s.min(n.start), e.max(n.end))))
    }
}

pub fn makespan(nodes: &[ScheduledNode]) -> u64 {
    nodes.iter().map(|n| n.end).max().unwrap_or(0)
}

pub fn peak_memory(trace: &MemoryTrace) -> u64 {
    trace.points.iter().map(|p| p.words).max().unwrap_or(0)
}

#[derive(Debug, Clone)]
struct Block {
    words: u64,
    producer: Option<NodeId>,
    layer: Option<LayerId>,
    /// (consumer node, read from a left operand covering the whole block)
    consumers: Vec<(NodeId, bool)>,
    output: bool,
}

/// Which node reads which block.
#[derive(Debug, Clone)]
pub struct Liveness {
    blocks: Vec<Block>,
    consumes: Vec<Vec<usize>>,
    produces: Vec<Option<usize>>,
}

impl Liveness {
    pub fn build(g: &LayerGraph, ng: &NodeGraph) -> Self {
        let mut readers: BTreeMap<TensorRef, Vec<(LayerId, usize)>> = BTreeMap::new();
        for layer in &g.layers {
            for (slot, op) in layer.operands.iter().enumerate() {
                if let Some(t) = TensorRef::of(*op) {
                    readers.entry(t).or_default().push((layer.id, slot));
                }
            }
        }
        let outputs: BTreeSet<LayerId> = g.outputs().into_iter().collect();
        let mut blocks = Vec::new();
        let mut produces = vec![None; ng.len()];
        for (i, shape) in g.inputs.iter().enumerate() {
            for r in 0..shape.rows {
                let region = Region {
                    tensor: TensorRef::Input(i),
                    rows: Span::new(r, r + 1),
                    cols: Span::new(0, shape.cols),
                };
                let mut consumers = Vec::new();
                find_readers(g, ng, &readers, region, true, &mut consumers);
                blocks.push(Block { words: region.words(), producer: None, layer: None, consumers, output: false });
            }
        }
        for node in &ng.nodes {
            if node.kind == LayerKind::Transpose {
                continue;
            }
            let mut consumers = Vec::new();
            find_readers(g, ng, &readers, node.output_region, true, &mut consumers);
            produces[node.id] = Some(blocks.len());
            blocks.push(Block {
                words: node.output_words(),
                producer: Some(node.id),
                layer: Some(node.layer),
                consumers,
                output: outputs.contains(&node.layer),
            });
        }
        let mut consumes = vec![Vec::new(); ng.len()];
        for (b, block) in blocks.iter_mut().enumerate() {
            block.consumers.sort_unstable();
            block.consumers.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 &= a.1;
                    true
                } else {
                    false
                }
            });
            for &(c, _) in &block.consumers {
                consumes[c].push(b);
            }
        }
        Self { blocks, consumes, produces }
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn counted(&self, b: usize, bypassed: &[bool]) -> bool {
        self.blocks[b].layer.map(|l| !bypassed[l]).unwrap_or(true)
    }

    /// Words a node adds when it ends.
    fn allocates(&self, node: NodeId, bypassed: &[bool]) -> u64 {
        self.produces[node]
            .filter(|&b| self.counted(b, bypassed))
            .map(|b| self.blocks[b].words)
            .unwrap_or(0)
    }

    /// Trace of a complete schedule, total and per core. Outputs of layers
    /// flagged in `bypassed` (indexed by layer id) are not counted.
    pub fn trace(
        &self,
        nodes: &[ScheduledNode],
        hw: &HardwareSpec,
        bypassed: &[bool],
    ) -> (MemoryTrace, BTreeMap<ResourceId, MemoryTrace>) {
        // (time, step, core, delta, scope); step 0 = early release, 1 = allocate, 2 = late release
        let mut events: Vec<Event> = Vec::new();
        let mut initial: BTreeMap<ResourceId, u64> = BTreeMap::new();
        let mut initial_total = 0u64;
        let home = |n: NodeId| hw.home_core(nodes[n].resource);
        let release = |consumers: &[(NodeId, bool)]| -> Option<(u64, bool)> {
            let t = consumers.iter().map(|&(c, _)| nodes[c].end).max()?;
            let streamed = consumers.iter().filter(|&&(c, _)| nodes[c].end == t).all(|&(_, s)| s);
            Some((t, streamed))
        };
        for (b, block) in self.blocks.iter().enumerate() {
            if !self.counted(b, bypassed) {
                continue;
            }
            let w = block.words as i64;
            match block.producer {
                Some(p) => {
                    let core = home(p);
                    let born = nodes[p].end;
                    events.push((born, 1, core, w, Scope::Both));
                    if !block.output {
                        let (t, streamed) = release(&block.consumers).unwrap_or((born, false));
                        events.push((t, if streamed { 0 } else { 2 }, core, -w, Scope::Both));
                    }
                }
                None => {
                    initial_total += block.words;
                    if let Some((t, streamed)) = release(&block.consumers) {
                        events.push((t, if streamed { 0 } else { 2 }, 0, -w, Scope::Total));
                    }
                    let mut by_core: BTreeMap<ResourceId, Vec<(NodeId, bool)>> = BTreeMap::new();
                    for &c in &block.consumers {
                        by_core.entry(home(c.0)).or_default().push(c);
                    }
                    for (core, list) in by_core {
                        *initial.entry(core).or_default() += block.words;
                        if let Some((t, streamed)) = release(&list) {
                            events.push((t, if streamed { 0 } else { 2 }, core, -w, Scope::Core));
                        }
                    }
                }
            }
        }
        events.sort_unstable_by_key(|e| (e.0, e.1));
        let total = sweep(&events, initial_total, |e| e.4 != Scope::Core);
        let mut cores: BTreeSet<ResourceId> = initial.keys().copied().collect();
        cores.extend(events.iter().filter(|e| e.4 != Scope::Total).map(|e| e.2));
        let per_core = cores
            .into_iter()
            .map(|c| {
                let start = initial.get(&c).copied().unwrap_or(0);
                (c, sweep(&events, start, |e| e.2 == c && e.4 != Scope::Total))
            })
            .collect();
        (total, per_core)
    }
}

/// Input rows are counted once in the total but once per consuming core in
/// the per-core traces, so their releases are scoped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    Both,
    Total,
    Core,
}

type Event = (u64, u8, ResourceId, i64, Scope);

fn sweep(events: &[Event], start: u64, keep: impl Fn(&Event) -> bool) -> MemoryTrace {
    let mut trace = MemoryTrace::default();
    trace.push(0, start);
    let mut active = start as i64;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        let mut changed = false;
        while i < events.len() && events[i].0 == t && events[i].1 < 2 {
            if keep(&events[i]) {
                active += events[i].3;
                changed = true;
            }
            i += 1;
        }
        if changed {
            trace.push(t, active as u64);
        }
        changed = false;
        while i < events.len() && events[i].0 == t {
            if keep(&events[i]) {
                active += events[i].3;
                changed = true;
            }
            i += 1;
        }
        if changed {
            trace.push(t, active as u64);
        }
    }
    trace
}

fn find_readers(
    g: &LayerGraph,
    ng: &NodeGraph,
    readers: &BTreeMap<TensorRef, Vec<(LayerId, usize)>>,
    region: Region,
    direct: bool,
    out: &mut Vec<(NodeId, bool)>,
) {
    let Some(list) = readers.get(&region.tensor) else {
        return;
    };
    for &(lid, slot) in list {
        let layer = g.layer(lid);
        if layer.kind == LayerKind::Transpose {
            find_readers(g, ng, readers, region.transposed(TensorRef::Layer(lid)), false, out);
            continue;
        }
        let shape = layer.output_shape;
        let (rows, cols) = match (layer.kind, slot) {
            (LayerKind::ElementwiseScale, _) => (region.rows, region.cols),
            (_, 0) => (region.rows, Span::new(0, shape.cols)),
            _ => (Span::new(0, shape.rows), region.cols),
        };
        for (nid, _, _) in ng.overlapping(lid, rows, cols) {
            let node = ng.node(nid);
            for (s, read) in input_regions(node, layer) {
                if s != slot || read.overlap(&region).is_none() {
                    continue;
                }
                let streamed = direct && slot == 0 && read.contains(&region);
                out.push((nid, streamed));
            }
        }
    }
}

/// Layers whose outputs are forwarded over the register path: in the fusion
/// set, every consumer in the same fused phase, and on a connected resource.
pub fn bypassed_layers(g: &LayerGraph, plan: &TemplatePlan, alloc: &Allocation, hw: &HardwareSpec) -> BTreeSet<LayerId> {
    let consumers = g.consumers();
    plan.fusion_set
        .iter()
        .copied()
        .filter(|&l| {
            let Some(r) = alloc.get(l) else { return false };
            !consumers[l].is_empty()
                && consumers[l].iter().all(|&c| {
                    plan.same_fused_phase(l, c)
                        && alloc.get(c).map(|rc| hw.home_core(rc) == hw.home_core(r)).unwrap_or(false)
                })
        })
        .collect()
}

fn source_layer(g: &LayerGraph, mut l: LayerId) -> LayerId {
    while g.layer(l).kind == LayerKind::Transpose {
        match g.layer(l).operands.first() {
            Some(Operand::Layer(p)) => l = *p,
            _ => break,
        }
    }
    l
}

fn executor<'a>(hw: &'a HardwareSpec, r: ResourceId) -> Result<Executor<'a>> {
    if let Some(c) = hw.core(r) {
        Ok(Executor::Core(c))
    } else if let Some(s) = hw.simd_unit(r) {
        Ok(Executor::Simd(s))
    } else {
        Err(Error::InvalidArgument(format!("unknown resource {r}")))
    }
}

fn layer_feeds(g: &LayerGraph, hw: &HardwareSpec, lid: LayerId, exec: Executor<'_>, bypassed: &BTreeSet<LayerId>) -> Feeds {
    let layer = g.layer(lid);
    let mut feeds = Feeds::ample();
    for (slot, (op, shape)) in layer.operands.iter().zip(&layer.input_shapes).enumerate() {
        let role = if slot == 0 { OperandRole::I1 } else { OperandRole::I2 };
        let words = shape.words();
        let feed = match op {
            Operand::Weight => hw.operand_feed(role, words, crate::hwmodel::DataSource::Weight),
            Operand::Input(_) => hw.operand_feed(role, words, crate::hwmodel::DataSource::GraphInput),
            Operand::Layer(p) => {
                if bypassed.contains(&source_layer(g, *p)) {
                    hw.forwarded_feed(role)
                } else {
                    hw.operand_feed(role, words, crate::hwmodel::DataSource::Feature)
                }
            }
        };
        if slot == 0 {
            feeds.i1 = feed;
        } else {
            feeds.i2 = feed;
        }
    }
    feeds.out = if bypassed.contains(&lid) {
        hw.forwarded_feed(OperandRole::O)
    } else {
        hw.operand_feed(OperandRole::O, layer.output_shape.words(), crate::hwmodel::DataSource::Feature)
    };
    if let Executor::Simd(s) = exec {
        // vector units stream through a port as wide as their lanes
        let lanes = s.lanes as f64;
        for f in [&mut feeds.i1, &mut feeds.i2, &mut feeds.out] {
            f.words_per_cycle = f.words_per_cycle.max(lanes);
        }
    }
    feeds
}

/// Priority key; smaller is better.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    rank: (usize, usize, usize, usize),
    score: f64,
    layer: LayerId,
    index: usize,
}

impl Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank
            .cmp(&other.rank)
            .then(self.score.total_cmp(&other.score))
            .then(self.layer.cmp(&other.layer))
            .then(self.index.cmp(&other.index))
    }
}

/// Allocation-independent analysis of a node graph, reusable across many
/// scheduling runs of the same graph.
#[derive(Debug, Clone)]
pub struct ScheduleContext {
    liveness: Liveness,
    topo: Vec<NodeId>,
}

impl ScheduleContext {
    pub fn new(g: &LayerGraph, ng: &NodeGraph) -> Result<Self> {
        g.topo_order().ok_or(Error::Cyclic)?;
        Ok(Self { liveness: Liveness::build(g, ng), topo: node_topo_order(ng)? })
    }
}

/// Schedules `ng` under `policy` and traces its memory.
pub fn schedule(g: &LayerGraph, ng: &NodeGraph, alloc: &Allocation, hw: &HardwareSpec, policy: &SchedulePolicy) -> Result<Schedule> {
    schedule_in(&ScheduleContext::new(g, ng)?, g, ng, alloc, hw, policy)
}

/// [`schedule`] with a prepared context for `ng`.
pub fn schedule_in(
    ctx: &ScheduleContext,
    g: &LayerGraph,
    ng: &NodeGraph,
    alloc: &Allocation,
    hw: &HardwareSpec,
    policy: &SchedulePolicy,
) -> Result<Schedule> {
    alloc.validate(g, hw)?;
    let plan = match policy.mode {
        Mode::Template(t) => Some(apply_template(t, g)?),
        _ => None,
    };
    let bypassed = match &plan {
        Some(p) => bypassed_layers(g, p, alloc, hw),
        None => BTreeSet::new(),
    };

    let n = ng.len();
    let res: Vec<ResourceId> = ng.nodes.iter().map(|nd| alloc.get(nd.layer).unwrap_or(0)).collect();

    let mut mappings = BTreeMap::new();
    let mut feeds = BTreeMap::new();
    for layer in &g.layers {
        let r = alloc.get(layer.id).unwrap_or(0);
        let exec = executor(hw, r)?;
        let forced = match exec {
            Executor::Core(c) => policy.overrides.lookup(layer, c)?,
            Executor::Simd(_) => None,
        };
        let m = match forced {
            Some(m) => m,
            None => optimize_mapping(layer, exec)?,
        };
        mappings.insert(layer.id, m);
        feeds.insert(layer.id, layer_feeds(g, hw, layer.id, exec, &bypassed));
    }
    let mut cost = Vec::with_capacity(n);
    for node in &ng.nodes {
        let exec = executor(hw, res[node.id])?;
        cost.push(node_latency(node, exec, &mappings[&node.layer], &feeds[&node.layer])?);
    }
    let duration: Vec<u64> = cost.iter().map(NodeCost::total).collect();

    let home: Vec<ResourceId> = res.iter().map(|&r| hw.home_core(r)).collect();
    let mut transfer = vec![0u64; ng.edges.len()];
    for (i, e) in ng.edges.iter().enumerate() {
        if home[e.producer] != home[e.consumer] {
            transfer[i] = hw.transfer_cycles(res[e.producer], res[e.consumer], e.words)?;
        }
    }

    let liveness = &ctx.liveness;
    let skip: Vec<bool> = (0..g.layers.len()).map(|l| bypassed.contains(&l)).collect();

    // layer barriers
    let consumers_of = g.consumers();
    let mut barrier: Vec<Vec<LayerId>> = vec![Vec::new(); g.layers.len()];
    let mut dependents: Vec<Vec<LayerId>> = vec![Vec::new(); g.layers.len()];
    if policy.mode != Mode::LayerFusedAuto {
        for layer in &g.layers {
            for c in &consumers_of[layer.id] {
                let skip = plan.as_ref().map(|p| p.same_fused_phase(layer.id, *c)).unwrap_or(false);
                if !skip && !barrier[*c].contains(&layer.id) {
                    barrier[*c].push(layer.id);
                    dependents[layer.id].push(*c);
                }
            }
        }
    }

    // bottom levels
    let needs_bl = !matches!(policy.priority, Priority::Memory);
    let mut bl = vec![0u64; n];
    if needs_bl {
        for &v in ctx.topo.iter().rev() {
            let tail = ng.out_edges[v]
                .iter()
                .map(|&e| transfer[e] + bl[ng.edges[e].consumer])
                .max()
                .unwrap_or(0);
            bl[v] = duration[v] + tail;
        }
    }
    let bl_norm = bl.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mem_norm = (0..n).map(|v| liveness.allocates(v, &skip)).max().unwrap_or(0).max(1) as f64;

    // freed-on-completion potential for memory priority
    let mut potential = vec![0u64; n];
    let mut waiting_readers: Vec<usize> = liveness.blocks.iter().map(|b| b.consumers.len()).collect();
    for (i, b) in liveness.blocks.iter().enumerate() {
        if b.consumers.len() == 1 && !b.output && liveness.counted(i, &skip) {
            potential[b.consumers[0].0] += b.words;
        }
    }

    let rank: Vec<(usize, usize, usize, usize)> = ng
        .nodes
        .iter()
        .map(|nd| match &plan {
            Some(p) => {
                let (h, ph, pos) = p.rank(nd.layer);
                (h, ph, nd.index, pos)
            }
            None => (0, 0, 0, 0),
        })
        .collect();
    let key = |v: NodeId, potential: &[u64]| -> Key {
        let delta = liveness.allocates(v, &skip) as f64 - potential[v] as f64;
        let score = match policy.priority {
            Priority::Latency => -(bl[v] as f64),
            Priority::Memory => delta,
            Priority::Weighted(l) => l * delta / mem_norm - (1.0 - l) * bl[v] as f64 / bl_norm,
        };
        Key { rank: rank[v], score, layer: ng.nodes[v].layer, index: ng.nodes[v].index }
    };

    let mut remaining: Vec<usize> = ng.in_edges.iter().map(Vec::len).collect();
    let mut est = vec![0u64; n];
    let mut start = vec![0u64; n];
    let mut end = vec![0u64; n];
    let mut finished = vec![false; n];
    let mut layer_left: Vec<usize> = ng.layer_nodes.iter().map(Vec::len).collect();
    let mut layer_end = vec![0u64; g.layers.len()];
    let mut blocked: Vec<Vec<NodeId>> = vec![Vec::new(); g.layers.len()];
    let mut ready: BTreeMap<ResourceId, Vec<NodeId>> = BTreeMap::new();
    let mut free_at: BTreeMap<ResourceId, u64> = hw.resources().into_iter().map(|r| (r, 0)).collect();
    let mut events: BinaryHeap<Reverse<(u64, NodeId)>> = BinaryHeap::new();

    struct Ctx<'a> {
        barrier: &'a [Vec<LayerId>],
        ng: &'a NodeGraph,
        res: &'a [ResourceId],
    }
    let ctx = Ctx { barrier: &barrier, ng, res: &res };
    let release = |v: NodeId,
                   est: &mut [u64],
                   start: &mut [u64],
                   end: &mut [u64],
                   layer_left: &[usize],
                   layer_end: &[u64],
                   blocked: &mut [Vec<NodeId>],
                   ready: &mut BTreeMap<ResourceId, Vec<NodeId>>,
                   events: &mut BinaryHeap<Reverse<(u64, NodeId)>>| {
        let l = ctx.ng.nodes[v].layer;
        if ctx.barrier[l].iter().any(|&p| layer_left[p] > 0) {
            blocked[l].push(v);
            return;
        }
        let gate = ctx.barrier[l].iter().map(|&p| layer_end[p]).max().unwrap_or(0);
        est[v] = est[v].max(gate);
        if ctx.ng.nodes[v].kind == LayerKind::Transpose {
            start[v] = est[v];
            end[v] = est[v];
            events.push(Reverse((est[v], v)));
        } else {
            ready.entry(ctx.res[v]).or_default().push(v);
        }
    };

    for v in 0..n {
        if remaining[v] == 0 {
            release(v, &mut est, &mut start, &mut end, &layer_left, &layer_end, &mut blocked, &mut ready, &mut events);
        }
    }

    let mut done = 0usize;
    let mut t = 0u64;
    while done < n {
        while let Some(&Reverse((te, v))) = events.peek() {
            if te > t {
                break;
            }
            events.pop();
            finished[v] = true;
            done += 1;
            for &e in &ng.out_edges[v] {
                let c = ng.edges[e].consumer;
                est[c] = est[c].max(end[v] + transfer[e]);
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    release(c, &mut est, &mut start, &mut end, &layer_left, &layer_end, &mut blocked, &mut ready, &mut events);
                }
            }
            for &b in &liveness.consumes[v] {
                waiting_readers[b] -= 1;
                let block = &liveness.blocks[b];
                if waiting_readers[b] == 1 && !block.output && liveness.counted(b, &skip) {
                    if let Some(&(u, _)) = block.consumers.iter().find(|(u, _)| !finished[*u]) {
                        potential[u] += block.words;
                    }
                }
            }
            let l = ng.nodes[v].layer;
            layer_left[l] -= 1;
            layer_end[l] = layer_end[l].max(end[v]);
            if layer_left[l] == 0 {
                for &d in &dependents[l] {
                    if barrier[d].iter().all(|&p| layer_left[p] == 0) {
                        for w in std::mem::take(&mut blocked[d]) {
                            release(w, &mut est, &mut start, &mut end, &layer_left, &layer_end, &mut blocked, &mut ready, &mut events);
                        }
                    }
                }
            }
        }

        for (&r, free) in free_at.iter_mut() {
            if *free > t {
                continue;
            }
            let Some(list) = ready.get_mut(&r) else { continue };
            let best = list
                .iter()
                .enumerate()
                .filter(|(_, &v)| est[v] <= t)
                .map(|(i, &v)| (i, key(v, &potential)))
                .min_by(|a, b| a.1.cmp(&b.1))
                .map(|(i, _)| i);
            if let Some(i) = best {
                let v = list.swap_remove(i);
                start[v] = t;
                end[v] = t + duration[v];
                *free = end[v];
                events.push(Reverse((end[v], v)));
            }
        }

        let next_event = events.peek().map(|r| r.0 .0);
        let est_now = &est;
        let next_ready = ready
            .iter()
            .flat_map(|(r, list)| {
                let free = free_at.get(r).copied().unwrap_or(0);
                list.iter().map(move |&v| est_now[v].max(free))
            })
            .filter(|&x| x > t)
            .min();
        match (next_event, next_ready) {
            (Some(a), Some(b)) => t = a.min(b).max(t),
            (Some(a), None) => t = a.max(t),
            (None, Some(b)) => t = b,
            (None, None) => {
                if done < n {
                    return Err(Error::Cyclic);
                }
            }
        }
    }

    let nodes: Vec<ScheduledNode> = ng
        .nodes
        .iter()
        .map(|nd| ScheduledNode {
            node: nd.id,
            layer: nd.layer,
            index: nd.index,
            resource: res[nd.id],
            start: start[nd.id],
            end: end[nd.id],
            compute_cycles: cost[nd.id].compute_cycles,
            stall_cycles: cost[nd.id].stall_cycles,
            energy: cost[nd.id].energy,
        })
        .collect();
    let (trace, core_traces) = liveness.trace(&nodes, hw, &skip);
    Ok(Schedule { nodes, trace, core_traces, bypassed, mappings })
}

fn node_topo_order(ng: &NodeGraph) -> Result<Vec<NodeId>> {
    let mut indeg: Vec<usize> = ng.in_edges.iter().map(Vec::len).collect();
    let mut stack: Vec<NodeId> = (0..ng.len()).rev().filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(ng.len());
    while let Some(v) = stack.pop() {
        order.push(v);
        for &e in &ng.out_edges[v] {
            let c = ng.edges[e].consumer;
            indeg[c] -= 1;
            if indeg[c] == 0 {
                stack.push(c);
            }
        }
    }
    if order.len() != ng.len() {
        return Err(Error::Cyclic);
    }
    Ok(order)
}

/// Splits, builds the node graph and schedules in one go.
pub fn schedule_graph(g: &LayerGraph, alloc: &Allocation, hw: &HardwareSpec, policy: &SchedulePolicy) -> Result<Schedule> {
    let ng = fine_grained_graph(g, &policy.split_plan(g))?;
    schedule(g, &ng, alloc, hw, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwmodel::builtin_platform;
    use crate::workload::build_attention_head;

    fn run(m: usize, n: usize, policy: SchedulePolicy) -> Schedule {
        let g = build_attention_head(m, n).unwrap();
        let hw = builtin_platform("single64x64", 1).unwrap();
        let alloc = Allocation::on_core(&g, &hw, 0).unwrap();
        schedule_graph(&g, &alloc, &hw, &policy).unwrap()
    }

    // MACs by walking every (r, s, t) triple of every matmul.
    fn enumerated_macs(m: usize, n: usize) -> u64 {
        let mut count = 0u64;
        for (r, s, t) in [(m, n, n), (m, n, n), (m, n, n), (m, n, m), (m, m, n)] {
            for _ in 0..r {
                for _ in 0..s {
                    for _ in 0..t {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    #[test]
    fn template_names_round_trip() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
        }
        assert!(matches!("fuse_everything".parse::<Template>(), Err(Error::UnknownTemplate(_))));
    }

    #[test]
    fn lbl_layer_barrier_peaks() {
        let s = run(64, 256, SchedulePolicy::layer_by_layer(Priority::Memory));
        assert_eq!(s.peak_memory(), 3 * 64 * 256);
        let s = run(256, 64, SchedulePolicy::layer_by_layer(Priority::Memory));
        assert_eq!(s.peak_memory(), 2 * 256 * 64 + 256 * 256);
    }

    #[test]
    fn template_peaks() {
        let s = run(64, 256, SchedulePolicy::template(Template::FuseQQkt));
        assert_eq!(s.peak_memory(), 2 * 64 * 256 + 64 * 64);
        let s = run(256, 64, SchedulePolicy::template(Template::FuseQktQktv));
        assert_eq!(s.peak_memory(), 3 * 256 * 64);
        let s = run(256, 64, SchedulePolicy::template(Template::FuseQQkt));
        assert_eq!(s.peak_memory(), 2 * 256 * 64 + 256 * 256);
        let s = run(128, 128, SchedulePolicy::template(Template::LblMemoryOptimal));
        assert_eq!(s.peak_memory(), 3 * 128 * 128);
    }

    #[test]
    fn fused_phase_flat_at_peak() {
        let g = build_attention_head(256, 64).unwrap();
        let s = run(256, 64, SchedulePolicy::template(Template::FuseQktQktv));
        let scores = s.layer_span(g.find_role(0, HeadRole::Scores).unwrap()).unwrap();
        let out = s.layer_span(g.find_role(0, HeadRole::Output).unwrap()).unwrap();
        assert!(s.trace.max_between(scores.0, out.1) <= 3 * 256 * 64);
        assert_eq!(s.trace.at(scores.0), 3 * 256 * 64);
    }

    #[test]
    fn latency_equals_macs_over_array() {
        let macs = enumerated_macs(64, 256);
        assert_eq!(macs / 4096, 3584);
        for t in [Template::LblMemoryOptimal, Template::FuseQQkt, Template::FuseQktQktv] {
            assert_eq!(run(64, 256, SchedulePolicy::template(t)).makespan(), 3584, "{t}");
        }
    }

    #[test]
    fn trace_shape_lbl() {
        let (m, n) = (64, 256);
        let g = build_attention_head(m, n).unwrap();
        let s = run(m, n, SchedulePolicy::template(Template::LblMemoryOptimal));
        let mn = (m * n) as u64;
        assert_eq!(s.trace.first(), mn);
        assert_eq!(s.trace.last(), mn);
        let k = s.layer_span(g.find_role(0, HeadRole::Key).unwrap()).unwrap();
        assert_eq!(s.trace.at(k.1), 3 * mn);
        let v = s.layer_span(g.find_role(0, HeadRole::Value).unwrap()).unwrap();
        let during_v: Vec<u64> = s
            .trace
            .points
            .iter()
            .filter(|p| p.time > v.0 && p.time <= v.1)
            .map(|p| p.words)
            .collect();
        let level = s.trace.at(v.0);
        assert!(during_v.iter().all(|&w| w == level), "{during_v:?}");
    }

    #[test]
    fn v_first_variant_costs_the_same_memory() {
        for (m, n) in [(64, 128), (128, 64)] {
            let a = run(m, n, SchedulePolicy::template(Template::LblMemoryOptimal));
            let b = run(m, n, SchedulePolicy::template(Template::LblVFirst));
            assert_eq!(a.peak_memory(), b.peak_memory());
            assert!(b.makespan() >= a.makespan());
        }
    }

    #[test]
    fn all_q_variant_within_bound() {
        for (m, n) in [(64, 128), (128, 64), (64, 64)] {
            let s = run(m, n, SchedulePolicy::template(Template::FuseQQktQktv));
            assert!(s.peak_memory() <= (3 * m * n) as u64);
        }
    }

    #[test]
    fn empty_schedule() {
        assert_eq!(makespan(&[]), 0);
        assert_eq!(peak_memory(&MemoryTrace::default()), 0);
    }

    #[test]
    fn precedence_and_exclusivity() {
        let g = build_attention_head(16, 8).unwrap();
        let hw = builtin_platform("single64x64", 1).unwrap();
        let alloc = Allocation::on_core(&g, &hw, 0).unwrap();
        for policy in [
            SchedulePolicy::layer_by_layer(Priority::Latency),
            SchedulePolicy::new(Mode::LayerFusedAuto, Priority::Weighted(0.5)).unwrap(),
            SchedulePolicy::template(Template::FuseQktQktv),
        ] {
            let ng = fine_grained_graph(&g, &policy.split_plan(&g)).unwrap();
            let s = schedule(&g, &ng, &alloc, &hw, &policy).unwrap();
            for e in &ng.edges {
                assert!(s.nodes[e.consumer].start >= s.nodes[e.producer].end);
            }
            let mut by_res: BTreeMap<ResourceId, Vec<(u64, u64)>> = BTreeMap::new();
            for sn in s.nodes.iter().filter(|sn| sn.end > sn.start) {
                by_res.entry(sn.resource).or_default().push((sn.start, sn.end));
            }
            for spans in by_res.values_mut() {
                spans.sort_unstable();
                assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
            }
        }
    }

    #[test]
    fn weighted_priority_parses() {
        assert_eq!("weighted:0.25".parse::<Priority>().unwrap(), Priority::Weighted(0.25));
        assert!("weighted:1.5".parse::<Priority>().is_err());
        assert!(SchedulePolicy::new(Mode::LayerByLayer, Priority::Weighted(-0.1)).is_err());
    }
}
