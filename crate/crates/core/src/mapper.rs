//! Intra-core mapping and per-node cost.
//!
//! A matmul is the loop nest `for R, for S, for T: O[r][t] += I1[r][s] * I2[s][t]`.
//! A mapping unrolls up to two of those loops across the PE array axes and
//! orders the rest in time. Cost is bandwidth-aware: a node takes the larger of
//! its compute cycles and the cycles needed to stream each operand, with
//! transfers double-buffered behind compute.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::depgraph::ComputationNode;
use crate::error::{Error, Result};
use crate::hwmodel::{Core, OperandFeed, SimdUnit};
use crate::workload::{Layer, LayerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoopDim {
    R,
    S,
    T,
}

impl fmt::Display for LoopDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayAxis {
    Rows,
    Cols,
    /// SIMD lanes.
    Lanes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unroll {
    pub axis: ArrayAxis,
    pub dim: LoopDim,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub spatial: Vec<Unroll>,
    /// Temporal loops, outermost first.
    pub temporal_order: Vec<LoopDim>,
}

impl Mapping {
    pub fn factor(&self, dim: LoopDim) -> usize {
        self.spatial
            .iter()
            .find(|u| u.dim == dim)
            .map(|u| u.factor)
            .unwrap_or(1)
    }

    pub fn is_spatial(&self, dim: LoopDim) -> bool {
        self.spatial.iter().any(|u| u.dim == dim)
    }

    pub fn outer(&self) -> Option<LoopDim> {
        self.temporal_order.first().copied()
    }

    /// Row-major, nothing unrolled.
    pub fn row_major() -> Self {
        Self { spatial: Vec::new(), temporal_order: vec![LoopDim::R, LoopDim::T] }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spatial{{")?;
        for (i, u) in self.spatial.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}:{}", u.dim, u.factor)?;
        }
        write!(f, "}} temporal[")?;
        for (i, d) in self.temporal_order.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// What executes a node.
#[derive(Debug, Clone, Copy)]
pub enum Executor<'a> {
    Core(&'a Core),
    Simd(&'a SimdUnit),
}

impl Executor<'_> {
    pub fn supports(&self, kind: LayerKind) -> bool {
        match self {
            Executor::Core(c) => c.supports.contains(&kind),
            Executor::Simd(s) => s.supports.contains(&kind),
        }
    }

    pub fn id(&self) -> u32 {
        match self {
            Executor::Core(c) => c.id,
            Executor::Simd(s) => s.id,
        }
    }

    /// Words per cycle for vector (non-matmul) work.
    pub fn lanes(&self) -> u64 {
        match self {
            Executor::Core(c) => c.peak_macs(),
            Executor::Simd(s) => s.lanes as u64,
        }
    }
}

/// Per-operand feeds for one node. `i2` is unused by single-input kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feeds {
    pub i1: OperandFeed,
    pub i2: OperandFeed,
    pub out: OperandFeed,
}

impl Feeds {
    pub fn uniform(words_per_cycle: f64) -> Self {
        let f = OperandFeed { words_per_cycle, access_cost: 0.0 };
        Self { i1: f, i2: f, out: f }
    }

    pub fn ample() -> Self {
        Self::uniform(f64::INFINITY)
    }

    pub fn with_cost(mut self, access_cost: f64) -> Self {
        self.i1.access_cost = access_cost;
        self.i2.access_cost = access_cost;
        self.out.access_cost = access_cost;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    /// Energy units: words accessed per operand times that memory's access cost.
    pub energy: f64,
}

impl NodeCost {
    pub fn total(&self) -> u64 {
        self.compute_cycles + self.stall_cycles
    }
}

fn stream_cycles(words: u64, feed: &OperandFeed) -> u64 {
    if words == 0 || feed.words_per_cycle.is_infinite() {
        0
    } else {
        (words as f64 / feed.words_per_cycle).ceil() as u64
    }
}

fn check_mapping(m: &Mapping, exec: &Executor<'_>) -> Result<()> {
    let mut seen = Vec::new();
    for u in &m.spatial {
        if seen.contains(&u.dim) {
            return Err(Error::InvalidMapping(format!("{} unrolled twice", u.dim)));
        }
        seen.push(u.dim);
        let limit = match (exec, u.axis) {
            (Executor::Core(c), ArrayAxis::Rows) => c.array_rows as usize,
            (Executor::Core(c), ArrayAxis::Cols) => c.array_cols as usize,
            (Executor::Simd(s), ArrayAxis::Lanes) => s.lanes as usize,
            (Executor::Core(c), ArrayAxis::Lanes) => c.peak_macs() as usize,
            (Executor::Simd(_), _) => 0,
        };
        if u.factor == 0 || u.factor > limit {
            return Err(Error::InvalidMapping(format!(
                "unroll {}x{} on {:?} exceeds the array (limit {limit})",
                u.dim, u.factor, u.axis
            )));
        }
    }
    for d in &m.temporal_order {
        if m.is_spatial(*d) {
            return Err(Error::InvalidMapping(format!("{d} is both spatial and temporal")));
        }
    }
    Ok(())
}

/// Cycles and energy of one computation node under a mapping.
pub fn node_latency(node: &ComputationNode, exec: Executor<'_>, mapping: &Mapping, feeds: &Feeds) -> Result<NodeCost> {
    if !exec.supports(node.kind) {
        return Err(Error::Unsupported(node.kind, exec.id()));
    }
    check_mapping(mapping, &exec)?;
    let rows = node.rows() as u64;
    let cols = node.cols() as u64;
    match node.kind {
        LayerKind::Transpose => Ok(NodeCost::default()),
        LayerKind::MatMulWeights | LayerKind::MatMulFeatures => {
            let Executor::Core(core) = exec else {
                return Err(Error::Unsupported(node.kind, exec.id()));
            };
            let inner = node.inner as u64;
            let trips = |dim: LoopDim, extent: u64| {
                let f = (mapping.factor(dim) as u64).min(extent).max(1);
                extent.div_ceil(f)
            };
            let iterations = trips(LoopDim::R, rows) * trips(LoopDim::S, inner) * trips(LoopDim::T, cols);
            let compute = iterations.div_ceil(core.macs_per_pe as u64);
            let words = [rows * inner, inner * cols, rows * cols];
            let streams = [
                stream_cycles(words[0], &feeds.i1),
                stream_cycles(words[1], &feeds.i2),
                stream_cycles(words[2], &feeds.out),
            ];
            let bound = streams.into_iter().max().unwrap_or(0);
            let energy = words[0] as f64 * feeds.i1.access_cost
                + words[1] as f64 * feeds.i2.access_cost
                + words[2] as f64 * feeds.out.access_cost;
            Ok(NodeCost {
                compute_cycles: compute,
                stall_cycles: bound.saturating_sub(compute),
                energy,
            })
        }
        LayerKind::Softmax | LayerKind::ElementwiseScale => {
            let lanes = exec.lanes().max(1);
            // softmax: one reduction pass (max / exp-accumulate) and one
            // normalize pass over each row
            let passes = if node.kind == LayerKind::Softmax { 2 } else { 1 };
            let compute = rows * (passes * cols).div_ceil(lanes);
            let words = rows * cols;
            let bound = stream_cycles(words, &feeds.i1).max(stream_cycles(words, &feeds.out));
            Ok(NodeCost {
                compute_cycles: compute,
                stall_cycles: bound.saturating_sub(compute),
                energy: words as f64 * (feeds.i1.access_cost + feeds.out.access_cost),
            })
        }
    }
}

fn permutations(dims: &[LoopDim]) -> Vec<Vec<LoopDim>> {
    if dims.len() <= 1 {
        return vec![dims.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..dims.len() {
        let mut rest = dims.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Every mapping the search considers for a matmul layer on a core.
pub fn enumerate_mappings(layer: &Layer, core: &Core) -> Vec<Mapping> {
    let extent = |d: LoopDim| match d {
        LoopDim::R => layer.output_shape.rows,
        LoopDim::S => layer.inner_dim(),
        LoopDim::T => layer.output_shape.cols,
    };
    let choices = [None, Some(LoopDim::R), Some(LoopDim::S), Some(LoopDim::T)];
    let mut out = Vec::new();
    for on_rows in choices {
        for on_cols in choices {
            if on_rows.is_some() && on_rows == on_cols {
                continue;
            }
            let mut spatial = Vec::new();
            if let Some(d) = on_rows {
                spatial.push(Unroll {
                    axis: ArrayAxis::Rows,
                    dim: d,
                    factor: extent(d).min(core.array_rows as usize).max(1),
                });
            }
            if let Some(d) = on_cols {
                spatial.push(Unroll {
                    axis: ArrayAxis::Cols,
                    dim: d,
                    factor: extent(d).min(core.array_cols as usize).max(1),
                });
            }
            let rest: Vec<LoopDim> = [LoopDim::R, LoopDim::S, LoopDim::T]
                .into_iter()
                .filter(|d| on_rows != Some(*d) && on_cols != Some(*d))
                .collect();
            for order in permutations(&rest) {
                out.push(Mapping { spatial: spatial.clone(), temporal_order: order });
            }
        }
    }
    out
}

/// Search key: (cycles, energy, split-friendliness). Keeping `R` temporal and
/// outermost lets the layer be cut into row nodes without losing utilization.
fn mapping_key(layer: &Layer, core: &Core, m: &Mapping) -> (u64, u64, u8) {
    let probe = ComputationNode {
        id: 0,
        layer: layer.id,
        index: 0,
        kind: layer.kind,
        output_region: crate::depgraph::Region {
            tensor: crate::depgraph::TensorRef::Layer(layer.id),
            rows: crate::depgraph::Span::new(0, layer.output_shape.rows),
            cols: crate::depgraph::Span::new(0, layer.output_shape.cols),
        },
        inner: layer.inner_dim(),
        mac_count: layer.mac_count(),
    };
    let cost = node_latency(&probe, Executor::Core(core), m, &Feeds::ample()).unwrap_or(NodeCost {
        compute_cycles: u64::MAX,
        ..NodeCost::default()
    });
    let r_outer = !m.is_spatial(LoopDim::R) && m.outer() == Some(LoopDim::R);
    (cost.total(), cost.energy.to_bits(), u8::from(!r_outer))
}

/// Best mapping of a layer on an executor: exhaustive over
/// [`enumerate_mappings`] for matmuls, row-major for vector kinds.
pub fn optimize_mapping(layer: &Layer, exec: Executor<'_>) -> Result<Mapping> {
    if !exec.supports(layer.kind) {
        return Err(Error::Unsupported(layer.kind, exec.id()));
    }
    match (layer.kind, exec) {
        (LayerKind::MatMulWeights | LayerKind::MatMulFeatures, Executor::Core(core)) => {
            let candidates = enumerate_mappings(layer, core);
            candidates
                .into_iter()
                .min_by_key(|m| mapping_key(layer, core, m))
                .ok_or_else(|| Error::InvalidMapping("no candidate mappings".into()))
        }
        (LayerKind::MatMulWeights | LayerKind::MatMulFeatures, Executor::Simd(s)) => {
            Err(Error::Unsupported(layer.kind, s.id))
        }
        (_, exec) => {
            let lanes = exec.lanes() as usize;
            let axis = match exec {
                Executor::Core(_) => ArrayAxis::Lanes,
                Executor::Simd(_) => ArrayAxis::Lanes,
            };
            let mut m = Mapping::row_major();
            if layer.kind != LayerKind::Transpose {
                m.spatial.push(Unroll {
                    axis,
                    dim: LoopDim::T,
                    factor: layer.output_shape.cols.min(lanes).max(1),
                });
                m.temporal_order = vec![LoopDim::R];
            }
            Ok(m)
        }
    }
}

/// One forced mapping from an override file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingOverride {
    /// Layer name (`h0.QKT`) or head role (`QKT`, applies to every head).
    pub layer: String,
    #[serde(default)]
    pub spatial_rows: Option<LoopDim>,
    #[serde(default)]
    pub spatial_cols: Option<LoopDim>,
    pub temporal: Vec<LoopDim>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingOverrides {
    #[serde(default, rename = "override")]
    pub entries: Vec<MappingOverride>,
}

impl MappingOverrides {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Forced mapping for `layer` on `core`, if any entry matches.
    pub fn lookup(&self, layer: &Layer, core: &Core) -> Result<Option<Mapping>> {
        let role = layer.role.map(|(_, r)| r.short());
        let Some(o) = self
            .entries
            .iter()
            .find(|o| o.layer == layer.name)
            .or_else(|| self.entries.iter().find(|o| Some(o.layer.as_str()) == role))
        else {
            return Ok(None);
        };
        let extent = |d: LoopDim| match d {
            LoopDim::R => layer.output_shape.rows,
            LoopDim::S => layer.inner_dim().max(1),
            LoopDim::T => layer.output_shape.cols,
        };
        let mut spatial = Vec::new();
        if let Some(d) = o.spatial_rows {
            spatial.push(Unroll { axis: ArrayAxis::Rows, dim: d, factor: extent(d).min(core.array_rows as usize) });
        }
        if let Some(d) = o.spatial_cols {
            spatial.push(Unroll { axis: ArrayAxis::Cols, dim: d, factor: extent(d).min(core.array_cols as usize) });
        }
        let m = Mapping { spatial, temporal_order: o.temporal.clone() };
        check_mapping(&m, &Executor::Core(core))?;
        let mut covered: Vec<LoopDim> = m.spatial.iter().map(|u| u.dim).chain(m.temporal_order.iter().copied()).collect();
        covered.sort();
        if layer.kind.is_matmul() && covered != vec![LoopDim::R, LoopDim::S, LoopDim::T] {
            return Err(Error::InvalidMapping(format!(
                "override for {} must cover R, S and T exactly once",
                layer.name
            )));
        }
        Ok(Some(m))
    }
}
