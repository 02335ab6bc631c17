//! Computation-node splitting and node-level dependency generation.
//!
//! Each layer is cut into bands along the outermost temporal loop (rows for
//! `R`, columns for `T`). A consumer node depends on every producer node whose
//! output rectangle overlaps one of the consumer's input rectangles; overlap
//! queries go through an R-tree per producing layer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, RTreeObject, AABB};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{Layer, LayerGraph, LayerId, LayerKind, Operand};

pub type NodeId = usize;

/// Half-open index interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub lo: usize,
    pub hi: usize,
}

impl Span {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo < hi, "empty span [{lo},{hi})");
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn intersect(&self, other: &Span) -> Option<Span> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Span { lo, hi })
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

/// A feature tensor: a graph input or some layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TensorRef {
    Input(usize),
    Layer(LayerId),
}

impl TensorRef {
    pub fn of(op: Operand) -> Option<Self> {
        match op {
            Operand::Input(i) => Some(TensorRef::Input(i)),
            Operand::Layer(l) => Some(TensorRef::Layer(l)),
            Operand::Weight => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub tensor: TensorRef,
    pub rows: Span,
    pub cols: Span,
}

impl Region {
    pub fn words(&self) -> u64 {
        self.rows.len() as u64 * self.cols.len() as u64
    }

    pub fn overlap(&self, other: &Region) -> Option<Region> {
        if self.tensor != other.tensor {
            return None;
        }
        Some(Region {
            tensor: self.tensor,
            rows: self.rows.intersect(&other.rows)?,
            cols: self.cols.intersect(&other.cols)?,
        })
    }

    pub fn contains(&self, other: &Region) -> bool {
        self.tensor == other.tensor && self.rows.contains(&other.rows) && self.cols.contains(&other.cols)
    }

    pub fn transposed(&self, tensor: TensorRef) -> Region {
        Region {
            tensor,
            rows: self.cols,
            cols: self.rows,
        }
    }
}

/// Outermost temporal loop a layer is split on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitAxis {
    /// `for R`: bands of output rows.
    R,
    /// `for T`: bands of output columns (matmuls only).
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub axis: SplitAxis,
    /// Band width; `None` means the whole extent.
    pub tile: Option<usize>,
}

impl Split {
    pub fn rows(tile: usize) -> Self {
        Self { axis: SplitAxis::R, tile: Some(tile) }
    }

    pub fn whole() -> Self {
        Self { axis: SplitAxis::R, tile: None }
    }
}

/// Split choice per layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan(pub BTreeMap<LayerId, Split>);

impl SplitPlan {
    pub fn uniform(g: &LayerGraph, split: Split) -> Self {
        Self(g.layers.iter().map(|l| (l.id, split)).collect())
    }

    pub fn set(&mut self, layer: LayerId, split: Split) {
        self.0.insert(layer, split);
    }

    pub fn get(&self, layer: LayerId) -> Option<Split> {
        self.0.get(&layer).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputationNode {
    pub id: NodeId,
    pub layer: LayerId,
    /// Position within its layer, in band order.
    pub index: usize,
    pub kind: LayerKind,
    pub output_region: Region,
    /// Extent of the contraction loop `S` (matmuls), 0 otherwise.
    pub inner: usize,
    pub mac_count: u64,
}

impl ComputationNode {
    pub fn rows(&self) -> usize {
        self.output_region.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.output_region.cols.len()
    }

    pub fn output_words(&self) -> u64 {
        self.output_region.words()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub words: u64,
}

/// Cuts a layer's output into contiguous bands along the split axis.
/// Node ids are local (0-based); [`fine_grained_graph`] renumbers them.
pub fn split_layer(layer: &Layer, split: Split) -> Result<Vec<ComputationNode>> {
    if split.tile == Some(0) {
        return Err(Error::InvalidArgument(format!(
            "tile must be positive for layer {}",
            layer.name
        )));
    }
    if split.axis == SplitAxis::T && !layer.kind.is_matmul() {
        return Err(Error::InvalidArgument(format!(
            "{:?} layer {} can only be split along rows",
            layer.kind, layer.name
        )));
    }
    let shape = layer.output_shape;
    let extent = match split.axis {
        SplitAxis::R => shape.rows,
        SplitAxis::T => shape.cols,
    };
    let tile = split.tile.unwrap_or(extent).min(extent);
    let inner = layer.inner_dim();
    let tensor = TensorRef::Layer(layer.id);

    let mut nodes = Vec::with_capacity(extent.div_ceil(tile));
    let mut lo = 0;
    while lo < extent {
        let hi = (lo + tile).min(extent);
        let (rows, cols) = match split.axis {
            SplitAxis::R => (Span::new(lo, hi), Span::new(0, shape.cols)),
            SplitAxis::T => (Span::new(0, shape.rows), Span::new(lo, hi)),
        };
        let region = Region { tensor, rows, cols };
        nodes.push(ComputationNode {
            id: nodes.len(),
            layer: layer.id,
            index: nodes.len(),
            kind: layer.kind,
            output_region: region,
            inner,
            mac_count: region.words() * inner as u64,
        });
        lo = hi;
    }
    Ok(nodes)
}

/// Input rectangles a node reads, one per feature operand, as `(slot, region)`.
pub fn input_regions(node: &ComputationNode, layer: &Layer) -> Vec<(usize, Region)> {
    let out = node.output_region;
    let mut regions = Vec::with_capacity(2);
    for (slot, (op, shape)) in layer.operands.iter().zip(&layer.input_shapes).enumerate() {
        let Some(tensor) = TensorRef::of(*op) else {
            continue;
        };
        let region = match layer.kind {
            LayerKind::MatMulWeights | LayerKind::MatMulFeatures => {
                if slot == 0 {
                    // row i of the left operand
                    Region { tensor, rows: out.rows, cols: Span::new(0, shape.cols) }
                } else {
                    // column j of the right operand
                    Region { tensor, rows: Span::new(0, shape.rows), cols: out.cols }
                }
            }
            LayerKind::Transpose => out.transposed(tensor),
            // The row sum in the denominator needs the whole input row.
            LayerKind::Softmax => Region { tensor, rows: out.rows, cols: Span::new(0, shape.cols) },
            LayerKind::ElementwiseScale => Region { tensor, ..out },
        };
        regions.push((slot, region));
    }
    regions
}

type Entry = GeomWithData<Rectangle<[i64; 2]>, NodeId>;

fn envelope(rows: Span, cols: Span) -> AABB<[i64; 2]> {
    AABB::from_corners(
        [rows.lo as i64, cols.lo as i64],
        [rows.hi as i64 - 1, cols.hi as i64 - 1],
    )
}

/// Rectangle-overlap index over the output regions of one layer's nodes.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    tree: RTree<Entry>,
}

impl RegionIndex {
    pub fn build<'a>(nodes: impl IntoIterator<Item = &'a ComputationNode>) -> Self {
        let entries = nodes
            .into_iter()
            .map(|n| {
                let r = n.output_region;
                let env = envelope(r.rows, r.cols);
                GeomWithData::new(Rectangle::from_aabb(env), n.id)
            })
            .collect();
        Self {
            tree: RTree::bulk_load(entries),
        }
    }

    /// Nodes whose region overlaps `rows x cols`, with the overlap area.
    pub fn overlapping(&self, rows: Span, cols: Span) -> impl Iterator<Item = (NodeId, Span, Span)> + '_ {
        self.tree
            .locate_in_envelope_intersecting(&envelope(rows, cols))
            .filter_map(move |e| {
                let env = e.geom().envelope();
                let lo = env.lower();
                let hi = env.upper();
                let er = Span::new(lo[0] as usize, hi[0] as usize + 1);
                let ec = Span::new(lo[1] as usize, hi[1] as usize + 1);
                Some((e.data, er.intersect(&rows)?, ec.intersect(&cols)?))
            })
    }
}

fn index_by_layer(g: &LayerGraph, nodes: &[ComputationNode]) -> Vec<RegionIndex> {
    let mut per_layer: Vec<Vec<&ComputationNode>> = vec![Vec::new(); g.layers.len()];
    for n in nodes {
        per_layer[n.layer].push(n);
    }
    per_layer.into_iter().map(RegionIndex::build).collect()
}

fn dependencies_with(g: &LayerGraph, nodes: &[ComputationNode], index: &[RegionIndex]) -> Vec<DependencyEdge> {
    let mut acc: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for c in nodes {
        let layer = g.layer(c.layer);
        for (_, region) in input_regions(c, layer) {
            let TensorRef::Layer(pid) = region.tensor else {
                continue;
            };
            for (p, rows, cols) in index[pid].overlapping(region.rows, region.cols) {
                *acc.entry((p, c.id)).or_default() += rows.len() as u64 * cols.len() as u64;
            }
        }
    }
    acc.into_iter()
        .map(|((producer, consumer), words)| DependencyEdge { producer, consumer, words })
        .collect()
}

/// Node-level edges from rectangle overlap between consumer input regions and
/// producer output regions. Deduplicated per (producer, consumer) with summed words.
pub fn generate_dependencies(g: &LayerGraph, nodes: &[ComputationNode]) -> Vec<DependencyEdge> {
    let index = index_by_layer(g, nodes);
    dependencies_with(g, nodes, &index)
}

pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Element-level reference: enumerates every output element's input elements
/// from the layer semantics, then lifts to node edges.
pub fn brute_force_dependencies(g: &LayerGraph, nodes: &[ComputationNode]) -> Result<Vec<DependencyEdge>> {
    let total: u64 = g.layers.iter().map(|l| l.output_shape.words()).sum();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::GuardExceeded(total, BRUTE_FORCE_LIMIT));
    }

    // owner[layer][i * cols + j] = node producing element (i, j)
    let mut owner: Vec<Vec<Option<NodeId>>> = g
        .layers
        .iter()
        .map(|l| vec![None; l.output_shape.words() as usize])
        .collect();
    for n in nodes {
        let cols = g.layer(n.layer).output_shape.cols;
        let r = n.output_region;
        for i in r.rows.lo..r.rows.hi {
            for j in r.cols.lo..r.cols.hi {
                owner[n.layer][i * cols + j] = Some(n.id);
            }
        }
    }

    let mut acc: BTreeMap<(NodeId, NodeId), u64> = BTreeMap::new();
    for c in nodes {
        let layer = g.layer(c.layer);
        let r = c.output_region;
        for (slot, op) in layer.operands.iter().enumerate() {
            let Operand::Layer(pid) = *op else {
                continue;
            };
            let in_shape = layer.input_shapes[slot];
            let mut needed: HashSet<(usize, usize)> = HashSet::new();
            for i in r.rows.lo..r.rows.hi {
                for j in r.cols.lo..r.cols.hi {
                    match layer.kind {
                        LayerKind::MatMulWeights | LayerKind::MatMulFeatures => {
                            for k in 0..layer.inner_dim() {
                                needed.insert(if slot == 0 { (i, k) } else { (k, j) });
                            }
                        }
                        LayerKind::Transpose => {
                            needed.insert((j, i));
                        }
                        LayerKind::Softmax => {
                            for k in 0..in_shape.cols {
                                needed.insert((i, k));
                            }
                        }
                        LayerKind::ElementwiseScale => {
                            needed.insert((i, j));
                        }
                    }
                }
            }
            let pcols = g.layer(pid).output_shape.cols;
            let mut per_producer: HashMap<NodeId, u64> = HashMap::new();
            for (i, j) in needed {
                if let Some(p) = owner[pid][i * pcols + j] {
                    *per_producer.entry(p).or_default() += 1;
                }
            }
            for (p, words) in per_producer {
                *acc.entry((p, c.id)).or_default() += words;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((producer, consumer), words)| DependencyEdge { producer, consumer, words })
        .collect())
}

/// Computation nodes plus dependency edges for a whole layer graph.
#[derive(Debug, Clone)]
pub struct NodeGraph {
    pub nodes: Vec<ComputationNode>,
    pub edges: Vec<DependencyEdge>,
    /// Node ids per layer, in band order.
    pub layer_nodes: Vec<Vec<NodeId>>,
    /// Edge indices into `edges`, per consumer / producer node.
    pub in_edges: Vec<Vec<usize>>,
    pub out_edges: Vec<Vec<usize>>,
    index: Vec<RegionIndex>,
}

impl NodeGraph {
    pub fn node(&self, id: NodeId) -> &ComputationNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = &DependencyEdge> + '_ {
        self.in_edges[id].iter().map(move |&e| &self.edges[e])
    }

    pub fn successors(&self, id: NodeId) -> impl Iterator<Item = &DependencyEdge> + '_ {
        self.out_edges[id].iter().map(move |&e| &self.edges[e])
    }

    /// Nodes of `layer` whose outputs overlap `rows x cols`.
    pub fn overlapping(&self, layer: LayerId, rows: Span, cols: Span) -> impl Iterator<Item = (NodeId, Span, Span)> + '_ {
        self.index[layer].overlapping(rows, cols)
    }

    /// Plain-text dump used for golden-file comparisons.
    pub fn dump(&self, g: &LayerGraph) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let r = n.output_region;
            let _ = writeln!(
                s,
                "node {} layer={} kind={:?} rows={} cols={} macs={}",
                n.id,
                g.layer(n.layer).name,
                n.kind,
                r.rows,
                r.cols,
                n.mac_count
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge {} -> {} words={}", e.producer, e.consumer, e.words);
        }
        s
    }
}

/// Splits every layer per `plan` and derives the node dependency graph.
pub fn fine_grained_graph(g: &LayerGraph, plan: &SplitPlan) -> Result<NodeGraph> {
    g.topo_order().ok_or(Error::Cyclic)?;
    let mut layer_nodes = vec![Vec::new(); g.layers.len()];
    let mut nodes = Vec::new();
    // ids follow layer id order so that tie-breaks by id are stable
    for layer in &g.layers {
        let split = plan.get(layer.id).ok_or(Error::MissingSplit(layer.id))?;
        for mut n in split_layer(layer, split)? {
            n.id = nodes.len();
            layer_nodes[layer.id].push(n.id);
            nodes.push(n);
        }
    }
    let index = index_by_layer(g, &nodes);
    let edges = dependencies_with(g, &nodes, &index);
    let mut in_edges = vec![Vec::new(); nodes.len()];
    let mut out_edges = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        in_edges[e.consumer].push(i);
        out_edges[e.producer].push(i);
    }
    Ok(NodeGraph {
        nodes,
        edges,
        layer_nodes,
        in_edges,
        out_edges,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_attention_head, build_mhsa, HeadRole, TensorShape};

    fn matmul(rows: usize, cols: usize, inner: usize) -> Layer {
        Layer {
            id: 0,
            name: "mm".into(),
            kind: LayerKind::MatMulWeights,
            operands: vec![Operand::Input(0), Operand::Weight],
            input_shapes: vec![
                TensorShape { rows, cols: inner },
                TensorShape { rows: inner, cols },
            ],
            output_shape: TensorShape { rows, cols },
            role: None,
        }
    }

    #[test]
    fn split_one_per_row() {
        let nodes = split_layer(&matmul(8, 16, 4), Split::rows(1)).unwrap();
        assert_eq!(nodes.len(), 8);
        for (i, n) in nodes.iter().enumerate() {
            assert_eq!(n.output_region.rows, Span::new(i, i + 1));
            assert_eq!(n.output_region.cols, Span::new(0, 16));
            assert_eq!(n.mac_count, 16 * 4);
        }
    }

    #[test]
    fn split_whole_softmax() {
        let g = build_attention_head(4, 2).unwrap();
        let p = g.layer(g.find_role(0, HeadRole::Probs).unwrap());
        let nodes = split_layer(p, Split::rows(4)).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].output_region.rows, Span::new(0, 4));
    }

    #[test]
    fn split_columns_with_remainder() {
        let nodes = split_layer(&matmul(6, 6, 3), Split { axis: SplitAxis::T, tile: Some(4) }).unwrap();
        let cols: Vec<_> = nodes.iter().map(|n| n.output_region.cols).collect();
        assert_eq!(cols, vec![Span::new(0, 4), Span::new(4, 6)]);
    }

    #[test]
    fn split_errors() {
        assert!(split_layer(&matmul(4, 4, 4), Split::rows(0)).is_err());
        let g = build_attention_head(4, 4).unwrap();
        let p = g.layer(g.find_role(0, HeadRole::Probs).unwrap());
        assert!(split_layer(p, Split { axis: SplitAxis::T, tile: Some(1) }).is_err());
    }

    #[test]
    fn input_regions_per_kind() {
        let (m, n) = (6, 5);
        let g = build_attention_head(m, n).unwrap();
        let s = g.layer(g.find_role(0, HeadRole::Scores).unwrap());
        let node = &split_layer(s, Split::rows(1)).unwrap()[0];
        let regs = input_regions(node, s);
        assert_eq!(regs[0].1.rows, Span::new(0, 1));
        assert_eq!(regs[0].1.cols, Span::new(0, n));
        assert_eq!(regs[1].1.rows, Span::new(0, n));
        assert_eq!(regs[1].1.cols, Span::new(0, m));

        let g = build_attention_head(8, 8).unwrap();
        let kt = g.layer(g.find_role(0, HeadRole::KeyT).unwrap());
        let node = &split_layer(kt, Split::rows(1)).unwrap()[2];
        let regs = input_regions(node, kt);
        assert_eq!((regs[0].1.rows, regs[0].1.cols), (Span::new(0, 8), Span::new(2, 3)));

        let g = build_attention_head(4, 3).unwrap();
        let p = g.layer(g.find_role(0, HeadRole::Probs).unwrap());
        let node = &split_layer(p, Split::rows(1)).unwrap()[1];
        let regs = input_regions(node, p);
        assert_eq!((regs[0].1.rows, regs[0].1.cols), (Span::new(1, 2), Span::new(0, 4)));

        // weights are never a feature region
        let q = g.layer(g.find_role(0, HeadRole::Query).unwrap());
        let node = &split_layer(q, Split::rows(1)).unwrap()[0];
        assert_eq!(input_regions(node, q).len(), 1);
    }

    fn plan_with(g: &LayerGraph, f: impl Fn(HeadRole) -> Split) -> SplitPlan {
        SplitPlan(g.layers.iter().map(|l| (l.id, f(l.role.unwrap().1))).collect())
    }

    #[test]
    fn q_bands_feed_score_rows() {
        let g = build_attention_head(8, 4).unwrap();
        let plan = plan_with(&g, |r| if r == HeadRole::Query { Split::rows(4) } else { Split::rows(1) });
        let ng = fine_grained_graph(&g, &plan).unwrap();
        let q = g.find_role(0, HeadRole::Query).unwrap();
        let s = g.find_role(0, HeadRole::Scores).unwrap();
        for &c in &ng.layer_nodes[s] {
            let from_q: Vec<_> = ng.predecessors(c).filter(|e| ng.node(e.producer).layer == q).collect();
            assert_eq!(from_q.len(), 1);
        }
        let brute = brute_force_dependencies(&g, &ng.nodes).unwrap();
        assert_eq!(brute, ng.edges);
    }

    #[test]
    fn softmax_rows_single_edge() {
        let g = build_attention_head(4, 4).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::rows(1))).unwrap();
        let p = g.find_role(0, HeadRole::Probs).unwrap();
        for &c in &ng.layer_nodes[p] {
            let ins: Vec<_> = ng.predecessors(c).collect();
            assert_eq!(ins.len(), 1);
            assert_eq!(ins[0].words, 4);
        }
        assert_eq!(brute_force_dependencies(&g, &ng.nodes).unwrap(), ng.edges);
    }

    #[test]
    fn heads_stay_disjoint() {
        let g = build_mhsa(4, 4, 3).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::rows(2))).unwrap();
        for e in &ng.edges {
            let hp = g.layer(ng.node(e.producer).layer).head();
            let hc = g.layer(ng.node(e.consumer).layer).head();
            assert_eq!(hp, hc);
        }
    }

    #[test]
    fn whole_layers_give_seven_nodes_eight_edges() {
        let g = build_attention_head(8, 8).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::whole())).unwrap();
        assert_eq!(ng.len(), 7);
        // one edge per feature operand produced by another layer; the graph
        // input feeds Q, K and V but is not a node
        let expected: usize = g.layers.iter().map(|l| l.predecessors().count()).sum();
        assert_eq!(expected, 6);
        assert_eq!(ng.edges.len(), expected);
    }

    #[test]
    fn row_split_counts() {
        let g = build_attention_head(8, 8).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::rows(1))).unwrap();
        for l in &g.layers {
            assert_eq!(ng.layer_nodes[l.id].len(), 8, "{}", l.name);
        }
    }

    #[test]
    fn empty_plan_rejected() {
        let g = build_attention_head(8, 8).unwrap();
        assert!(matches!(
            fine_grained_graph(&g, &SplitPlan::default()),
            Err(Error::MissingSplit(0))
        ));
    }

    #[test]
    fn brute_force_guard() {
        let g = build_attention_head(1024, 512).unwrap();
        assert!(matches!(
            brute_force_dependencies(&g, &[]),
            Err(Error::GuardExceeded(..))
        ));
    }

    #[test]
    fn dump_lists_nodes_and_edges() {
        let g = build_attention_head(2, 2).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::whole())).unwrap();
        let text = ng.dump(&g);
        assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), 7);
        assert!(text.contains("edge 1 -> 3 words=4"));
    }
}
