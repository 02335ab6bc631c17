//! Typed layer graphs for transformer attention workloads.
//!
//! A head is seven layers: three weight matmuls producing Q, K and V from a
//! shared input, a transpose of K, the feature matmul Q·K^T, a row-wise
//! softmax, and the feature matmul P·V. The 1/sqrt(d_k) scale is folded into
//! W_Q and never appears as a layer.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LayerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {rows}x{cols} must be positive"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn words(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    pub fn transposed(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    /// Right operand is a constant weight matrix.
    MatMulWeights,
    /// Both operands are feature tensors.
    MatMulFeatures,
    Transpose,
    /// Row-wise softmax.
    Softmax,
    /// Folded scale marker; never materialized in built graphs.
    ElementwiseScale,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::MatMulWeights,
        LayerKind::MatMulFeatures,
        LayerKind::Transpose,
        LayerKind::Softmax,
        LayerKind::ElementwiseScale,
    ];

    pub fn is_matmul(self) -> bool {
        matches!(self, LayerKind::MatMulWeights | LayerKind::MatMulFeatures)
    }
}

/// Where a layer input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    /// Graph input tensor by index.
    Input(usize),
    /// Output of another layer.
    Layer(LayerId),
    /// Resident constant (weights); never counted as active feature memory.
    Weight,
}

/// Position of a layer inside an attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadRole {
    Query,
    Key,
    Value,
    KeyT,
    Scores,
    Probs,
    Output,
}

impl HeadRole {
    pub const ALL: [HeadRole; 7] = [
        HeadRole::Query,
        HeadRole::Key,
        HeadRole::Value,
        HeadRole::KeyT,
        HeadRole::Scores,
        HeadRole::Probs,
        HeadRole::Output,
    ];

    pub fn short(self) -> &'static str {
        match self {
            HeadRole::Query => "Q",
            HeadRole::Key => "K",
            HeadRole::Value => "V",
            HeadRole::KeyT => "KT",
            HeadRole::Scores => "QKT",
            HeadRole::Probs => "P",
            HeadRole::Output => "PV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: LayerId,
    pub name: String,
    pub kind: LayerKind,
    pub operands: Vec<Operand>,
    pub input_shapes: Vec<TensorShape>,
    pub output_shape: TensorShape,
    /// Head index and role, for layers built by [`build_attention_head`] / [`build_mhsa`].
    pub role: Option<(usize, HeadRole)>,
}

impl Layer {
    /// Feature predecessors as `(layer id, input slot)`.
    pub fn predecessors(&self) -> impl Iterator<Item = (LayerId, usize)> + '_ {
        self.operands
            .iter()
            .enumerate()
            .filter_map(|(slot, op)| match op {
                Operand::Layer(id) => Some((*id, slot)),
                _ => None,
            })
    }

    /// Shared (contraction) dimension of a matmul; 0 otherwise.
    pub fn inner_dim(&self) -> usize {
        if self.kind.is_matmul() {
            self.input_shapes[0].cols
        } else {
            0
        }
    }

    pub fn mac_count(&self) -> u64 {
        if self.kind.is_matmul() {
            self.output_shape.words() * self.inner_dim() as u64
        } else {
            0
        }
    }

    pub fn head(&self) -> Option<usize> {
        self.role.map(|(h, _)| h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub inputs: Vec<TensorShape>,
    pub layers: Vec<Layer>,
    pub head_count: usize,
}

impl LayerGraph {
    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id]
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(Layer::mac_count).sum()
    }

    pub fn input_words(&self) -> u64 {
        self.inputs.iter().map(TensorShape::words).sum()
    }

    /// Shape of whatever an operand refers to, if it is a feature tensor.
    pub fn operand_shape(&self, op: Operand) -> Option<TensorShape> {
        match op {
            Operand::Input(i) => self.inputs.get(i).copied(),
            Operand::Layer(id) => self.layers.get(id).map(|l| l.output_shape),
            Operand::Weight => None,
        }
    }

    /// Successor lists indexed by layer id.
    pub fn consumers(&self) -> Vec<Vec<LayerId>> {
        let mut out = vec![Vec::new(); self.layers.len()];
        for layer in &self.layers {
            for (pred, _) in layer.predecessors() {
                if pred < out.len() && !out[pred].contains(&layer.id) {
                    out[pred].push(layer.id);
                }
            }
        }
        out
    }

    /// Layers whose output nobody consumes.
    pub fn outputs(&self) -> Vec<LayerId> {
        let consumers = self.consumers();
        (0..self.layers.len())
            .filter(|&id| consumers[id].is_empty())
            .collect()
    }

    pub fn find_role(&self, head: usize, role: HeadRole) -> Option<LayerId> {
        self.layers
            .iter()
            .find(|l| l.role == Some((head, role)))
            .map(|l| l.id)
    }

    /// Kahn order, or `None` if a cycle exists.
    pub fn topo_order(&self) -> Option<Vec<LayerId>> {
        let n = self.layers.len();
        let mut indeg = vec![0usize; n];
        let consumers = self.consumers();
        for layer in &self.layers {
            let mut seen = Vec::new();
            for (pred, _) in layer.predecessors() {
                if pred < n && !seen.contains(&pred) {
                    seen.push(pred);
                    indeg[layer.id] += 1;
                }
            }
        }
        let mut queue: VecDeque<LayerId> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            for &c in &consumers[id] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

struct GraphBuilder {
    graph: LayerGraph,
}

impl GraphBuilder {
    fn push(
        &mut self,
        name: String,
        kind: LayerKind,
        operands: Vec<Operand>,
        input_shapes: Vec<TensorShape>,
        output_shape: TensorShape,
        role: Option<(usize, HeadRole)>,
    ) -> LayerId {
        let id = self.graph.layers.len();
        self.graph.layers.push(Layer {
            id,
            name,
            kind,
            operands,
            input_shapes,
            output_shape,
            role,
        });
        id
    }

    fn head(&mut self, m: usize, n: usize, head: usize, input: usize) {
        let md = TensorShape { rows: m, cols: n };
        let w = TensorShape { rows: n, cols: n };
        let mm = TensorShape { rows: m, cols: m };
        let tag = |role: HeadRole| Some((head, role));
        let name = |role: HeadRole| format!("h{head}.{}", role.short());

        let q = self.push(
            name(HeadRole::Query),
            LayerKind::MatMulWeights,
            vec![Operand::Input(input), Operand::Weight],
            vec![md, w],
            md,
            tag(HeadRole::Query),
        );
        let k = self.push(
            name(HeadRole::Key),
            LayerKind::MatMulWeights,
            vec![Operand::Input(input), Operand::Weight],
            vec![md, w],
            md,
            tag(HeadRole::Key),
        );
        let v = self.push(
            name(HeadRole::Value),
            LayerKind::MatMulWeights,
            vec![Operand::Input(input), Operand::Weight],
            vec![md, w],
            md,
            tag(HeadRole::Value),
        );
        let kt = self.push(
            name(HeadRole::KeyT),
            LayerKind::Transpose,
            vec![Operand::Layer(k)],
            vec![md],
            md.transposed(),
            tag(HeadRole::KeyT),
        );
        let s = self.push(
            name(HeadRole::Scores),
            LayerKind::MatMulFeatures,
            vec![Operand::Layer(q), Operand::Layer(kt)],
            vec![md, md.transposed()],
            mm,
            tag(HeadRole::Scores),
        );
        let p = self.push(
            name(HeadRole::Probs),
            LayerKind::Softmax,
            vec![Operand::Layer(s)],
            vec![mm],
            mm,
            tag(HeadRole::Probs),
        );
        self.push(
            name(HeadRole::Output),
            LayerKind::MatMulFeatures,
            vec![Operand::Layer(p), Operand::Layer(v)],
            vec![mm, md],
            md,
            tag(HeadRole::Output),
        );
    }
}

fn check_dims(m: usize, n: usize, heads: usize) -> Result<()> {
    if m == 0 || n == 0 || heads == 0 {
        return Err(Error::InvalidArgument(format!(
            "attention dims must be positive (M={m}, N={n}, heads={heads})"
        )));
    }
    Ok(())
}

/// One attention head over an `m x n` input.
pub fn build_attention_head(m: usize, n: usize) -> Result<LayerGraph> {
    build_mhsa(m, n, 1)
}

/// `heads` independent attention heads sharing one `m x n` input tensor.
pub fn build_mhsa(m: usize, n: usize, heads: usize) -> Result<LayerGraph> {
    check_dims(m, n, heads)?;
    let mut b = GraphBuilder {
        graph: LayerGraph {
            inputs: vec![TensorShape { rows: m, cols: n }],
            layers: Vec::with_capacity(7 * heads),
            head_count: heads,
        },
    };
    for h in 0..heads {
        b.head(m, n, h, 0);
    }
    Ok(b.graph)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: LayerId,
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeReport {
    pub cyclic: bool,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.cyclic {
            writeln!(f, "graph contains a cycle")?;
        }
        for v in &self.violations {
            writeln!(f, "layer {} ({}): {}", v.layer, v.name, v.message)?;
        }
        Ok(())
    }
}

/// Checks acyclicity and per-kind shape rules. Never aborts on the first problem.
pub fn validate_graph(g: &LayerGraph) -> std::result::Result<(), ShapeReport> {
    let mut report = ShapeReport {
        cyclic: g.topo_order().is_none(),
        violations: Vec::new(),
    };
    let mut flag = |layer: &Layer, message: String| {
        report.violations.push(Violation {
            layer: layer.id,
            name: layer.name.clone(),
            message,
        })
    };

    for layer in &g.layers {
        if layer.operands.len() != layer.input_shapes.len() {
            flag(layer, "operand count differs from input shape count".into());
            continue;
        }
        for (slot, (op, shape)) in layer.operands.iter().zip(&layer.input_shapes).enumerate() {
            match op {
                Operand::Layer(id) if *id >= g.layers.len() => {
                    flag(layer, format!("slot {slot} refers to missing layer {id}"))
                }
                Operand::Input(i) if *i >= g.inputs.len() => {
                    flag(layer, format!("slot {slot} refers to missing input {i}"))
                }
                _ => {
                    if let Some(actual) = g.operand_shape(*op) {
                        if actual != *shape {
                            flag(
                                layer,
                                format!("slot {slot} expects {shape} but producer yields {actual}"),
                            );
                        }
                    }
                }
            }
        }

        let ins = &layer.input_shapes;
        let out = layer.output_shape;
        match layer.kind {
            LayerKind::MatMulWeights | LayerKind::MatMulFeatures => {
                if ins.len() != 2 {
                    flag(layer, format!("matmul needs 2 inputs, has {}", ins.len()));
                    continue;
                }
                if ins[0].cols != ins[1].rows {
                    flag(
                        layer,
                        format!("inner dims mismatch: {} vs {}", ins[0], ins[1]),
                    );
                }
                if out.rows != ins[0].rows || out.cols != ins[1].cols {
                    flag(
                        layer,
                        format!("output {out} is not {}x{}", ins[0].rows, ins[1].cols),
                    );
                }
                let weight_slot = layer.operands.get(1) == Some(&Operand::Weight);
                if (layer.kind == LayerKind::MatMulWeights) != weight_slot {
                    flag(layer, "weight operand does not match matmul kind".into());
                }
            }
            LayerKind::Transpose => {
                if ins.len() != 1 || out != ins[0].transposed() {
                    flag(layer, format!("transpose output {out} is not the swapped input"));
                }
            }
            LayerKind::Softmax | LayerKind::ElementwiseScale => {
                if ins.len() != 1 || out != ins[0] {
                    flag(layer, format!("output {out} must equal its input shape"));
                }
            }
        }
    }

    if report.cyclic || !report.violations.is_empty() {
        Err(report)
    } else {
        Ok(())
    }
}

/// Workload config file: `m`, `n`, `heads`, `word_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub m: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default = "one")]
    pub word_bytes: usize,
}

fn one() -> usize {
    1
}

impl WorkloadConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        check_dims(cfg.m, cfg.n, cfg.heads)?;
        if cfg.word_bytes == 0 {
            return Err(Error::Parse("word_bytes must be positive".into()));
        }
        Ok(cfg)
    }

    /// Accepts `head_MxN` or `mhsa_MxN_hH` shorthands.
    pub fn from_name(name: &str) -> Option<Self> {
        let dims = |s: &str| {
            let (m, n) = s.split_once('x')?;
            Some((m.parse().ok()?, n.parse().ok()?))
        };
        if let Some(rest) = name.strip_prefix("head_") {
            let (m, n) = dims(rest)?;
            return Some(Self { m, n, heads: 1, word_bytes: 1 });
        }
        let rest = name.strip_prefix("mhsa_")?;
        let (d, h) = rest.split_once("_h")?;
        let (m, n) = dims(d)?;
        Some(Self { m, n, heads: h.parse().ok()?, word_bytes: 1 })
    }

    pub fn build(&self) -> Result<LayerGraph> {
        build_mhsa(self.m, self.n, self.heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape_of(g: &LayerGraph, role: HeadRole) -> TensorShape {
        g.layer(g.find_role(0, role).unwrap()).output_shape
    }

    #[test]
    fn head_shapes_128x1024() {
        let g = build_attention_head(128, 1024).unwrap();
        assert_eq!(g.layers.len(), 7);
        let md = TensorShape { rows: 128, cols: 1024 };
        assert_eq!(shape_of(&g, HeadRole::Query), md);
        assert_eq!(shape_of(&g, HeadRole::Key), md);
        assert_eq!(shape_of(&g, HeadRole::Value), md);
        assert_eq!(shape_of(&g, HeadRole::KeyT), md.transposed());
        assert_eq!(shape_of(&g, HeadRole::Scores), TensorShape { rows: 128, cols: 128 });
        assert_eq!(shape_of(&g, HeadRole::Probs), TensorShape { rows: 128, cols: 128 });
        assert_eq!(shape_of(&g, HeadRole::Output), md);
    }

    #[test]
    fn unit_head() {
        let g = build_attention_head(1, 1).unwrap();
        assert_eq!(g.layers.len(), 7);
        assert!(g.layers.iter().all(|l| l.output_shape == TensorShape { rows: 1, cols: 1 }));
    }

    fn enumerate_macs(g: &LayerGraph) -> u64 {
        // R*S*T straight from the stored shapes, one term per matmul.
        let mut total = 0;
        for l in &g.layers {
            if l.kind.is_matmul() {
                let (r, s) = (l.input_shapes[0].rows, l.input_shapes[0].cols);
                let t = l.input_shapes[1].cols;
                let mut count = 0u64;
                for _ in 0..r {
                    for _ in 0..t {
                        count += s as u64;
                    }
                }
                total += count;
            }
        }
        total
    }

    #[test]
    fn mac_count_8x32() {
        let g = build_attention_head(8, 32).unwrap();
        assert_eq!(enumerate_macs(&g), 28672);
        assert_eq!(g.total_macs(), 28672);
    }

    #[test]
    fn mhsa_structure() {
        let g = build_mhsa(8, 32, 4).unwrap();
        assert_eq!(g.layers.len(), 28);
        for l in &g.layers {
            let h = l.head().unwrap();
            for (p, _) in l.predecessors() {
                assert_eq!(g.layer(p).head(), Some(h), "cross-head edge into {}", l.name);
            }
        }
        assert_eq!(build_mhsa(81, 32, 1).unwrap(), build_attention_head(81, 32).unwrap());
        let two = build_mhsa(128, 32, 2).unwrap();
        assert_eq!(enumerate_macs(&two), 2 * (3 * 128 * 32 * 32 + 2 * 128 * 128 * 32));
    }

    #[test]
    fn head_has_two_feature_matmuls() {
        let g = build_attention_head(5, 3).unwrap();
        let matmuls = g.layers.iter().filter(|l| l.kind.is_matmul()).count();
        let feature = g
            .layers
            .iter()
            .filter(|l| l.kind.is_matmul() && l.predecessors().count() == 2)
            .count();
        assert_eq!((matmuls, feature), (5, 2));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(build_attention_head(0, 4).is_err());
        assert!(build_mhsa(4, 4, 0).is_err());
    }

    #[test]
    fn validate_ok_and_violations() {
        assert!(validate_graph(&build_attention_head(16, 16).unwrap()).is_ok());

        let mut g = build_attention_head(4, 8).unwrap();
        let kt = g.find_role(0, HeadRole::KeyT).unwrap();
        g.layers[kt].output_shape = TensorShape { rows: 4, cols: 8 };
        let report = validate_graph(&g).unwrap_err();
        assert!(report.violations.iter().any(|v| v.layer == kt));

        let mut g = build_attention_head(4, 8).unwrap();
        let s = g.find_role(0, HeadRole::Scores).unwrap();
        g.layers[s].input_shapes[1] = TensorShape { rows: 7, cols: 4 };
        let report = validate_graph(&g).unwrap_err();
        assert!(report
            .violations
            .iter()
            .any(|v| v.layer == s && v.message.contains("inner dims")));
    }

    #[test]
    fn cycle_reported() {
        let mut g = build_attention_head(2, 2).unwrap();
        let q = g.find_role(0, HeadRole::Query).unwrap();
        let o = g.find_role(0, HeadRole::Output).unwrap();
        g.layers[q].operands[0] = Operand::Layer(o);
        let report = validate_graph(&g).unwrap_err();
        assert!(report.cyclic);
    }

    #[test]
    fn workload_config() {
        let cfg = WorkloadConfig::parse("m = 64\nn = 256\nheads = 2\nword_bytes = 1\n").unwrap();
        assert_eq!(cfg.build().unwrap().layers.len(), 14);
        assert!(WorkloadConfig::parse("m = 0\nn = 4").is_err());
        assert!(WorkloadConfig::parse("m = 4\nn = 4\nbogus = 1").is_err());
        assert_eq!(
            WorkloadConfig::from_name("head_128x1024"),
            Some(WorkloadConfig { m: 128, n: 1024, heads: 1, word_bytes: 1 })
        );
        assert_eq!(WorkloadConfig::from_name("mhsa_64x64_h4").unwrap().heads, 4);
    }
}
