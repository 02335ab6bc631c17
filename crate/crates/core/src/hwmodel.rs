//! Accelerator platform descriptions: PE-array cores, SIMD units, memory
//! levels and links.
//!
//! Resource ids are shared between cores and SIMD units so that an allocation
//! can name either. A SIMD unit sits next to one core and shares its memories.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::LayerKind;

pub type ResourceId = u32;

/// Kinds an attention head actually instantiates.
pub const ATTENTION_KINDS: [LayerKind; 4] = [
    LayerKind::MatMulWeights,
    LayerKind::MatMulFeatures,
    LayerKind::Transpose,
    LayerKind::Softmax,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperandRole {
    I1,
    I2,
    O,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterFile {
    pub i1: u64,
    pub i2: u64,
    pub o: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Core {
    pub id: ResourceId,
    pub array_rows: u32,
    pub array_cols: u32,
    pub macs_per_pe: u32,
    pub register_file_words: RegisterFile,
    pub supports: BTreeSet<LayerKind>,
}

impl Core {
    pub fn peak_macs(&self) -> u64 {
        self.array_rows as u64 * self.array_cols as u64 * self.macs_per_pe as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimdUnit {
    pub id: ResourceId,
    /// Words processed per cycle.
    pub lanes: u32,
    pub attached_core: ResourceId,
    pub supports: BTreeSet<LayerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub id: u32,
    pub name: String,
    /// 0 is the register level next to the PEs; larger is further away.
    pub level: u32,
    pub capacity: u64,
    pub read_bw: f64,
    pub write_bw: f64,
    pub access_cost: f64,
    pub serves: BTreeSet<OperandRole>,
    /// One instance shared by all cores, rather than one per core.
    #[serde(default)]
    pub shared: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Core(ResourceId),
    Memory(u32),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Core(id) => write!(f, "core:{id}"),
            Endpoint::Memory(id) => write!(f, "mem:{id}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad link endpoint `{s}` (want core:<id> or mem:<id>)"));
        let (kind, id) = s.split_once(':').ok_or_else(bad)?;
        let id: u32 = id.parse().map_err(|_| bad())?;
        match kind {
            "core" => Ok(Endpoint::Core(id)),
            "mem" => Ok(Endpoint::Memory(id)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: Endpoint,
    pub to: Endpoint,
    /// Words per cycle.
    pub bw: f64,
    pub setup: u64,
}

/// Memory ids where weights and graph inputs live, when not placed by capacity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residency {
    pub weights: Option<u32>,
    pub inputs: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareSpec {
    pub name: String,
    pub clock: String,
    pub cores: Vec<Core>,
    pub simd: Vec<SimdUnit>,
    pub memories: Vec<MemoryLevel>,
    pub links: Vec<Link>,
    pub residency: Residency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResourceKind {
    Core,
    Simd,
}

/// What a node operand is, for placement purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Weight,
    GraphInput,
    Feature,
}

/// Bandwidth and per-word energy of the memory an operand streams from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperandFeed {
    pub words_per_cycle: f64,
    pub access_cost: f64,
}

impl HardwareSpec {
    pub fn peak_macs(&self) -> u64 {
        self.cores.iter().map(Core::peak_macs).sum()
    }

    pub fn core(&self, id: ResourceId) -> Option<&Core> {
        self.cores.iter().find(|c| c.id == id)
    }

    pub fn simd_unit(&self, id: ResourceId) -> Option<&SimdUnit> {
        self.simd.iter().find(|s| s.id == id)
    }

    pub fn resource_kind(&self, id: ResourceId) -> Option<ResourceKind> {
        if self.core(id).is_some() {
            Some(ResourceKind::Core)
        } else if self.simd_unit(id).is_some() {
            Some(ResourceKind::Simd)
        } else {
            None
        }
    }

    /// All resource ids, ascending.
    pub fn resources(&self) -> Vec<ResourceId> {
        let mut ids: Vec<_> = self
            .cores
            .iter()
            .map(|c| c.id)
            .chain(self.simd.iter().map(|s| s.id))
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn supports(&self, id: ResourceId, kind: LayerKind) -> bool {
        self.core(id)
            .map(|c| c.supports.contains(&kind))
            .or_else(|| self.simd_unit(id).map(|s| s.supports.contains(&kind)))
            .unwrap_or(false)
    }

    /// Resources able to run `kind`, ascending by id.
    pub fn supporting(&self, kind: LayerKind) -> Vec<ResourceId> {
        self.resources()
            .into_iter()
            .filter(|&r| self.supports(r, kind))
            .collect()
    }

    /// The core a resource belongs to (SIMD units map to their attached core).
    pub fn home_core(&self, id: ResourceId) -> ResourceId {
        self.simd_unit(id).map(|s| s.attached_core).unwrap_or(id)
    }

    pub fn capability_gaps(&self, kinds: &[LayerKind]) -> Vec<LayerKind> {
        kinds
            .iter()
            .copied()
            .filter(|&k| self.supporting(k).is_empty())
            .collect()
    }

    /// Cycles to move `words` from one resource to another. Free within a core
    /// and its SIMD unit (register forwarding path).
    pub fn transfer_cycles(&self, from: ResourceId, to: ResourceId, words: u64) -> Result<u64> {
        let (a, b) = (self.home_core(from), self.home_core(to));
        if a == b || words == 0 {
            return Ok(0);
        }
        let direct = self.links.iter().find(|l| {
            (l.from == Endpoint::Core(a) && l.to == Endpoint::Core(b))
                || (l.from == Endpoint::Core(b) && l.to == Endpoint::Core(a))
        });
        if let Some(link) = direct {
            return Ok(link.setup + (words as f64 / link.bw).ceil() as u64);
        }
        let shared = self
            .memories
            .iter()
            .filter(|m| m.shared && m.level > 0)
            .min_by_key(|m| (m.level, m.id));
        match shared {
            Some(m) => Ok((words as f64 / m.read_bw.min(m.write_bw)).ceil() as u64),
            None => Err(Error::NoPath(from, to)),
        }
    }

    fn levels_serving(&self, role: OperandRole) -> impl Iterator<Item = &MemoryLevel> + '_ {
        self.memories.iter().filter(move |m| m.serves.contains(&role))
    }

    /// Memory level an operand tensor of `tensor_words` lives in: the
    /// residency override for weights/inputs, otherwise the innermost
    /// non-register level that serves the role and fits the whole tensor.
    pub fn home_level(&self, role: OperandRole, tensor_words: u64, source: DataSource) -> Option<&MemoryLevel> {
        let pinned = match source {
            DataSource::Weight => self.residency.weights,
            DataSource::GraphInput => self.residency.inputs,
            DataSource::Feature => None,
        };
        if let Some(id) = pinned {
            if let Some(m) = self.memories.iter().find(|m| m.id == id) {
                return Some(m);
            }
        }
        let mut candidates: Vec<&MemoryLevel> =
            self.levels_serving(role).filter(|m| m.level > 0).collect();
        candidates.sort_by_key(|m| (m.level, m.id));
        candidates
            .iter()
            .find(|m| m.capacity >= tensor_words)
            .or(candidates.last())
            .copied()
            .or_else(|| self.register_level(role))
    }

    /// Innermost level serving the role; forwarded (fused) operands are charged here.
    pub fn register_level(&self, role: OperandRole) -> Option<&MemoryLevel> {
        self.levels_serving(role).min_by_key(|m| (m.level, m.id))
    }

    /// Effective feed from a memory: its port bandwidth, capped by any link
    /// leaving that memory towards the cores.
    pub fn feed_from(&self, level: &MemoryLevel, role: OperandRole) -> OperandFeed {
        let port = if role == OperandRole::O { level.write_bw } else { level.read_bw };
        let link_cap = self
            .links
            .iter()
            .filter(|l| l.from == Endpoint::Memory(level.id) || l.to == Endpoint::Memory(level.id))
            .filter(|l| matches!((l.from, l.to), (Endpoint::Memory(_), Endpoint::Memory(_))))
            .filter(|l| {
                let other = if l.from == Endpoint::Memory(level.id) { l.to } else { l.from };
                match other {
                    Endpoint::Memory(o) => self
                        .memories
                        .iter()
                        .any(|m| m.id == o && m.level < level.level),
                    Endpoint::Core(_) => false,
                }
            })
            .map(|l| l.bw)
            .fold(f64::INFINITY, f64::min);
        OperandFeed {
            words_per_cycle: port.min(link_cap),
            access_cost: level.access_cost,
        }
    }

    pub fn operand_feed(&self, role: OperandRole, tensor_words: u64, source: DataSource) -> OperandFeed {
        match self.home_level(role, tensor_words, source) {
            Some(m) => self.feed_from(m, role),
            None => OperandFeed { words_per_cycle: f64::INFINITY, access_cost: 0.0 },
        }
    }

    /// Feed for an operand forwarded over the register path.
    pub fn forwarded_feed(&self, role: OperandRole) -> OperandFeed {
        match self.register_level(role) {
            Some(m) => OperandFeed { words_per_cycle: f64::INFINITY, access_cost: m.access_cost },
            None => OperandFeed { words_per_cycle: f64::INFINITY, access_cost: 0.0 },
        }
    }

    /// Structural validation; does not check kind coverage.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for id in self.cores.iter().map(|c| c.id).chain(self.simd.iter().map(|s| s.id)) {
            if !ids.insert(id) {
                return Err(Error::Parse(format!("duplicate resource id {id}")));
            }
        }
        for c in &self.cores {
            if c.peak_macs() == 0 {
                return Err(Error::Parse(format!("core {} has no MAC units", c.id)));
            }
        }
        for s in &self.simd {
            if s.lanes == 0 {
                return Err(Error::Parse(format!("simd unit {} has zero lanes", s.id)));
            }
            if self.core(s.attached_core).is_none() {
                return Err(Error::Parse(format!(
                    "simd unit {} attached to missing core {}",
                    s.id, s.attached_core
                )));
            }
        }
        let mut mem_ids = BTreeSet::new();
        for m in &self.memories {
            if !mem_ids.insert(m.id) {
                return Err(Error::Parse(format!("duplicate memory id {}", m.id)));
            }
            if m.capacity == 0 || !(m.read_bw > 0.0) || !(m.write_bw > 0.0) {
                return Err(Error::Parse(format!(
                    "memory {} needs positive capacity and bandwidths",
                    m.name
                )));
            }
        }
        for l in &self.links {
            if !(l.bw > 0.0) {
                return Err(Error::Parse(format!("link {} -> {} has non-positive bandwidth", l.from, l.to)));
            }
            for e in [l.from, l.to] {
                let ok = match e {
                    Endpoint::Core(id) => self.core(id).is_some(),
                    Endpoint::Memory(id) => mem_ids.contains(&id),
                };
                if !ok {
                    return Err(Error::Parse(format!("link endpoint {e} does not exist")));
                }
            }
        }
        for (what, id) in [("weights", self.residency.weights), ("inputs", self.residency.inputs)] {
            if let Some(id) = id {
                if !mem_ids.contains(&id) {
                    return Err(Error::Parse(format!("{what} residency names missing memory {id}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkConfig {
    from: Endpoint,
    to: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bw_words: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bw_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    setup: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HardwareConfig {
    name: String,
    #[serde(default)]
    clock: String,
    #[serde(default, skip_serializing_if = "is_default_residency")]
    residency: Residency,
    #[serde(default)]
    cores: Vec<Core>,
    #[serde(default)]
    simd: Vec<SimdUnit>,
    #[serde(default)]
    memories: Vec<MemoryLevel>,
    #[serde(default)]
    links: Vec<LinkConfig>,
}

fn is_default_residency(r: &Residency) -> bool {
    *r == Residency::default()
}

/// Parses a hardware config (TOML). Bit-width links become words/cycle using
/// `word_bytes`. Fails with a capability gap if some attention layer kind has
/// no supporting resource.
pub fn load_hardware(text: &str, word_bytes: usize) -> Result<HardwareSpec> {
    if word_bytes == 0 {
        return Err(Error::InvalidArgument("word_bytes must be positive".into()));
    }
    let cfg: HardwareConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let links = cfg
        .links
        .into_iter()
        .map(|l| {
            let bw = match (l.bw_words, l.bw_bits) {
                (Some(w), None) => w,
                (None, Some(bits)) => bits / (8.0 * word_bytes as f64),
                _ => {
                    return Err(Error::Parse(format!(
                        "link {} -> {} needs exactly one of bw_words / bw_bits",
                        l.from, l.to
                    )))
                }
            };
            Ok(Link { from: l.from, to: l.to, bw, setup: l.setup })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = HardwareSpec {
        name: cfg.name,
        clock: cfg.clock,
        cores: cfg.cores,
        simd: cfg.simd,
        memories: cfg.memories,
        links,
        residency: cfg.residency,
    };
    spec.validate()?;
    let gaps = spec.capability_gaps(&ATTENTION_KINDS);
    if !gaps.is_empty() {
        return Err(Error::CapabilityGap(gaps));
    }
    Ok(spec)
}

/// Serializes a spec back to config text; links are written in words/cycle.
pub fn export_hardware(spec: &HardwareSpec) -> String {
    let cfg = HardwareConfig {
        name: spec.name.clone(),
        clock: spec.clock.clone(),
        residency: spec.residency,
        cores: spec.cores.clone(),
        simd: spec.simd.clone(),
        memories: spec.memories.clone(),
        links: spec
            .links
            .iter()
            .map(|l| LinkConfig {
                from: l.from,
                to: l.to,
                bw_words: Some(l.bw),
                bw_bits: None,
                setup: l.setup,
            })
            .collect(),
    };
    toml::to_string(&cfg).expect("hardware config serializes")
}

const BUILTIN: [(&str, &str); 3] = [
    ("single64x64", include_str!("../platforms/single64x64.toml")),
    ("quad64x64", include_str!("../platforms/quad64x64.toml")),
    ("gap8like", include_str!("../platforms/gap8like.toml")),
];

/// Names of the shipped platforms.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// Literal config text of a shipped platform.
pub fn builtin_text(name: &str) -> Result<&'static str> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::UnknownPlatform(name.to_string()))
}

pub fn builtin_platform(name: &str, word_bytes: usize) -> Result<HardwareSpec> {
    load_hardware(builtin_text(name)?, word_bytes)
}

/// All shipped platforms with one-byte words.
pub fn builtin_platforms() -> Vec<HardwareSpec> {
    BUILTIN
        .iter()
        .map(|(_, t)| load_hardware(t, 1).expect("builtin platform is valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_core_platform() {
        let hw = builtin_platform("single64x64", 1).unwrap();
        assert_eq!(hw.cores.len(), 1);
        assert_eq!(hw.simd.len(), 1);
        assert_eq!(hw.peak_macs(), 4096);
        assert_eq!(hw.supporting(LayerKind::Softmax), vec![1]);
    }

    #[test]
    fn gap8_platform() {
        let hw = builtin_platform("gap8like", 1).unwrap();
        assert_eq!(hw.cores.len(), 8);
        assert_eq!(hw.peak_macs(), 8);
        assert_eq!(hw.memories.len(), 4);
        let l2_l1 = hw
            .links
            .iter()
            .find(|l| l.from == Endpoint::Memory(2) && l.to == Endpoint::Memory(1))
            .unwrap();
        assert_eq!(l2_l1.bw, 6.375);
        // weights stream out of L2, capped by the DMA path
        let feed = hw.operand_feed(OperandRole::I2, 1024, DataSource::Weight);
        assert_eq!(feed.words_per_cycle, 6.375);
        let wide = builtin_platform("gap8like", 2).unwrap();
        assert_eq!(wide.links[0].bw, 51.0 / 16.0);
    }

    #[test]
    fn quad_platform() {
        let hw = builtin_platform("quad64x64", 1).unwrap();
        assert_eq!(hw.cores.len(), 4);
        assert_eq!(hw.peak_macs(), 4 * 4096);
        assert_eq!(hw.home_core(6), 2);
        assert_eq!(hw.transfer_cycles(6, 2, 1000).unwrap(), 0);
        assert_eq!(hw.transfer_cycles(0, 3, 128).unwrap(), 2);
    }

    #[test]
    fn unknown_platform() {
        assert!(matches!(builtin_platform("tpu", 1), Err(Error::UnknownPlatform(_))));
    }

    #[test]
    fn softmax_gap_reported() {
        let text = builtin_text("single64x64").unwrap().replace(
            "supports = [\"Softmax\", \"ElementwiseScale\"]",
            "supports = [\"ElementwiseScale\"]",
        );
        match load_hardware(&text, 1) {
            Err(Error::CapabilityGap(kinds)) => assert_eq!(kinds, vec![LayerKind::Softmax]),
            other => panic!("expected capability gap, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(matches!(load_hardware("name = ", 1), Err(Error::Parse(_))));
        let bad_link = format!(
            "{}\n[[links]]\nfrom = \"core:0\"\nto = \"core:9\"\nbw_words = 1.0\n",
            builtin_text("single64x64").unwrap()
        );
        assert!(load_hardware(&bad_link, 1).is_err());
        let both = format!(
            "{}\n[[links]]\nfrom = \"mem:1\"\nto = \"mem:2\"\nbw_words = 1.0\nbw_bits = 8.0\n",
            builtin_text("single64x64").unwrap()
        );
        assert!(load_hardware(&both, 1).is_err());
    }

    #[test]
    fn export_round_trip() {
        for hw in builtin_platforms() {
            let again = load_hardware(&export_hardware(&hw), 1).unwrap();
            assert_eq!(again, hw);
        }
    }

    #[test]
    fn home_levels() {
        let hw = builtin_platform("single64x64", 1).unwrap();
        let l1 = hw.home_level(OperandRole::I2, 1 << 20, DataSource::Feature).unwrap();
        assert_eq!(l1.name, "l1_w");
        let big = hw.home_level(OperandRole::I1, 1 << 40, DataSource::Feature).unwrap();
        assert_eq!(big.name, "dram");
        assert_eq!(hw.register_level(OperandRole::O).unwrap().name, "rf");
    }
}
