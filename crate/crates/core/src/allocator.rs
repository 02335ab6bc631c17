//! Layer-to-resource allocation and the genetic search over it.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depgraph::NodeGraph;
use crate::error::{Error, Result};
use crate::hwmodel::{HardwareSpec, ResourceId, ResourceKind};
use crate::scheduler::{schedule_in, ScheduleContext, SchedulePolicy};
use crate::workload::{LayerGraph, LayerId};

/// Layer id to resource id. Vector kinds may sit on SIMD units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation(pub BTreeMap<LayerId, ResourceId>);

impl Allocation {
    pub fn get(&self, layer: LayerId) -> Option<ResourceId> {
        self.0.get(&layer).copied()
    }

    /// Everything on one core; kinds the core lacks go to its SIMD unit, then
    /// to the first resource that supports them.
    pub fn on_core(g: &LayerGraph, hw: &HardwareSpec, core: ResourceId) -> Result<Self> {
        let mut map = BTreeMap::new();
        for layer in &g.layers {
            map.insert(layer.id, place_near(hw, core, layer.kind)?);
        }
        Ok(Self(map))
    }

    /// Heads round-robin over cores, vector work on the attached SIMD unit.
    pub fn head_affinity(g: &LayerGraph, hw: &HardwareSpec) -> Result<Self> {
        let cores: Vec<ResourceId> = hw.cores.iter().map(|c| c.id).collect();
        if cores.is_empty() {
            return Err(Error::InvalidArgument("platform has no cores".into()));
        }
        let mut map = BTreeMap::new();
        for layer in &g.layers {
            let core = cores[layer.head().unwrap_or(0) % cores.len()];
            map.insert(layer.id, place_near(hw, core, layer.kind)?);
        }
        Ok(Self(map))
    }

    pub fn validate(&self, g: &LayerGraph, hw: &HardwareSpec) -> Result<()> {
        for layer in &g.layers {
            let r = self
                .get(layer.id)
                .ok_or_else(|| Error::InvalidArgument(format!("layer {} is not allocated", layer.name)))?;
            if !hw.supports(r, layer.kind) {
                return Err(Error::Unsupported(layer.kind, r));
            }
        }
        Ok(())
    }
}

fn place_near(hw: &HardwareSpec, core: ResourceId, kind: crate::workload::LayerKind) -> Result<ResourceId> {
    if hw.supports(core, kind) {
        return Ok(core);
    }
    if let Some(s) = hw.simd.iter().find(|s| s.attached_core == core && s.supports.contains(&kind)) {
        return Ok(s.id);
    }
    let any = hw.supporting(kind);
    any.iter()
        .find(|&&r| hw.resource_kind(r) == Some(ResourceKind::Core))
        .or(any.first())
        .copied()
        .ok_or(Error::CapabilityGap(vec![kind]))
}

/// What the genetic search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Latency,
    Energy,
    PeakMemory,
    /// `λ` on peak memory, `1 - λ` on latency, each relative to the first
    /// individual evaluated.
    Weighted(f64),
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(Objective::Latency),
            "energy" => Ok(Objective::Energy),
            "peak_memory" | "memory" => Ok(Objective::PeakMemory),
            _ => s
                .strip_prefix("weighted:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|l| (0.0..=1.0).contains(l))
                .map(Objective::Weighted)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown objective '{s}' (latency, energy, peak_memory or weighted:<0..1>)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 32,
            generations: 50,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            seed: 0,
            objective: Objective::Latency,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidArgument("population must be at least 2".into()));
        }
        for (name, r) in [("mutation", self.mutation_rate), ("crossover", self.crossover_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        if let Objective::Weighted(l) = self.objective {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidArgument(format!("weight {l} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fitness evaluations the search performs.
    pub fn budget(&self) -> usize {
        self.population * self.generations.max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub makespan: u64,
    pub energy: f64,
    pub peak_memory: u64,
}

/// Runs the scheduler on an allocation and reports its headline numbers.
pub fn evaluate_allocation(
    g: &LayerGraph,
    ng: &NodeGraph,
    alloc: &Allocation,
    hw: &HardwareSpec,
    policy: &SchedulePolicy,
) -> Result<Metrics> {
    evaluate_in(&ScheduleContext::new(g, ng)?, g, ng, alloc, hw, policy)
}

fn evaluate_in(
    ctx: &ScheduleContext,
    g: &LayerGraph,
    ng: &NodeGraph,
    alloc: &Allocation,
    hw: &HardwareSpec,
    policy: &SchedulePolicy,
) -> Result<Metrics> {
    let s = schedule_in(ctx, g, ng, alloc, hw, policy)?;
    Ok(Metrics { makespan: s.makespan(), energy: s.energy(), peak_memory: s.peak_memory() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub allocation: Allocation,
    pub metrics: Metrics,
    pub fitness: f64,
    pub log: Vec<GenerationLog>,
    /// Fitness evaluations performed (cache hits included).
    pub evaluations: usize,
}

impl SearchResult {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("generation,best_fitness,mean_fitness,evaluations\n");
        for l in &self.log {
            s.push_str(&format!("{},{},{},{}\n", l.generation, l.best_fitness, l.mean_fitness, l.evaluations));
        }
        s
    }
}

type Gene = Vec<ResourceId>;

struct Search<'a> {
    g: &'a LayerGraph,
    ng: &'a NodeGraph,
    hw: &'a HardwareSpec,
    policy: &'a SchedulePolicy,
    ctx: ScheduleContext,
    objective: Objective,
    options: Vec<Vec<ResourceId>>,
    cache: HashMap<Gene, Option<Metrics>>,
    reference: Option<Metrics>,
    evaluations: usize,
}

impl<'a> Search<'a> {
    fn new(g: &'a LayerGraph, ng: &'a NodeGraph, hw: &'a HardwareSpec, policy: &'a SchedulePolicy, objective: Objective) -> Result<Self> {
        let mut options = Vec::with_capacity(g.layers.len());
        for layer in &g.layers {
            let o = hw.supporting(layer.kind);
            if o.is_empty() {
                return Err(Error::CapabilityGap(vec![layer.kind]));
            }
            options.push(o);
        }
        Ok(Self { g, ng, hw, policy, ctx: ScheduleContext::new(g, ng)?, objective, options, cache: HashMap::new(), reference: None, evaluations: 0 })
    }

    fn to_allocation(&self, gene: &Gene) -> Allocation {
        Allocation(self.g.layers.iter().map(|l| l.id).zip(gene.iter().copied()).collect())
    }

    fn from_allocation(&self, a: &Allocation) -> Gene {
        let gene: Gene = self.g.layers.iter().map(|l| a.get(l.id).unwrap_or(0)).collect();
        self.repair(gene)
    }

    /// Unsupported genes move to the next supporting id, wrapping around.
    fn repair(&self, mut gene: Gene) -> Gene {
        for (r, opts) in gene.iter_mut().zip(&self.options) {
            if !opts.contains(r) {
                *r = opts.iter().copied().find(|&o| o > *r).unwrap_or(opts[0]);
            }
        }
        gene
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Gene {
        self.options.iter().map(|o| o[rng.gen_range(0..o.len())]).collect()
    }

    fn fitness(&self, m: Option<Metrics>) -> f64 {
        let Some(m) = m else { return f64::INFINITY };
        match self.objective {
            Objective::Latency => m.makespan as f64,
            Objective::Energy => m.energy,
            Objective::PeakMemory => m.peak_memory as f64,
            Objective::Weighted(l) => {
                let r = self.reference.unwrap_or(m);
                l * m.peak_memory as f64 / (r.peak_memory.max(1) as f64)
                    + (1.0 - l) * m.makespan as f64 / (r.makespan.max(1) as f64)
            }
        }
    }

    /// Fitness of every gene; new ones are scheduled in parallel.
    fn evaluate(&mut self, pop: &[Gene]) -> Vec<f64> {
        let mut fresh: Vec<&Gene> = pop.iter().filter(|g| !self.cache.contains_key(*g)).collect();
        fresh.sort();
        fresh.dedup();
        let results: Vec<Option<Metrics>> = fresh
            .par_iter()
            .map(|gene| evaluate_in(&self.ctx, self.g, self.ng, &self.to_allocation(gene), self.hw, self.policy).ok())
            .collect();
        let fresh: Vec<Gene> = fresh.into_iter().cloned().collect();
        for (gene, m) in fresh.into_iter().zip(results) {
            self.cache.insert(gene, m);
        }
        if self.reference.is_none() {
            self.reference = pop.first().and_then(|g| self.cache[g]);
        }
        self.evaluations += pop.len();
        pop.iter().map(|g| self.fitness(self.cache[g])).collect()
    }
}

fn tournament<'p>(pop: &'p [Gene], fit: &[f64], rng: &mut ChaCha8Rng) -> &'p Gene {
    let a = rng.gen_range(0..pop.len());
    let b = rng.gen_range(0..pop.len());
    let win = match fit[a].total_cmp(&fit[b]) {
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Equal => a.min(b),
    };
    &pop[win]
}

fn best_of(fit: &[f64]) -> usize {
    (0..fit.len())
        .min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)))
        .unwrap_or(0)
}

/// Genetic search over per-layer resource genes. The initial population holds
/// the head-affinity and single-core allocations; the rest is random.
pub fn genetic_search(
    g: &LayerGraph,
    ng: &NodeGraph,
    hw: &HardwareSpec,
    policy: &SchedulePolicy,
    cfg: &GaConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut search = Search::new(g, ng, hw, policy, cfg.objective)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Gene> = Vec::with_capacity(cfg.population);
    pop.push(search.from_allocation(&Allocation::head_affinity(g, hw)?));
    if let Some(c) = hw.cores.first() {
        pop.push(search.from_allocation(&Allocation::on_core(g, hw, c.id)?));
    }
    pop.truncate(cfg.population);
    while pop.len() < cfg.population {
        pop.push(search.random(&mut rng));
    }

    let mut log = Vec::new();
    let mut fit = search.evaluate(&pop);
    let mut best_i = best_of(&fit);
    let mut best = (pop[best_i].clone(), fit[best_i]);
    let mut record = |generation: usize, fit: &[f64], best: f64, evaluations: usize| {
        let finite: Vec<f64> = fit.iter().copied().filter(|f| f.is_finite()).collect();
        let mean = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        log.push(GenerationLog { generation, best_fitness: best, mean_fitness: mean, evaluations });
    };
    record(0, &fit, best.1, search.evaluations);

    for generation in 1..cfg.generations {
        let mut next: Vec<Gene> = Vec::with_capacity(cfg.population);
        next.push(best.0.clone());
        while next.len() < cfg.population {
            let a = tournament(&pop, &fit, &mut rng).clone();
            let b = tournament(&pop, &fit, &mut rng).clone();
            let (mut c1, mut c2) = (a, b);
            if c1.len() > 1 && rng.gen::<f64>() < cfg.crossover_rate {
                let cut = rng.gen_range(1..c1.len());
                for i in cut..c1.len() {
                    std::mem::swap(&mut c1[i], &mut c2[i]);
                }
            }
            for child in [&mut c1, &mut c2] {
                for (gene, opts) in child.iter_mut().zip(&search.options) {
                    if rng.gen::<f64>() < cfg.mutation_rate {
                        *gene = opts[rng.gen_range(0..opts.len())];
                    }
                }
            }
            next.push(search.repair(c1));
            if next.len() < cfg.population {
                next.push(search.repair(c2));
            }
        }
        pop = next;
        fit = search.evaluate(&pop);
        best_i = best_of(&fit);
        if fit[best_i] < best.1 {
            best = (pop[best_i].clone(), fit[best_i]);
        }
        record(generation, &fit, best.1, search.evaluations);
    }

    finish(&search, best, log)
}

fn finish(search: &Search<'_>, best: (Gene, f64), log: Vec<GenerationLog>) -> Result<SearchResult> {
    let allocation = search.to_allocation(&best.0);
    let metrics = match search.cache.get(&best.0).copied().flatten() {
        Some(m) => m,
        // surfaces the scheduler error for an all-infeasible search
        None => evaluate_in(&search.ctx, search.g, search.ng, &allocation, search.hw, search.policy)?,
    };
    Ok(SearchResult { allocation, metrics, fitness: best.1, log, evaluations: search.evaluations })
}

/// Uniform random allocations with the same evaluation budget; a baseline
/// for the genetic search.
pub fn random_search(
    g: &LayerGraph,
    ng: &NodeGraph,
    hw: &HardwareSpec,
    policy: &SchedulePolicy,
    cfg: &GaConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut search = Search::new(g, ng, hw, policy, cfg.objective)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop: Vec<Gene> = (0..cfg.budget()).map(|_| search.random(&mut rng)).collect();
    let fit = search.evaluate(&pop);
    let i = best_of(&fit);
    let log = vec![GenerationLog { generation: 0, best_fitness: fit[i], mean_fitness: f64::NAN, evaluations: pop.len() }];
    finish(&search, (pop[i].clone(), fit[i]), log)
}
