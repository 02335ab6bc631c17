use std::collections::BTreeMap;

use proptest::prelude::*;

use attnfuse::allocator::Allocation;
use attnfuse::analysis::alpha;
use attnfuse::depgraph::{brute_force_dependencies, fine_grained_graph, Split, SplitPlan};
use attnfuse::hwmodel::builtin_platform;
use attnfuse::scheduler::{schedule_graph, Mode, Priority, SchedulePolicy, Template};
use attnfuse::workload::{build_attention_head, build_mhsa};

fn template() -> impl Strategy<Value = Template> {
    prop::sample::select(Template::ALL.to_vec())
}

fn dim() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![2usize, 3, 4, 6, 8, 12, 16])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dependencies_match_brute_force(m in dim(), n in dim(), tile in 1usize..5) {
        let g = build_attention_head(m, n).unwrap();
        let ng = fine_grained_graph(&g, &SplitPlan::uniform(&g, Split::rows(tile))).unwrap();
        let mut slow = brute_force_dependencies(&g, &ng.nodes).unwrap();
        let mut fast = ng.edges.clone();
        slow.sort();
        fast.sort();
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn schedules_respect_edges_and_exclusivity(m in dim(), n in dim(), heads in 1usize..3, t in template(), quad in any::<bool>()) {
        let hw = builtin_platform(if quad { "quad64x64" } else { "single64x64" }, 1).unwrap();
        let g = build_mhsa(m, n, heads).unwrap();
        let alloc = Allocation::head_affinity(&g, &hw).unwrap();
        let policy = SchedulePolicy::template(t);
        let s = schedule_graph(&g, &alloc, &hw, &policy).unwrap();
        let ng = fine_grained_graph(&g, &policy.split_plan(&g)).unwrap();
        let by_node: BTreeMap<_, _> = s.nodes.iter().map(|n| (n.node, n)).collect();
        for e in &ng.edges {
            prop_assert!(by_node[&e.producer].end <= by_node[&e.consumer].start);
        }
        let mut per_resource: BTreeMap<_, Vec<(u64, u64)>> = BTreeMap::new();
        for n in s.nodes.iter().filter(|n| n.end > n.start) {
            per_resource.entry(n.resource).or_default().push((n.start, n.end));
        }
        for spans in per_resource.values_mut() {
            spans.sort();
            for w in spans.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
        }
    }

    #[test]
    fn trace_starts_and_ends_at_head_input(m in dim(), n in dim(), t in template()) {
        let hw = builtin_platform("single64x64", 1).unwrap();
        let g = build_attention_head(m, n).unwrap();
        let alloc = Allocation::on_core(&g, &hw, 0).unwrap();
        let s = schedule_graph(&g, &alloc, &hw, &SchedulePolicy::template(t)).unwrap();
        prop_assert_eq!(s.trace.first(), (m * n) as u64);
        prop_assert_eq!(s.trace.last(), (m * n) as u64);
        prop_assert!(s.peak_memory() >= (m * n) as u64);
    }

    #[test]
    fn alpha_depends_only_on_ratio(m in 1u64..64, n in 1u64..64, k in 1u64..16) {
        prop_assert!((alpha(m, n).0 - alpha(k * m, k * n).0).abs() < 1e-12);
        prop_assert!(alpha(m, n).0 <= 1.0);
    }

    #[test]
    fn memory_priority_never_raises_peak(m in dim(), n in dim(), fused in any::<bool>()) {
        let hw = builtin_platform("single64x64", 1).unwrap();
        let g = build_attention_head(m, n).unwrap();
        let alloc = Allocation::on_core(&g, &hw, 0).unwrap();
        let mode = if fused { Mode::LayerFusedAuto } else { Mode::LayerByLayer };
        let mem = schedule_graph(&g, &alloc, &hw, &SchedulePolicy::new(mode, Priority::Memory).unwrap()).unwrap();
        let lat = schedule_graph(&g, &alloc, &hw, &SchedulePolicy::new(mode, Priority::Latency).unwrap()).unwrap();
        prop_assert!(mem.peak_memory() <= lat.peak_memory());
    }

    #[test]
    fn energy_is_linear_in_heads(m in dim(), n in dim(), heads in 1usize..4, t in template()) {
        let hw = builtin_platform("single64x64", 1).unwrap();
        let policy = SchedulePolicy::template(t);
        let one = build_attention_head(m, n).unwrap();
        let many = build_mhsa(m, n, heads).unwrap();
        let e1 = schedule_graph(&one, &Allocation::on_core(&one, &hw, 0).unwrap(), &hw, &policy).unwrap().energy();
        let eh = schedule_graph(&many, &Allocation::on_core(&many, &hw, 0).unwrap(), &hw, &policy).unwrap().energy();
        prop_assert!((eh - heads as f64 * e1).abs() <= 1e-9 * eh.max(1.0));
    }

    #[test]
    fn any_allocation_keeps_traces_consistent(m in dim(), n in dim(), heads in 1usize..3, t in template(), genes in prop::collection::vec(0usize..8, 14)) {
        let hw = builtin_platform("quad64x64", 1).unwrap();
        let g = build_mhsa(m, n, heads).unwrap();
        let alloc = Allocation(
            g.layers
                .iter()
                .map(|l| {
                    let options = hw.supporting(l.kind);
                    (l.id, options[genes[l.id] % options.len()])
                })
                .collect(),
        );
        let s = schedule_graph(&g, &alloc, &hw, &SchedulePolicy::template(t)).unwrap();
        let mn = (m * n) as u64;
        let bound = mn + heads as u64 * (5 * mn + (m * m) as u64);
        prop_assert_eq!(s.trace.first(), mn);
        prop_assert_eq!(s.trace.last(), heads as u64 * mn);
        prop_assert!(s.peak_memory() <= bound);
        for c in s.core_traces.values() {
            prop_assert!(c.peak <= bound);
        }
    }
}
