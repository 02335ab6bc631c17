use std::collections::BTreeSet;

use attnfuse::allocator::GaConfig;
use attnfuse::analysis::{alpha_sweep, ClosedForms};
use attnfuse::explore::ExploreConfig;
use attnfuse::export::{alpha_csv, alpha_svg, gantt_ascii, memtrace_csv, schedule_json};
use attnfuse::hwmodel::builtin_platform;
use attnfuse::pipeline::{run_explore, run_verify, Artifact};
use attnfuse::scheduler::Template;
use attnfuse::workload::{build_attention_head, build_mhsa};

fn all() -> BTreeSet<Artifact> {
    Artifact::ALL.into_iter().collect()
}

#[test]
fn single_core_run_writes_every_artifact() {
    let hw = builtin_platform("single64x64", 1).unwrap();
    let g = build_attention_head(64, 256).unwrap();
    let out = run_explore(&g, &hw, &ExploreConfig::default(), &all()).unwrap();
    for f in ["schedule.json", "memtrace.csv", "memtrace_cores.csv", "gantt.svg", "gantt.txt", "report.csv", "alpha.svg", "alpha.csv"] {
        assert!(out.files.contains_key(f), "{f}");
    }
    let doc: serde_json::Value = serde_json::from_str(&out.files["schedule.json"]).unwrap();
    assert_eq!(doc["makespan"], out.exploration.best_candidate().metrics.makespan);
    assert_eq!(doc["nodes"].as_array().unwrap().len(), out.exploration.schedule.nodes.len());
    let report = &out.files["report.csv"];
    assert_eq!(report.lines().count(), 1 + Template::ALL.len());
    assert!(report.contains("fuse_q_qkt,3584,"));
    assert!(out.summary.contains("<- best"));
}

#[test]
fn memtrace_starts_with_the_input() {
    let hw = builtin_platform("single64x64", 1).unwrap();
    let g = build_attention_head(32, 64).unwrap();
    let out = run_explore(&g, &hw, &ExploreConfig::default(), &BTreeSet::new()).unwrap();
    let csv = memtrace_csv(&out.exploration.schedule.trace);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("time,active_words"));
    assert_eq!(lines.next(), Some("0,2048"));
    assert!(csv.trim_end().ends_with(",2048"));
}

#[test]
fn gantt_and_json_render() {
    let hw = builtin_platform("quad64x64", 1).unwrap();
    let g = build_mhsa(32, 64, 2).unwrap();
    let cfg = ExploreConfig { ga: GaConfig { population: 6, generations: 2, ..GaConfig::default() }, ..ExploreConfig::default() };
    let out = run_explore(&g, &hw, &cfg, &BTreeSet::new()).unwrap();
    let s = &out.exploration.schedule;
    let text = gantt_ascii(&g, &hw, s, 40);
    assert!(text.lines().count() >= hw.cores.len());
    assert!(text.contains('q') && text.contains('o'));
    assert!(schedule_json(&g, &hw, s, None).contains("\"template\": null"));
    assert!(out.files.keys().any(|k| k.starts_with("ga_")));
}

#[test]
fn alpha_plot() {
    let pts = alpha_sweep(0.25, 4.0, 5).unwrap();
    let csv = alpha_csv(&pts);
    assert_eq!(csv.lines().count(), 6);
    let svg = alpha_svg(&pts);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn artifact_names_round_trip() {
    for a in Artifact::ALL {
        assert_eq!(a.name().parse::<Artifact>().unwrap(), a);
    }
    assert!("png".parse::<Artifact>().is_err());
}

#[test]
fn verify_text_names_failures() {
    let hw = builtin_platform("single64x64", 1).unwrap();
    let ok = run_verify(&[64], &hw, &ClosedForms::default(), None).unwrap();
    assert!(ok.passed());
    let bad = ClosedForms { lbl: |m, n| 3 * m * n - 1, ..ClosedForms::default() };
    let r = run_verify(&[64], &hw, &bad, None).unwrap();
    assert!(!r.passed());
    assert!(r.text.contains("FAILED: peak of lbl_memory_optimal at M=64, N=64"));
}
