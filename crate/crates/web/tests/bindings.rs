use attnfuse_web::{alpha_curve, footprints, platforms, simulate, templates};
use serde_json::Value;

fn json(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn curve_has_requested_points() {
    let v = json(alpha_curve(1.0 / 64.0, 64.0, 25));
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 25);
    assert!((pts[12][1].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(v["svg"].as_str().unwrap().starts_with("<svg"));
    assert!(alpha_curve(-1.0, 2.0, 5).is_err());
    assert!(alpha_curve(0.5, 2.0, 100_000).is_err());
}

#[test]
fn footprint_json() {
    let v = json(footprints(1024, 128));
    assert_eq!(v["a_lbl"], 2 * 1024 * 128 + 1024 * 1024);
    assert_eq!(v["alpha"], 0.3);
    assert_eq!(v["best_template"], "fuse_qkt_qktv");
    assert!(footprints(0, 3).is_err());
}

#[test]
fn simulation_matches_closed_form() {
    let v = json(simulate(64, 256, 1, "single64x64", "fuse_q_qkt"));
    assert_eq!(v["peak_memory"], 2 * 64 * 256 + 64 * 64);
    assert_eq!(v["makespan"], 3584);
    let trace = v["trace"].as_array().unwrap();
    assert_eq!(trace.first().unwrap()[1], 64 * 256);
    assert_eq!(trace.last().unwrap()[1], 64 * 256);
    assert!(v["gantt_text"].as_str().unwrap().contains("core 0"));
}

#[test]
fn simulation_rejects_bad_input() {
    assert!(simulate(64, 64, 1, "tpu", "fuse_q_qkt").unwrap_err().contains("tpu"));
    assert!(simulate(64, 64, 1, "single64x64", "nope").unwrap_err().contains("nope"));
    assert!(simulate(4096, 64, 1, "single64x64", "fuse_q_qkt").is_err());
}

#[test]
fn choices() {
    assert!(platforms().split(',').any(|p| p == "quad64x64"));
    assert_eq!(templates().split(',').count(), 5);
}
