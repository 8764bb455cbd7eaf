//! Shipped scenarios, seed robustness, trace round trips and validation.

use std::path::PathBuf;

use touchport_core::encounter::EncounterStage;
use touchport_core::sim::{self, check_expectations, load_scenario, parse_scenario, RunOverrides, Scenario, Trace};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios")
}

fn fixture(name: &str) -> Scenario {
    load_scenario(dir().join(format!("{name}.json"))).unwrap()
}

#[test]
fn every_shipped_scenario_meets_its_expectations() {
    let mut seen = 0;
    for entry in std::fs::read_dir(dir()).unwrap() {
        let path = entry.unwrap().path();
        let s = load_scenario(&path).unwrap();
        let out = sim::run(&s).unwrap();
        let failures = check_expectations(s.expectations.as_ref().expect("shipped scenarios assert"), &out);
        assert!(failures.is_empty(), "{}: {failures:?}", path.display());
        seen += 1;
    }
    assert!(seen >= 3);
}

#[test]
fn canonical_encounter_holds_across_seeds() {
    let s = fixture("canonical-encounter");
    for seed in 0..24 {
        let out = sim::run_with(&s, &RunOverrides { seed: Some(seed), ..RunOverrides::default() }).unwrap();
        let failures = check_expectations(s.expectations.as_ref().unwrap(), &out);
        assert!(failures.is_empty(), "seed {seed}: {failures:?}");
    }
}

#[test]
fn abort_at_preview_needs_a_new_handshake() {
    let out = sim::run(&fixture("abort-at-preview")).unwrap();
    assert_eq!(out.final_stage(&"A".into()), Some(EncounterStage::Aware));
    assert!(out.metrics.incomplete);
    assert!(out.metrics.require_complete().is_err());
}

#[test]
fn traces_round_trip_and_metrics_recompute() {
    for name in ["canonical-encounter", "move-under-loss", "lend-walkaway"] {
        let out = sim::run(&fixture(name)).unwrap();
        let text = out.trace.to_jsonl();
        let back = Trace::parse_jsonl(&text).unwrap();
        assert_eq!(back.to_jsonl(), text, "{name}");
        let m = sim::metrics(&back);
        assert_eq!(m.user_gesture_count, out.metrics.user_gesture_count, "{name}");
        assert_eq!(m.stages_visited, out.metrics.stages_visited, "{name}");
        assert_eq!(m.message_count, out.metrics.message_count, "{name}");
        let (a, b) = (m.time_to_sharing.unwrap(), out.metrics.time_to_sharing.unwrap());
        assert!((a - b).abs() < 1e-6, "{name}: {a} vs {b}");
    }
}

#[test]
fn seeds_change_the_trace() {
    let s = fixture("canonical-encounter");
    let a = sim::run_with(&s, &RunOverrides { seed: Some(1), ..RunOverrides::default() }).unwrap();
    let b = sim::run_with(&s, &RunOverrides { seed: Some(2), ..RunOverrides::default() }).unwrap();
    assert_ne!(a.trace.to_jsonl(), b.trace.to_jsonl());
}

#[test]
fn failed_expectations_are_reported() {
    let mut s = fixture("canonical-encounter");
    let exp = s.expectations.as_mut().unwrap();
    exp.user_gesture_count = Some(3);
    exp.time_to_sharing = Some([0.0, 1.0]);
    let out = sim::run(&s).unwrap();
    let failures = check_expectations(s.expectations.as_ref().unwrap(), &out);
    assert_eq!(failures.len(), 2, "{failures:?}");
}

fn rejects(text: &str, field: &str) {
    let err = parse_scenario(text).expect_err("should be rejected");
    assert!(
        err.errors.iter().any(|e| e.field.as_deref().is_some_and(|f| f.starts_with(field))
            || e.message.contains(field)),
        "expected an error at {field}: {err}"
    );
}

const DEVICES: &str = r#""devices": [
    {"id": "A", "initialPose": {"position": [-2.0, 1.6, 0.0]}},
    {"id": "B", "initialPose": {"position": [2.0, 1.6, 0.0]}}]"#;

#[test]
fn invalid_scenarios_are_rejected() {
    rejects("{", "line");
    rejects(&format!(r#"{{"seed": 1, {DEVICES}, "gestureScript": [], "bogus": 1}}"#), "bogus");
    rejects(
        r#"{"seed": 1, "devices": [{"id": "A", "initialPose": {"position": [0, 0, 0]}}], "gestureScript": []}"#,
        "devices",
    );
    rejects(
        &format!(r#"{{"seed": 1, {DEVICES}, "gestureScript": [{{"t": -1, "kind": "approach", "params": {{"devices": ["A", "B"], "separation": 1.0, "duration": 1.0}}}}]}}"#),
        "gestureScript[0].t",
    );
    rejects(
        &format!(r#"{{"seed": 1, {DEVICES}, "gestureScript": [{{"t": 1, "kind": "pull", "params": {{"puller": "Z", "distance": 0.2, "duration": 1.0}}}}]}}"#),
        "gestureScript[0].params",
    );
    rejects(
        &format!(r#"{{"seed": 1, {DEVICES}, "gestureScript": [{{"t": 2, "kind": "release", "params": {{"a": "A", "b": "B"}}}}, {{"t": 1, "kind": "release", "params": {{"a": "A", "b": "B"}}}}]}}"#),
        "gestureScript[1].t",
    );
    rejects(
        &format!(r#"{{"seed": 1, {DEVICES}, "objects": [{{"name": "x", "owner": "Q", "position": [0, 0, 0]}}], "gestureScript": []}}"#),
        "objects[0].owner",
    );
}

#[test]
fn minimal_scenario_runs() {
    let s = parse_scenario(&format!(r#"{{"seed": 5, {DEVICES}, "gestureScript": []}}"#)).unwrap();
    let out = sim::run(&s).unwrap();
    assert!(out.quiesced);
    assert!(out.metrics.incomplete);
}
