//! The pilot record regenerated by `examples/pilot.rs`.

use serde_json::Value;

fn pilot() -> Value {
    serde_json::from_str(include_str!("golden/pilot.json")).unwrap()
}

#[test]
fn pilot_record_matches_the_current_layout() {
    let p = pilot();
    assert_eq!(
        p["schema_version"].as_u64(),
        Some(brwlab::experiments::SCHEMA_VERSION as u64)
    );
    assert_eq!(
        p["model"].as_str(),
        Some(brwlab::PointProcessModel::binary_gaussian().model_hash())
    );
    let r = &p["results"];
    for key in [
        "killed_tail_n16",
        "limit_law",
        "lower_scenario_n100",
        "spine_vs_direct_n14_z3.5",
    ] {
        assert!(r[key].is_object(), "{key}");
    }
}

#[test]
fn pilot_killed_tail_is_bounded_by_the_full_tail_scale() {
    let r = &pilot()["results"]["killed_tail_n16"];
    let scaled: Vec<f64> = r["scaled"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(scaled.len(), r["z"].as_array().unwrap().len());
    // e^z P(killed min <= -z) never exceeds 1
    assert!(scaled.iter().all(|&s| (0.0..=1.0).contains(&s)));
}
