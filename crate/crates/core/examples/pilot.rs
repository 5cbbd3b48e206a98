//! Desk-scale pilot run whose output is kept in `tests/golden/pilot.json`.
//!
//! ```text
//! cargo run --release --example pilot -- crates/core/tests/golden/pilot.json
//! ```

use std::collections::BTreeMap;

use brwlab::brw_engine::{minimum_tail_direct, Caps, PrunePolicy};
use brwlab::experiments::{exp_killed_tail, exp_limit_law_multi, json_string, SCHEMA_VERSION};
use brwlab::rw_kit::{ballot_check, derive_walk, BallotScenario};
use brwlab::spine_engine::{killed_min_estimator, PathConstraint};
use brwlab::{Executor, PointProcessModel, SeedRecord};
use serde_json::json;

const PILOT_SEED: u64 = 2024;

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "pilot.json".to_string());
    let m = PointProcessModel::binary_gaussian();
    let walk = derive_walk(&m).unwrap();
    let exec = Executor::from_env().unwrap();
    let seed = SeedRecord::new(PILOT_SEED);
    let (exact, caps) = (PrunePolicy::none(), Caps::default());
    let mut out = BTreeMap::new();

    let grid = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let k = exp_killed_tail(&m, 16, &grid, 1_000_000, &exact, &caps, &seed, &exec).unwrap();
    out.insert(
        "killed_tail_n16",
        json!({
            "z": grid,
            "scaled": k.spine.rows.iter().map(|r| r.scaled.value).collect::<Vec<_>>(),
            "scaled_stderr": k.spine.rows.iter().map(|r| r.scaled.stderr).collect::<Vec<_>>(),
            "plateau_ratio_upper_half": k.plateau_ratio,
            "range_ratio": k.range_ratio,
            "c1_upper_half": k.c1_hat.value,
        }),
    );

    // variance reduction of the spine estimator over whole trees
    let (n, z) = (14, 3.5);
    let spine = killed_min_estimator(
        &m,
        &PathConstraint::none(n, z),
        200_000,
        &exact,
        &caps,
        &seed,
        &exec,
    )
    .unwrap();
    let direct = minimum_tail_direct(&m, n, &[z], 20_000, &exact, &caps, &seed, &exec).unwrap();
    let d = direct.rows[0].p_kill_window.clone().unwrap();
    // relative standard error per replication
    let per_rep = |e: &brwlab::EstimateWithCI| e.relative_stderr() * (e.count as f64).sqrt();
    out.insert(
        "spine_vs_direct_n14_z3.5",
        json!({
            "spine": [spine.estimate.value, spine.estimate.stderr, spine.estimate.count],
            "direct": [d.value, d.stderr, d.count],
            "per_replication_relative_se_ratio": per_rep(&d) / per_rep(&spine.estimate),
        }),
    );

    let xs: Vec<f64> = (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect();
    let law = exp_limit_law_multi(&m, &[12, 16], &xs, 2000, &exact, &caps, &seed, &exec).unwrap();
    out.insert(
        "limit_law",
        json!({
            "n": [12, 16],
            "sup_distance": law.iter().map(|r| r.sup_distance).collect::<Vec<_>>(),
            "c_hat": law.iter().map(|r| r.c_hat).collect::<Vec<_>>(),
        }),
    );

    let lower = ballot_check(
        &walk,
        BallotScenario::Lower { a: 0.0 },
        100,
        1_000_000,
        &seed,
        &exec,
    )
    .unwrap();
    out.insert(
        "lower_scenario_n100",
        json!({ "scaled": lower.scaled.value, "stderr": lower.scaled.stderr }),
    );

    let doc = json!({ "schema_version": SCHEMA_VERSION, "seed": PILOT_SEED, "model": m.model_hash(), "results": out });
    std::fs::write(&path, json_string(&doc).unwrap()).unwrap();
    println!("{path}");
}
