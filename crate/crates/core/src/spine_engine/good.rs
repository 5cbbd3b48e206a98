use serde::{Deserialize, Serialize};

use super::killed::{barrier_dk, PathConstraint};
use super::{run_spine_path, SpineRealization};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::PointProcessModel;
use crate::rng::SeedRecord;
use crate::stats::{EstimateWithCI, Moments};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodGeneration {
    pub k: usize,
    /// `sum_{v in Omega(w_k)} exp(-(V(v) - d_k)) (1 + (V(v) - d_k)_+)`
    pub sibling_weight: f64,
    /// `B exp(-e_k)`
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodVertexReport {
    pub n: usize,
    pub z: f64,
    pub l: f64,
    pub b: f64,
    /// Whether the spine leaf satisfies the `(z, L)` path constraint.
    pub constrained: bool,
    pub generations: Vec<GoodGeneration>,
    pub first_violation: Option<usize>,
    /// `constrained` and the sibling condition at every generation.
    pub good: bool,
}

/// `e_k = k^(1/12)` for `k <= n/2`, `(n - k)^(1/12)` above.
fn e_k(n: usize, k: usize) -> f64 {
    if 2 * k <= n {
        (k as f64).powf(1.0 / 12.0)
    } else {
        ((n - k) as f64).powf(1.0 / 12.0)
    }
}

/// Checks the sibling-weight condition of a good vertex along the spine,
/// with `d_k = d_k(n, z + L, 1/2)`.
pub fn good_vertex_diagnostic(real: &SpineRealization, z: f64, l: f64, b: f64) -> GoodVertexReport {
    let n = real.depth();
    let generations: Vec<GoodGeneration> = real
        .sibling_records
        .iter()
        .map(|rec| {
            let k = rec.generation;
            let d = barrier_dk(n, z + l, 0.5, k);
            let sibling_weight = rec
                .positions
                .iter()
                .map(|&x| (-(x - d)).exp() * (1.0 + (x - d).max(0.0)))
                .sum();
            let bound = b * (-e_k(n, k)).exp();
            GoodGeneration {
                k,
                sibling_weight,
                bound,
                holds: sibling_weight <= bound,
            }
        })
        .collect();
    let first_violation = generations.iter().find(|g| !g.holds).map(|g| g.k);
    let constrained = n > 0 && PathConstraint::zzl(n, z, l).admits(&real.spine_positions);
    GoodVertexReport {
        n,
        z,
        l,
        b,
        constrained,
        good: constrained && first_violation.is_none(),
        generations,
        first_violation,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodVertexFrequency {
    pub n: usize,
    pub z: f64,
    pub l: f64,
    pub b_grid: Vec<f64>,
    pub replications: u64,
    /// Replications with the spine leaf in the constrained set.
    pub conditioned: u64,
    /// `P(spine good | spine constrained)` per `B`.
    pub good_fraction: Vec<EstimateWithCI>,
}

/// Frequency, over spine draws whose leaf satisfies the `(z, L)` constraint,
/// that the spine is a good vertex, for each `B` of the grid.
#[allow(clippy::too_many_arguments)]
pub fn good_vertex_frequency(
    model: &PointProcessModel,
    n: usize,
    z: f64,
    l: f64,
    b_grid: &[f64],
    replications: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<GoodVertexFrequency> {
    if n == 0 || b_grid.is_empty() || b_grid.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::invalid(
            "good-vertex frequency needs n >= 1 and B >= 0",
        ));
    }
    let seed = seed.derive("good-vertex").derive_index(n as u64);
    let r = exec.run(
        replications,
        4096,
        &seed,
        || vec![Moments::new(); b_grid.len()],
        |acc, _, rng| {
            let real = run_spine_path(model, n, rng)?;
            if !PathConstraint::zzl(n, z, l).admits(&real.spine_positions) {
                return Ok(());
            }
            for (m, &b) in acc.iter_mut().zip(b_grid) {
                m.push(f64::from(u8::from(
                    good_vertex_diagnostic(&real, z, l, b).good,
                )));
            }
            Ok(())
        },
    )?;
    Ok(GoodVertexFrequency {
        n,
        z,
        l,
        b_grid: b_grid.to_vec(),
        replications: r.completed,
        conditioned: r.acc[0].count(),
        good_fraction: r
            .acc
            .iter()
            .map(|m| m.estimate(seed, "spine-good"))
            .collect(),
    })
}
