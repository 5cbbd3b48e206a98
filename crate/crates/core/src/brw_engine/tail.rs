use serde::{Deserialize, Serialize};

use super::{run_tree, Caps, PrunePolicy};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::PointProcessModel;
use crate::rng::SeedRecord;
use crate::stats::{EstimateWithCI, Moments};
use crate::util::a_n;

/// Direct estimates need `exp(-z) * replications` at least this large.
pub const FEASIBILITY_HITS: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub z: f64,
    /// `(3/2) ln n - z`
    pub level: f64,
    pub feasible: bool,
    /// `P(M_n < level)`
    pub p_full: Option<EstimateWithCI>,
    /// `P(M_n^kill < level)`
    pub p_kill: Option<EstimateWithCI>,
    /// `P(M_n^kill in [level - 1, level))`
    pub p_kill_window: Option<EstimateWithCI>,
    /// `exp(z) P(M_n^kill < level)`
    pub scaled_kill: Option<EstimateWithCI>,
    /// `exp(z) / z * P(M_n < level)`, for `z > 0`.
    pub scaled_full: Option<EstimateWithCI>,
    /// Expected probability bias from pruning: `exp(level) * E[pruned mass]`.
    pub prune_bias_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub n: usize,
    pub replications: u64,
    pub completed: u64,
    pub partial: bool,
    pub model_hash: String,
    pub seed: SeedRecord,
    pub rows: Vec<TailRow>,
}

/// Direct Monte Carlo over whole trees of the tail of the minimum and the
/// killed minimum at `level = (3/2) ln n - z`.
#[allow(clippy::too_many_arguments)]
pub fn minimum_tail_direct(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    replications: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<TailTable> {
    if z_grid.is_empty() {
        return Err(Error::invalid("empty z grid"));
    }
    let seed = seed.derive("tail-direct").derive_index(n as u64);
    let levels: Vec<f64> = z_grid.iter().map(|&z| a_n(n, z)).collect();
    let feasible: Vec<bool> = z_grid
        .iter()
        .map(|&z| (-z).exp() * replications as f64 >= FEASIBILITY_HITS)
        .collect();
    let k = z_grid.len();
    let any = feasible.iter().any(|&f| f);
    let campaign = exec.run(
        if any { replications } else { 0 },
        256,
        &seed,
        || vec![Moments::new(); 3 * k + 1],
        |acc, _, rng| {
            let s = run_tree(model, n, 0.0, policy, None, caps, rng)?;
            for (i, &a) in levels.iter().enumerate() {
                acc[i].push(f64::from(u8::from(s.m_n < a)));
                acc[k + i].push(f64::from(u8::from(s.m_n_kill < a)));
                acc[2 * k + i].push(f64::from(u8::from(a - 1.0 <= s.m_n_kill && s.m_n_kill < a)));
            }
            acc[3 * k].push(s.pruned_mass_bound);
            Ok(())
        },
    )?;
    let m = campaign.acc;
    let pruned = if m[3 * k].count() > 0 {
        m[3 * k].mean()
    } else {
        0.0
    };
    let rows = z_grid
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let level = levels[i];
            let est = |j: usize, kind: &str| m[j].estimate(seed, kind);
            let exact_zero = || EstimateWithCI::exact(0.0, seed, "killed-below-zero");
            let (p_full, p_kill, p_kill_window) = if level < 0.0 {
                // killed particles stay at or above 0
                (
                    feasible[i].then(|| est(i, "direct")),
                    Some(exact_zero()),
                    Some(exact_zero()),
                )
            } else if feasible[i] {
                (
                    Some(est(i, "direct")),
                    Some(est(k + i, "direct")),
                    Some(est(2 * k + i, "direct")),
                )
            } else {
                (None, None, None)
            };
            TailRow {
                z,
                level,
                feasible: feasible[i],
                scaled_kill: p_kill.as_ref().map(|p| p.scaled(z.exp())),
                scaled_full: p_full
                    .as_ref()
                    .filter(|_| z > 0.0)
                    .map(|p| p.scaled(z.exp() / z)),
                p_full,
                p_kill,
                p_kill_window,
                prune_bias_bound: level.exp() * pruned,
            }
        })
        .collect();
    Ok(TailTable {
        n,
        replications,
        completed: campaign.completed,
        partial: campaign.partial,
        model_hash: model.model_hash().to_string(),
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_and_exact_zero() {
        let m = PointProcessModel::binary_gaussian();
        let t = minimum_tail_direct(
            &m,
            6,
            &[-5.0, 1.0, 4.0, 9.0],
            2000,
            &PrunePolicy::barrier(20.0),
            &Caps::default(),
            &SeedRecord::new(1),
            &Executor::sequential(),
        )
        .unwrap();
        assert!(t.rows[0].feasible && t.rows[1].feasible);
        // exp(-4) * 2000 = 36.6 < 100
        assert!(!t.rows[2].feasible && t.rows[2].p_full.is_none());
        // level below zero: killed tail exactly 0
        assert_eq!(t.rows[3].p_kill.as_ref().unwrap().value, 0.0);
        assert_eq!(t.rows[3].p_kill.as_ref().unwrap().stderr, 0.0);
        // z = -5: the minimum is below (3/2) ln n + 5 with high probability
        assert!(t.rows[0].p_full.as_ref().unwrap().value > 0.95);
        for r in t.rows.iter().filter(|r| r.feasible) {
            assert!(r.p_kill.as_ref().unwrap().value <= r.p_full.as_ref().unwrap().value);
        }
    }
}
