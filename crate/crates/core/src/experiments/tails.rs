use serde::{Deserialize, Serialize};

use crate::brw_engine::{minimum_tail_direct, Caps, PrunePolicy, TailTable};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::PointProcessModel;
use crate::rng::SeedRecord;
use crate::rw_kit::RenewalFunction;
use crate::spine_engine::{
    first_crossing_decomposition, killed_cumulative_tail, DecompositionReport, KilledTailReport,
};
use crate::stats::EstimateWithCI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KilledTailExperiment {
    pub n: usize,
    pub spine: KilledTailReport,
    /// Grid points with `(3/2) ln n - z > 0`; the others are exact zeros.
    pub in_range: Vec<f64>,
    /// Grid points in the upper half of the in-range grid.
    pub upper_half: Vec<f64>,
    /// `max / min` of `exp(z) P` over the upper half.
    pub plateau_ratio: f64,
    /// `max / min` of `exp(z) P` over the whole in-range grid.
    pub range_ratio: f64,
    /// Mean of `exp(z) P` over the upper half. Its standard error treats the
    /// grid points as independent although they share replications.
    pub c1_hat: EstimateWithCI,
}

fn ratio_of(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        f64::NAN
    } else {
        max / min
    }
}

/// `exp(z) P(M_n^kill < (3/2) ln n - z)` over the grid from the spine
/// estimator, with the plateau statistics.
#[allow(clippy::too_many_arguments)]
pub fn exp_killed_tail(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    budget: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<KilledTailExperiment> {
    if z_grid.iter().any(|&z| !(z > 0.0)) || z_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "killed tail grid must be positive and increasing",
        ));
    }
    let spine = killed_cumulative_tail(model, n, z_grid, budget, policy, caps, seed, exec)?;
    let rows: Vec<_> = spine.rows.iter().filter(|r| r.level > 0.0).collect();
    let in_range: Vec<f64> = rows.iter().map(|r| r.z).collect();
    let mid = match (in_range.first(), in_range.last()) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        _ => f64::NAN,
    };
    let upper: Vec<_> = rows.iter().filter(|r| r.z >= mid).collect();
    let upper_vals: Vec<f64> = upper.iter().map(|r| r.scaled.value).collect();
    let all_vals: Vec<f64> = rows.iter().map(|r| r.scaled.value).collect();
    let k = upper.len().max(1) as f64;
    let c1_hat = EstimateWithCI {
        value: upper_vals.iter().sum::<f64>() / k,
        stderr: upper
            .iter()
            .map(|r| r.scaled.stderr.powi(2))
            .sum::<f64>()
            .sqrt()
            / k,
        count: spine.completed,
        seed: spine.seed,
        estimator_kind: "spine-plateau".to_string(),
    };
    Ok(KilledTailExperiment {
        n,
        in_range,
        upper_half: upper.iter().map(|r| r.z).collect(),
        plateau_ratio: ratio_of(&upper_vals),
        range_ratio: ratio_of(&all_vals),
        c1_hat,
        spine,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTailRow {
    pub z: f64,
    pub level: f64,
    /// Direct `P(M_n < level)`; `None` when infeasible.
    pub direct: Option<EstimateWithCI>,
    /// `exp(z) / z` times the direct estimate.
    pub direct_scaled: Option<EstimateWithCI>,
    /// `P(sum_{S^(z-A)} B >= 1)`, for `z >= A`.
    pub decomposition: Option<EstimateWithCI>,
    pub decomposition_scaled: Option<EstimateWithCI>,
    /// `exp(A - z)`, the largest possible shortfall of the decomposition.
    pub deficiency_bound: f64,
    /// `direct_scaled / (C1 c0)`
    pub ratio: Option<EstimateWithCI>,
    /// 95% intervals overlap once the decomposition interval is widened
    /// upward by `deficiency_bound`.
    pub overlap: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullTailExperiment {
    pub n: usize,
    pub a: f64,
    pub c1_hat: EstimateWithCI,
    pub c0_hat: EstimateWithCI,
    pub rows: Vec<FullTailRow>,
    pub direct: TailTable,
    pub decomposition: Option<DecompositionReport>,
}

fn rel(e: &EstimateWithCI) -> f64 {
    if e.value == 0.0 {
        0.0
    } else {
        e.stderr / e.value.abs()
    }
}

/// `(exp(z) / z) P(M_n < (3/2) ln n - z)` by direct counting and by the
/// first-crossing decomposition with offset `a`, compared with `C1 c0`.
#[allow(clippy::too_many_arguments)]
pub fn exp_full_tail(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    budget: u64,
    a: f64,
    c1_hat: &EstimateWithCI,
    c0_hat: &EstimateWithCI,
    renewal: &RenewalFunction,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<FullTailExperiment> {
    if z_grid.is_empty() || z_grid.iter().any(|&z| !(z > 0.0)) {
        return Err(Error::invalid("full tail needs z > 0"));
    }
    if !(a >= 0.0) {
        return Err(Error::invalid("decomposition offset must be non-negative"));
    }
    let direct = minimum_tail_direct(model, n, z_grid, budget, policy, caps, seed, exec)?;
    let dz: Vec<f64> = z_grid.iter().copied().filter(|&z| z >= a).collect();
    let decomposition = if dz.is_empty() {
        None
    } else {
        Some(first_crossing_decomposition(
            model, n, &dz, a, budget, renewal, policy, caps, seed, exec,
        )?)
    };
    let c1c0 = c1_hat.value * c0_hat.value;
    let c1c0_rel = rel(c1_hat).hypot(rel(c0_hat));
    let rows = z_grid
        .iter()
        .zip(&direct.rows)
        .map(|(&z, d)| {
            let dec = decomposition
                .as_ref()
                .and_then(|r| r.rows.iter().find(|row| row.z == z))
                .map(|row| row.p_decomposition.clone());
            let deficiency_bound = (a - z).exp();
            let ratio = d.scaled_full.as_ref().map(|s| {
                let value = s.value / c1c0;
                EstimateWithCI {
                    value,
                    stderr: value.abs() * rel(s).hypot(c1c0_rel),
                    count: s.count,
                    seed: s.seed,
                    estimator_kind: "direct".to_string(),
                }
            });
            let overlap = match (&d.p_full, &dec) {
                (Some(p), Some(q)) => {
                    let (plo, phi) = p.ci95();
                    let (qlo, qhi) = q.ci95();
                    Some(plo <= qhi + deficiency_bound && qlo <= phi)
                }
                _ => None,
            };
            FullTailRow {
                z,
                level: d.level,
                direct: d.p_full.clone(),
                direct_scaled: d.scaled_full.clone(),
                decomposition_scaled: dec.as_ref().map(|q| q.scaled(z.exp() / z)),
                decomposition: dec,
                deficiency_bound,
                ratio,
                overlap,
            }
        })
        .collect();
    Ok(FullTailExperiment {
        n,
        a,
        c1_hat: c1_hat.clone(),
        c0_hat: c0_hat.clone(),
        rows,
        direct,
        decomposition,
    })
}
