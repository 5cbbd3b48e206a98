use serde::{Deserialize, Serialize};

use crate::brw_engine::{run_tree_observed, Caps, PrunePolicy, RunStatus};
use crate::error::{Error, Result};
use crate::exec::{Collected, Executor};
use crate::offspring::PointProcessModel;
use crate::rng::SeedRecord;

/// Fewest surviving trees for an unflagged report.
pub const MIN_SURVIVORS: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitLawReport {
    pub n: usize,
    pub replications: u64,
    pub completed: u64,
    pub partial: bool,
    pub model_hash: String,
    pub seed: SeedRecord,
    pub x_grid: Vec<f64>,
    /// `P(M_n >= (3/2) ln n + x)`
    pub empirical_survival: Vec<f64>,
    pub survival_stderr: Vec<f64>,
    /// Mean over trees of `exp(-C e^x max(D_n, 0))`.
    pub mixture_prediction: Vec<f64>,
    /// Fitted so that both curves agree at `x = 0`.
    pub c_hat: f64,
    pub sup_distance: f64,
    pub surviving: u64,
    /// Trees with `D_n < 0`, clamped to 0 in the mixture.
    pub d_clamped: u64,
    /// Trees that hit the population cap.
    pub overflowed: u64,
    /// Too few surviving trees, or the fit did not bracket.
    pub flagged: bool,
}

/// `mean exp(-c max(d, 0))`
fn mixture(ds: &[f64], c: f64) -> f64 {
    ds.iter().map(|&d| (-c * d.max(0.0)).exp()).sum::<f64>() / ds.len() as f64
}

/// Solves `mixture(ds, c) = target` by bisection on `ln c`; `None` when the
/// target is outside the attainable range.
fn fit_c(ds: &[f64], target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    if !(mixture(ds, hi.exp()) <= target && target <= mixture(ds, lo.exp())) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture(ds, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}

fn report_for(
    n: usize,
    x_grid: &[f64],
    samples: &[(f64, f64, bool)],
    meta: (&str, SeedRecord, u64, u64, bool),
) -> LimitLawReport {
    let (hash, seed, replications, completed, partial) = meta;
    let count = samples.len().max(1) as f64;
    let centre = 1.5 * (n as f64).ln();
    let survival: Vec<f64> = x_grid
        .iter()
        .map(|&x| samples.iter().filter(|s| s.0 >= centre + x).count() as f64 / count)
        .collect();
    let survival_stderr = survival
        .iter()
        .map(|&p| (p * (1.0 - p) / count).sqrt())
        .collect();
    let ds: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let at_zero = samples.iter().filter(|s| s.0 >= centre).count() as f64 / count;
    let fit = if ds.is_empty() {
        None
    } else {
        fit_c(&ds, at_zero)
    };
    let c_hat = fit.unwrap_or(f64::NAN);
    let mixture_prediction: Vec<f64> = if fit.is_some() {
        x_grid
            .iter()
            .map(|&x| mixture(&ds, c_hat * x.exp()))
            .collect()
    } else {
        vec![f64::NAN; x_grid.len()]
    };
    let sup_distance = survival
        .iter()
        .zip(&mixture_prediction)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let surviving = samples.iter().filter(|s| s.0.is_finite()).count() as u64;
    LimitLawReport {
        n,
        replications,
        completed,
        partial,
        model_hash: hash.to_string(),
        seed,
        x_grid: x_grid.to_vec(),
        empirical_survival: survival,
        survival_stderr,
        mixture_prediction,
        c_hat,
        sup_distance: if fit.is_some() {
            sup_distance
        } else {
            f64::NAN
        },
        surviving,
        d_clamped: ds.iter().filter(|&&d| d < 0.0).count() as u64,
        overflowed: samples.iter().filter(|s| s.2).count() as u64,
        flagged: fit.is_none() || surviving < MIN_SURVIVORS,
    }
}

/// Empirical law of the recentred minimum against the randomly shifted
/// Gumbel mixture built from `D_n` of the same trees, for each depth in `ns`
/// (increasing), all read off the same trees.
#[allow(clippy::too_many_arguments)]
pub fn exp_limit_law_multi(
    model: &PointProcessModel,
    ns: &[usize],
    x_grid: &[f64],
    replications: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<Vec<LimitLawReport>> {
    if x_grid.is_empty() || x_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("x grid must be non-empty and increasing"));
    }
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(Error::invalid("depths must be positive and increasing"));
    }
    if replications == 0 {
        return Err(Error::invalid("no replications"));
    }
    let seed = seed
        .derive("limit-law")
        .derive_index(*ns.last().unwrap() as u64);
    let k = ns.len();
    let r = exec.run(
        replications,
        64,
        &seed,
        || vec![Collected::<(f64, f64, bool)>::default(); k],
        |acc, _, rng| {
            let stats = run_tree_observed(model, ns, 0.0, policy, None, caps, rng)?;
            for (a, s) in acc.iter_mut().zip(stats) {
                a.0.push((s.m_n, s.d_n, s.status != RunStatus::Complete));
            }
            Ok(())
        },
    )?;
    Ok(ns
        .iter()
        .zip(&r.acc)
        .map(|(&n, c)| {
            report_for(
                n,
                x_grid,
                &c.0,
                (
                    model.model_hash(),
                    seed,
                    replications,
                    r.completed,
                    r.partial,
                ),
            )
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn exp_limit_law(
    model: &PointProcessModel,
    n: usize,
    x_grid: &[f64],
    replications: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<LimitLawReport> {
    Ok(exp_limit_law_multi(model, &[n], x_grid, replications, policy, caps, seed, exec)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_known_constant() {
        let ds: Vec<f64> = (1..200).map(|i| i as f64 / 50.0).collect();
        let target = mixture(&ds, 0.7);
        let c = fit_c(&ds, target).unwrap();
        assert!((c - 0.7).abs() < 1e-9);
        assert!(fit_c(&ds, 1.5).is_none());
    }

    #[test]
    fn curves_are_monotone_and_bounded() {
        let m = PointProcessModel::binary_gaussian();
        let xs: Vec<f64> = (-6..=6).map(f64::from).collect();
        let r = exp_limit_law(
            &m,
            8,
            &xs,
            500,
            &PrunePolicy::none(),
            &Caps::default(),
            &SeedRecord::new(3),
            &Executor::sequential(),
        )
        .unwrap();
        for v in [&r.empirical_survival, &r.mixture_prediction] {
            assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!(v.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(r.empirical_survival[0] > 0.95 && r.mixture_prediction[0] > 0.95);
        let i6 = xs.len() - 1;
        assert!(
            r.empirical_survival[i6]
                <= r.mixture_prediction[i6] + 3.0 * r.survival_stderr[i6] + 1e-12
        );
        // matched at x = 0
        assert!((r.empirical_survival[6] - r.mixture_prediction[6]).abs() < 1e-9);
    }
}
