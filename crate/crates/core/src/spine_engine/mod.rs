//! Trees under the size-biased measure: a marked ray (the spine) reproduces
//! by the tilted point process, every other particle by the ordinary one.
//! Under this measure `V(w_k)` is the many-to-one walk, and given the tree
//! the spine leaf is chosen with probability `exp(-V(u)) / W_n`.

mod conditioned;
mod decomposition;
mod good;
mod killed;

use serde::{Deserialize, Serialize};

use crate::brw_engine::{run_subtree, Caps, Frontier, PrunePolicy, RunStatus, TreeRunStats};
use crate::error::{Error, Result};
use crate::offspring::PointProcessModel;
use crate::rng::SimRng;

pub use conditioned::{
    conditioned_spine_step, tanaka_check, ConditionedStepper, EnvelopeEvent, TanakaReport,
};
pub use decomposition::{
    decomposition_tree, first_crossing_decomposition, DecompositionReport, DecompositionRow,
    DecompositionTree,
};
pub use good::{
    good_vertex_diagnostic, good_vertex_frequency, GoodGeneration, GoodVertexFrequency,
    GoodVertexReport,
};
pub use killed::{
    barrier_dk, killed_cumulative_tail, killed_integrand, killed_min_estimator, ConstraintKind,
    KilledSample, KilledTailReport, KilledTailRow, PathConstraint, SpineEstimate,
};

/// What to build besides the spine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineOptions {
    /// Run an ordinary tree below every sibling of the spine.
    pub subtrees: bool,
    /// Keep every generation-`n` position (needs `subtrees`).
    pub keep_leaves: bool,
    pub policy: PrunePolicy,
    pub caps: Caps,
}

impl SpineOptions {
    pub fn spine_only() -> Self {
        SpineOptions {
            subtrees: false,
            keep_leaves: false,
            policy: PrunePolicy::none(),
            caps: Caps::default(),
        }
    }

    pub fn full(policy: PrunePolicy, caps: Caps) -> Self {
        SpineOptions {
            subtrees: true,
            keep_leaves: false,
            policy,
            caps,
        }
    }
}

/// Children of the spine particle `w_{k-1}` other than `w_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiblingRecord {
    /// Generation `k` of the siblings.
    pub generation: usize,
    /// Absolute positions.
    pub positions: Vec<f64>,
}

/// One marked tree of depth `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineRealization {
    /// `V(w_0), ..., V(w_n)`
    pub spine_positions: Vec<f64>,
    /// `sibling_records[k - 1]` holds the siblings of `w_k`, `k = 1..=n`.
    pub sibling_records: Vec<SiblingRecord>,
    /// Generation-`n` statistics below each sibling, in the layout of
    /// `sibling_records`; empty unless subtrees were requested.
    pub subtree_stats: Vec<Vec<TreeRunStats>>,
    /// Generation-`n` statistics of the whole marked tree, when subtrees
    /// were requested.
    pub tree_stats: Option<TreeRunStats>,
    /// Generation-`n` positions with the spine leaf first, when requested.
    pub leaves: Option<Vec<f64>>,
}

impl SpineRealization {
    pub fn depth(&self) -> usize {
        self.spine_positions.len() - 1
    }

    pub fn spine_end(&self) -> f64 {
        *self.spine_positions.last().unwrap()
    }

    /// Minimum of `V(w_0..w_k)`.
    pub fn spine_min(&self) -> f64 {
        self.spine_positions
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Samples the spine path only: `V(w_0..w_n)` and the sibling positions.
pub fn run_spine_path(
    model: &PointProcessModel,
    n: usize,
    rng: &mut SimRng,
) -> Result<SpineRealization> {
    run_spine_tree(model, n, &SpineOptions::spine_only(), rng)
}

/// Samples a marked tree of depth `n` started from the origin.
pub fn run_spine_tree(
    model: &PointProcessModel,
    n: usize,
    opts: &SpineOptions,
    rng: &mut SimRng,
) -> Result<SpineRealization> {
    if opts.keep_leaves && !opts.subtrees {
        return Err(Error::invalid("keeping leaves needs subtrees"));
    }
    if n > opts.caps.max_generations {
        return Err(Error::invalid("spine depth exceeds the generation cap"));
    }
    let mut spine = Vec::with_capacity(n + 1);
    spine.push(0.0f64);
    let mut records = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for k in 1..=n {
        let x0 = spine[k - 1];
        let idx = model.sample_tilted_into(rng, &mut buf)?;
        let positions = buf
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != idx)
            .map(|(_, &d)| x0 + d)
            .collect();
        spine.push(x0 + buf[idx]);
        records.push(SiblingRecord {
            generation: k,
            positions,
        });
    }
    let mut out = SpineRealization {
        spine_positions: spine,
        sibling_records: records,
        subtree_stats: Vec::new(),
        tree_stats: None,
        leaves: None,
    };
    if opts.subtrees {
        fill_subtrees(model, &mut out, opts, rng)?;
    }
    Ok(out)
}

fn fill_subtrees(
    model: &PointProcessModel,
    real: &mut SpineRealization,
    opts: &SpineOptions,
    rng: &mut SimRng,
) -> Result<()> {
    let n = real.depth();
    let spine = &real.spine_positions;
    let end = spine[n];
    let mut total = TreeRunStats {
        generation: n,
        m_n: end,
        m_n_kill: if real.spine_min() >= 0.0 {
            end
        } else {
            f64::INFINITY
        },
        argmin_count: 1,
        argmin_count_kill: u64::from(real.spine_min() >= 0.0),
        w_n: (-end).exp(),
        d_n: end * (-end).exp(),
        d_n_beta: f64::NAN,
        population: 1,
        survived: true,
        pruned_mass_bound: 0.0,
        pruned_d_bound: 0.0,
        pruned_count: 0,
        status: RunStatus::Complete,
    };
    let mut leaves = opts.keep_leaves.then(|| vec![end]);
    let mut all = Vec::with_capacity(n);
    let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, rec) in real.sibling_records.iter().enumerate() {
        // strict ancestors of generation-(k+1) siblings are w_0..w_k
        amin = amin.min(spine[k]);
        amax = amax.max(spine[k]);
        let mut per = Vec::with_capacity(rec.positions.len());
        for &x in &rec.positions {
            let root = Frontier::rooted(rec.generation, x, amin, amax, 0.0);
            let s = match &mut leaves {
                Some(l) => collect_leaves(model, root, n, opts, rng, l)?,
                None => run_subtree(model, root, n, &opts.policy, None, &opts.caps, rng)?,
            };
            total.merge(&s);
            per.push(s);
        }
        all.push(per);
    }
    real.subtree_stats = all;
    real.tree_stats = Some(total);
    real.leaves = leaves;
    Ok(())
}

fn collect_leaves(
    model: &PointProcessModel,
    root: Frontier,
    n: usize,
    opts: &SpineOptions,
    rng: &mut SimRng,
    out: &mut Vec<f64>,
) -> Result<TreeRunStats> {
    let mut cur = root;
    let mut next = Frontier::default();
    let mut ledger = crate::brw_engine::PruneLedger::default();
    let mut buf = Vec::new();
    while cur.generation < n {
        cur.evolve_into(
            &mut next,
            model,
            &opts.policy,
            n,
            &opts.caps,
            &mut ledger,
            rng,
            &mut buf,
        )?;
        std::mem::swap(&mut cur, &mut next);
    }
    out.extend_from_slice(&cur.positions);
    Ok(cur.stats(None, &ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{Collected, Executor};
    use crate::rng::SeedRecord;
    use crate::stats::{ks_one_sample, normal_cdf};
    use rand::RngExt;
    use std::f64::consts::LN_2;

    #[test]
    fn one_child_spine_stays_at_zero() {
        let m = PointProcessModel::single_child("one-child-zero", 0.0);
        let r = run_spine_tree(
            &m,
            8,
            &SpineOptions::full(PrunePolicy::none(), Caps::default()),
            &mut SeedRecord::new(1).rng(0),
        )
        .unwrap();
        assert!(r.spine_positions.iter().all(|&x| x == 0.0));
        assert!(r.sibling_records.iter().all(|s| s.positions.is_empty()));
        let t = r.tree_stats.unwrap();
        assert_eq!(t.population, 1);
        assert_eq!(t.w_n, 1.0);
    }

    #[test]
    fn binary_spine_has_one_sibling_per_generation() {
        let m = PointProcessModel::binary_gaussian();
        let opts = SpineOptions {
            keep_leaves: true,
            ..SpineOptions::full(PrunePolicy::none(), Caps::default())
        };
        let r = run_spine_tree(&m, 6, &opts, &mut SeedRecord::new(2).rng(0)).unwrap();
        assert_eq!(r.spine_positions.len(), 7);
        assert_eq!(r.spine_positions[0], 0.0);
        for (k, s) in r.sibling_records.iter().enumerate() {
            assert_eq!(s.generation, k + 1);
            assert_eq!(s.positions.len(), 1);
        }
        // 1 spine leaf + sum_k 2^(6-k)
        assert_eq!(r.leaves.as_ref().unwrap().len(), 64);
        let t = r.tree_stats.unwrap();
        assert_eq!(t.population, 64);
        let w: f64 = r.leaves.unwrap().iter().map(|x| (-x).exp()).sum();
        assert!((w - t.w_n).abs() < 1e-9 * w);
    }

    fn spine_end_ks(n: usize, draws: u64) -> f64 {
        let m = PointProcessModel::binary_gaussian();
        let seed = SeedRecord::new(31).derive_index(n as u64);
        let xs = Executor::sequential()
            .run(draws, 4096, &seed, Collected::default, |acc, _, rng| {
                acc.0.push(run_spine_path(&m, n, rng)?.spine_end());
                Ok(())
            })
            .unwrap()
            .acc
            .0;
        let sd = (2.0 * LN_2 * n as f64).sqrt();
        ks_one_sample(&xs, |x| normal_cdf(x / sd)).p_value
    }

    #[test]
    fn spine_end_is_the_many_to_one_walk() {
        for n in [1, 5, 20] {
            let p = spine_end_ks(n, 20_000);
            assert!(p > 0.001, "n = {n}: p = {p}");
        }
    }

    #[test]
    fn spine_is_a_weighted_leaf_pick() {
        // given the tree, P(spine = u) = exp(-V(u)) / W_n; the randomized PIT
        // of the spine under that law is uniform
        let m = PointProcessModel::binary_gaussian();
        let opts = SpineOptions {
            keep_leaves: true,
            ..SpineOptions::full(PrunePolicy::none(), Caps::default())
        };
        let mut rng = SeedRecord::new(5).rng(0);
        let mut pit = Vec::new();
        for _ in 0..2000 {
            let r = run_spine_tree(&m, 4, &opts, &mut rng).unwrap();
            let leaves = r.leaves.unwrap();
            let w: f64 = leaves.iter().map(|x| (-x).exp()).sum();
            let below: f64 = leaves[1..]
                .iter()
                .filter(|&&x| x < leaves[0])
                .map(|x| (-x).exp())
                .sum();
            let own = (-leaves[0]).exp();
            let u: f64 = rng.random();
            pit.push((below + u * own) / w);
        }
        assert!(ks_one_sample(&pit, |x| x.clamp(0.0, 1.0)).p_value > 0.001);
    }
}
