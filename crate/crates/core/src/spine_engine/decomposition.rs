//! Decomposition of `{M_n < a_n(z)}` by the last running-minimum vertex.
//!
//! For `r >= 0`, `S^r` holds the vertices strictly below all their strict
//! ancestors and at or above `-r`; the root belongs to `S^r` (the minimum
//! over no ancestors is `+inf`). `B(u) = 1` when some generation-`n`
//! descendant of `u` stays at or above `V(u)` and ends below `a_n(z)`.
//! For a generation-`n` particle `v`, the only candidate `u` on its path is
//! the vertex where the path minimum is attained, so `sum_u B(u)` counts the
//! distinct such vertices over the particles `v` below `a_n(z)`.

// per-level parallel arrays are walked by index
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

use crate::brw_engine::{Caps, PruneLedger, PrunePolicy};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::PointProcessModel;
use crate::rng::{SeedRecord, SimRng};
use crate::rw_kit::{RenewalFunction, Side};
use crate::stats::{CoMoments, EstimateWithCI, Moments};
use crate::util::a_n;

/// Largest number of `z` values handled in one pass.
pub const MAX_Z: usize = 64;

/// `xi` of each child: `sum` over its siblings `w` of
/// `(1 + (V(w) - V(parent))_+) exp(-(V(w) - V(parent)))`, from the
/// displacements of one offspring draw.
pub(crate) fn sibling_xi(displacements: &[f64], out: &mut Vec<f64>) {
    let f = |d: f64| (1.0 + d.max(0.0)) * (-d).exp();
    let total: f64 = displacements.iter().map(|&d| f(d)).sum();
    out.clear();
    if displacements.len() == 1 {
        out.push(0.0);
        return;
    }
    out.extend(displacements.iter().map(|&d| (total - f(d)).max(0.0)));
}

/// Per-tree quantities for each `z` of the grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTree {
    /// `sum_{u in S^r, |u| <= sqrt n} B(u)`
    pub sum_b_trunc: Vec<u64>,
    /// The same restricted to `u` in `T^r`.
    pub sum_b_trunc_t: Vec<u64>,
    /// `sum_{u in S^r} B(u)`
    pub sum_b_all: Vec<u64>,
    /// `1{M_n < a_n(z)}`
    pub direct: Vec<bool>,
    /// `sum_{u in S^r, |u| <= sqrt n} exp(-V(u))`
    pub s_mass_trunc: Vec<f64>,
    /// `#{u in S^r : |u| <= sqrt n}`
    pub s_count_trunc: Vec<u64>,
    pub pruned: PruneLedger,
}

#[derive(Clone, Copy)]
struct Particle {
    x: f64,
    /// Path minimum, attained at the record vertex.
    pmin: f64,
    record: u64,
    record_gen: u32,
    /// Bit `i`: the path so far lies in `T^(r_i)`.
    in_t: u64,
    /// `in_t` of the record vertex.
    record_t: u64,
}

/// One full tree of depth `n` evaluated for `z` values with `r = z - a`.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_tree(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    a: f64,
    policy: &PrunePolicy,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<DecompositionTree> {
    let k = z_grid.len();
    if k == 0 || k > MAX_Z {
        return Err(Error::invalid(
            "decomposition needs between 1 and 64 z values",
        ));
    }
    let trunc = (n as f64).sqrt().floor() as usize;
    let r: Vec<f64> = z_grid.iter().map(|&z| z - a).collect();
    let levels: Vec<f64> = z_grid.iter().map(|&z| a_n(n, z)).collect();
    let all_t = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
    let mut out = DecompositionTree {
        sum_b_trunc: vec![0; k],
        sum_b_trunc_t: vec![0; k],
        sum_b_all: vec![0; k],
        direct: vec![false; k],
        s_mass_trunc: vec![0.0; k],
        s_count_trunc: vec![0; k],
        pruned: PruneLedger::default(),
    };
    // the root is in S^r for r >= 0
    for i in 0..k {
        if r[i] >= 0.0 {
            out.s_mass_trunc[i] += 1.0;
            out.s_count_trunc[i] += 1;
        }
    }
    let cutoff = policy.cutoff(n);
    let mut cur = vec![Particle {
        x: 0.0,
        pmin: 0.0,
        record: 0,
        record_gen: 0,
        in_t: all_t,
        record_t: all_t,
    }];
    let mut next = Vec::new();
    let mut buf = Vec::new();
    let mut xi = Vec::new();
    let mut hits: Vec<Vec<(u64, u32, bool)>> = vec![Vec::new(); k];
    let mut next_id = 1u64;
    for g in 1..=n {
        next.clear();
        for p in &cur {
            model.sample_into(rng, &mut buf)?;
            sibling_xi(&buf, &mut xi);
            for (j, &d) in buf.iter().enumerate() {
                let x = p.x + d;
                let mut in_t = p.in_t;
                if in_t != 0 {
                    // T^r needs xi(v) < exp((V(parent) + r) / 2)
                    for (i, &ri) in r.iter().enumerate() {
                        if xi[j] >= ((p.x + ri) / 2.0).exp() {
                            in_t &= !(1 << i);
                        }
                    }
                }
                let mut c = Particle {
                    x,
                    pmin: p.pmin,
                    record: p.record,
                    record_gen: p.record_gen,
                    in_t,
                    record_t: p.record_t,
                };
                if x < p.pmin {
                    c.pmin = x;
                    c.record = next_id;
                    c.record_gen = g as u32;
                    c.record_t = in_t;
                    next_id += 1;
                    if g <= trunc {
                        for i in 0..k {
                            if x >= -r[i] {
                                out.s_mass_trunc[i] += (-x).exp();
                                out.s_count_trunc[i] += 1;
                            }
                        }
                    }
                }
                if g == n {
                    for i in 0..k {
                        if x < levels[i] {
                            out.direct[i] = true;
                            if c.pmin >= -r[i] {
                                hits[i].push((c.record, c.record_gen, c.record_t >> i & 1 == 1));
                            }
                        }
                    }
                } else if x > cutoff {
                    if policy.track_bias {
                        out.pruned.count += 1;
                        out.pruned.mass += (-x).exp();
                        out.pruned.abs_v_mass += x.abs() * (-x).exp();
                    }
                } else {
                    next.push(c);
                }
            }
            if next.len() > caps.max_population {
                return Err(Error::PopulationOverflow {
                    generation: g,
                    population: next.len(),
                    cap: caps.max_population,
                });
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    for (i, h) in hits.iter_mut().enumerate() {
        h.sort_unstable_by_key(|e| e.0);
        h.dedup_by_key(|e| e.0);
        out.sum_b_all[i] = h.len() as u64;
        out.sum_b_trunc[i] = h.iter().filter(|e| e.1 as usize <= trunc).count() as u64;
        out.sum_b_trunc_t[i] = h.iter().filter(|e| e.1 as usize <= trunc && e.2).count() as u64;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub z: f64,
    /// `r = z - A`
    pub r: f64,
    /// `a_n(z)`
    pub level: f64,
    /// `E[sum_{u in S^r} B(u) 1{|u| <= sqrt n}]`
    pub sum_b_trunc: EstimateWithCI,
    pub sum_b_trunc_t: EstimateWithCI,
    pub sum_b_all: EstimateWithCI,
    /// `P(sum_{u in S^r} B(u) >= 1)`, at most `exp(A - z)` below `p_direct`.
    pub p_decomposition: EstimateWithCI,
    /// `P(M_n < a_n(z))` from the same trees.
    pub p_direct: EstimateWithCI,
    pub deficiency_bound: f64,
    /// `E[sum_{u in S^r, |u| <= sqrt n} exp(-V(u))]`
    pub s_mass_trunc: EstimateWithCI,
    pub s_count_trunc: EstimateWithCI,
    /// `R(r)` and its standard error.
    pub renewal: f64,
    pub renewal_stderr: f64,
    /// `exp(z) / R(r) * E[sum B 1{|u| <= sqrt n}]`
    pub ratio: EstimateWithCI,
    /// `exp(z) E[sum B 1{|u| <= sqrt n}] / E[sum_{S^r, |u| <= sqrt n} exp(-V)]`,
    /// the same ratio with the truncated line mass in place of `R(r)`.
    pub ratio_truncated_mass: EstimateWithCI,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub n: usize,
    pub a: f64,
    pub truncation: usize,
    pub replications: u64,
    pub completed: u64,
    pub partial: bool,
    pub model_hash: String,
    pub seed: SeedRecord,
    pub pruned_mass: f64,
    pub rows: Vec<DecompositionRow>,
}

/// Campaign over full trees of depth `n` evaluating the decomposition for
/// each `z` of the grid with `r = z - a`.
#[allow(clippy::too_many_arguments)]
pub fn first_crossing_decomposition(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    a: f64,
    replications: u64,
    renewal: &RenewalFunction,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<DecompositionReport> {
    if !(a >= 0.0) || z_grid.iter().any(|&z| !(z >= a)) {
        return Err(Error::invalid("decomposition needs z >= A >= 0"));
    }
    if renewal.side != Side::Plus {
        return Err(Error::invalid(
            "decomposition uses the renewal function of S",
        ));
    }
    if n == 0 || replications < 2 {
        return Err(Error::invalid(
            "decomposition needs n >= 1 and two replications",
        ));
    }
    let k = z_grid.len();
    let seed = seed
        .derive("decomposition")
        .derive_index(n as u64)
        .derive(&format!("{a:?}"));
    let camp = exec.run(
        replications,
        256,
        &seed,
        || {
            (
                vec![Moments::new(); 7 * k],
                vec![CoMoments::new(); k],
                0.0f64,
            )
        },
        |acc, _, rng| {
            let t = decomposition_tree(model, n, z_grid, a, policy, caps, rng)?;
            for i in 0..k {
                let m = &mut acc.0[7 * i..7 * i + 7];
                m[0].push(t.sum_b_trunc[i] as f64);
                m[1].push(t.sum_b_trunc_t[i] as f64);
                m[2].push(t.sum_b_all[i] as f64);
                m[3].push(f64::from(u8::from(t.sum_b_all[i] >= 1)));
                m[4].push(f64::from(u8::from(t.direct[i])));
                m[5].push(t.s_count_trunc[i] as f64);
                m[6].push(t.s_mass_trunc[i]);
                acc.1[i].push(t.sum_b_trunc[i] as f64 * z_grid[i].exp(), t.s_mass_trunc[i]);
            }
            acc.2 += t.pruned.mass;
            Ok(())
        },
    )?;
    let (m, co, pruned) = camp.acc;
    let rows = z_grid
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let e = |j: usize, kind: &str| m[7 * i + j].estimate(seed, kind);
            let r = z - a;
            let rv = renewal.eval(r);
            let rse = renewal.stderr_at(r);
            let sum_b_trunc = e(0, "decomposition");
            let scale = z.exp() / rv;
            let ratio_value = sum_b_trunc.value * scale;
            let rel = (sum_b_trunc.stderr / sum_b_trunc.value).hypot(rse / rv);
            let ratio = EstimateWithCI {
                value: ratio_value,
                stderr: if ratio_value > 0.0 {
                    ratio_value * rel
                } else {
                    sum_b_trunc.stderr * scale
                },
                count: sum_b_trunc.count,
                seed,
                estimator_kind: "decomposition".to_string(),
            };
            DecompositionRow {
                z,
                r,
                level: a_n(n, z),
                sum_b_trunc,
                sum_b_trunc_t: e(1, "decomposition"),
                sum_b_all: e(2, "decomposition"),
                p_decomposition: e(3, "decomposition"),
                p_direct: e(4, "direct"),
                deficiency_bound: (a - z).exp(),
                s_mass_trunc: e(6, "decomposition"),
                s_count_trunc: e(5, "decomposition"),
                renewal: rv,
                renewal_stderr: rse,
                ratio,
                ratio_truncated_mass: co[i].ratio(seed, "decomposition"),
            }
        })
        .collect();
    Ok(DecompositionReport {
        n,
        a,
        truncation: (n as f64).sqrt().floor() as usize,
        replications,
        completed: camp.completed,
        partial: camp.partial,
        model_hash: model.model_hash().to_string(),
        seed,
        pruned_mass: pruned / camp.completed.max(1) as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rw_kit::derive_walk;

    #[test]
    fn xi_is_zero_without_siblings() {
        let mut out = Vec::new();
        sibling_xi(&[0.3], &mut out);
        assert_eq!(out, vec![0.0]);
        sibling_xi(&[0.3, -1.0, 2.0], &mut out);
        assert!(out.iter().all(|&v| v > 0.0));
        let f = |d: f64| (1.0 + d.max(0.0)) * (-d).exp();
        assert!((out[0] - f(-1.0) - f(2.0)).abs() < 1e-12);
    }

    #[test]
    fn drift_model_has_only_the_root() {
        let m = PointProcessModel::single_child("one-child-drift", 1.0);
        let t = decomposition_tree(
            &m,
            9,
            &[0.0, 1.0],
            0.0,
            &PrunePolicy::none(),
            &Caps::default(),
            &mut SeedRecord::new(1).rng(0),
        )
        .unwrap();
        assert_eq!(t.s_count_trunc, vec![1, 1]);
        assert_eq!(t.s_mass_trunc, vec![1.0, 1.0]);
        // V = 9 is above a_9(z)
        assert_eq!(t.sum_b_all, vec![0, 0]);
    }

    #[test]
    fn decomposition_counts_are_ordered() {
        let m = PointProcessModel::binary_gaussian();
        let mut rng = SeedRecord::new(2).rng(0);
        let z = [1.0, 2.0, 3.0];
        for _ in 0..300 {
            let t = decomposition_tree(
                &m,
                10,
                &z,
                1.0,
                &PrunePolicy::none(),
                &Caps::default(),
                &mut rng,
            )
            .unwrap();
            for i in 0..3 {
                assert!(t.sum_b_trunc_t[i] <= t.sum_b_trunc[i]);
                assert!(t.sum_b_trunc[i] <= t.sum_b_all[i]);
                // a hit needs a particle below the level
                assert!(t.sum_b_all[i] == 0 || t.direct[i]);
            }
        }
    }

    #[test]
    fn truncated_line_mass_is_a_walk_ladder_probability() {
        // E[sum_{u in S^r, |u| <= k} e^-V(u)] = sum_{j <= k} P(S_j new strict minimum, S_j >= -r)
        let m = PointProcessModel::binary_gaussian();
        let walk = derive_walk(&m).unwrap();
        let (n, z, a) = (9, 2.5, 1.0);
        let r = z - a;
        let exec = Executor::sequential();
        let seed = SeedRecord::new(6);
        let tree = exec
            .run(40_000, 500, &seed, Moments::new, |acc, _, rng| {
                let t = decomposition_tree(
                    &m,
                    n,
                    &[z],
                    a,
                    &PrunePolicy::none(),
                    &Caps::default(),
                    rng,
                )?;
                acc.push(t.s_mass_trunc[0]);
                Ok(())
            })
            .unwrap()
            .acc
            .estimate(seed, "tree");
        let walk_side = exec
            .run(
                400_000,
                10_000,
                &seed.derive("walk"),
                Moments::new,
                |acc, _, rng| {
                    let (mut s, mut min, mut count) = (0.0, 0.0f64, 1.0);
                    for _ in 0..3 {
                        s += walk.step(rng);
                        if s < min {
                            min = s;
                            if s >= -r {
                                count += 1.0;
                            }
                        }
                    }
                    acc.push(count);
                    Ok(())
                },
            )
            .unwrap()
            .acc
            .estimate(seed, "walk");
        assert!(tree.agrees_with(&walk_side, 4.0), "{tree:?} {walk_side:?}");
    }
}
