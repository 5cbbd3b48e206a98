use serde::{Deserialize, Serialize};

use super::{Caps, Frontier, PruneLedger, PrunePolicy, TreeRunStats};
use crate::error::{Error, Result};
use crate::offspring::PointProcessModel;
use crate::rng::SimRng;

/// First-crossing particles of level `A`: `V(u) >= A` with every strict
/// ancestor below `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingLineResult {
    pub level: f64,
    pub positions: Vec<f64>,
    pub generations: Vec<usize>,
    /// `sum exp(-V)` over the line.
    pub sum_exp: f64,
    /// `sum V exp(-V)` over the line.
    pub sum_v_exp: f64,
    /// Particles still below the level when the search stopped.
    pub residual_count: u64,
    pub residual_exp: f64,
    pub residual_v_exp: f64,
    /// Deepest generation examined.
    pub depth: usize,
    /// True when no particle is left below the level.
    pub complete: bool,
    /// True when the search stopped on the population cap.
    pub overflow: bool,
}

impl StoppingLineResult {
    fn new(level: f64) -> Self {
        StoppingLineResult {
            level,
            positions: Vec::new(),
            generations: Vec::new(),
            sum_exp: 0.0,
            sum_v_exp: 0.0,
            residual_count: 0,
            residual_exp: 0.0,
            residual_v_exp: 0.0,
            depth: 0,
            complete: false,
            overflow: false,
        }
    }

    #[inline]
    fn stop(&mut self, x: f64, generation: usize) {
        let e = (-x).exp();
        self.positions.push(x);
        self.generations.push(generation);
        self.sum_exp += e;
        self.sum_v_exp += x * e;
    }

    fn residual(&mut self, active: &[f64]) {
        self.residual_count = active.len() as u64;
        for &x in active {
            let e = (-x).exp();
            self.residual_exp += e;
            self.residual_v_exp += x * e;
        }
    }
}

/// Explores the tree from the root, evolving only particles below `level`,
/// until none are left or a cap is reached.
pub fn stopping_line(
    model: &PointProcessModel,
    level: f64,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<StoppingLineResult> {
    if !(level > 0.0) {
        return Err(Error::invalid("stopping level must be positive"));
    }
    let mut out = StoppingLineResult::new(level);
    let mut active = vec![0.0f64];
    let mut next = Vec::new();
    let mut buf = Vec::new();
    let mut generation = 0;
    while !active.is_empty() {
        if generation == caps.max_generations {
            out.residual(&active);
            out.depth = generation;
            return Ok(out);
        }
        generation += 1;
        next.clear();
        for &x0 in &active {
            model.sample_into(rng, &mut buf)?;
            for &d in &buf {
                let x = x0 + d;
                if x >= level {
                    out.stop(x, generation);
                } else {
                    next.push(x);
                }
            }
            if next.len() > caps.max_population {
                out.overflow = true;
                out.residual(&next);
                out.depth = generation;
                return Ok(out);
            }
        }
        std::mem::swap(&mut active, &mut next);
    }
    out.depth = generation;
    out.complete = true;
    Ok(out)
}

/// Stopping lines of several levels read off one full tree of depth `n`,
/// together with the tree's generation-`n` statistics. Lines not finished by
/// generation `n` carry the unfinished particles as residual.
pub fn stopping_lines_crn(
    model: &PointProcessModel,
    n: usize,
    levels: &[f64],
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<(Vec<StoppingLineResult>, TreeRunStats)> {
    if levels.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("stopping levels must be positive"));
    }
    let mut lines: Vec<StoppingLineResult> =
        levels.iter().map(|&a| StoppingLineResult::new(a)).collect();
    let policy = PrunePolicy::none();
    let mut ledger = PruneLedger::default();
    let mut cur = Frontier::root(0.0, 0.0);
    let mut next = Frontier::default();
    let mut buf = Vec::new();
    for g in 1..=n {
        cur.evolve_into(
            &mut next,
            model,
            &policy,
            n,
            caps,
            &mut ledger,
            rng,
            &mut buf,
        )?;
        for j in 0..next.len() {
            let x = next.positions[j];
            let parent_max = cur.path_max[next.parent_index[j] as usize];
            for line in lines.iter_mut() {
                if x >= line.level && parent_max < line.level {
                    line.stop(x, g);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    for line in lines.iter_mut() {
        let active: Vec<f64> = (0..cur.len())
            .filter(|&i| cur.path_max[i] < line.level)
            .map(|i| cur.positions[i])
            .collect();
        line.residual(&active);
        line.depth = n;
        line.complete = active.is_empty();
    }
    let stats = cur.stats(None, &ledger);
    Ok((lines, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Executor;
    use crate::rng::SeedRecord;
    use crate::stats::Moments;

    #[test]
    fn drift_model_crosses_once() {
        let m = PointProcessModel::single_child("one-child-drift", 1.0);
        let r = stopping_line(&m, 3.0, &Caps::default(), &mut SeedRecord::new(1).rng(0)).unwrap();
        assert_eq!(r.positions, vec![3.0]);
        assert_eq!(r.generations, vec![3]);
        assert!(r.complete);
    }

    #[test]
    fn crn_lines_agree_with_direct_search_when_complete() {
        let m = PointProcessModel::binary_gaussian();
        let (lines, _) = stopping_lines_crn(
            &m,
            12,
            &[1.0],
            &Caps::default(),
            &mut SeedRecord::new(4).rng(0),
        )
        .unwrap();
        let l = &lines[0];
        // every crossing is at or above the level, with generations within depth
        assert!(l.positions.iter().all(|&x| x >= 1.0));
        assert!(l.generations.iter().all(|&g| (1..=12).contains(&g)));
    }

    #[test]
    fn line_mass_matches_walk_passage_probability() {
        // many-to-one along the line: E[sum_{u in line, |u| <= K} e^-V(u)]
        // equals P(walk passes the level within K steps)
        let m = PointProcessModel::binary_gaussian();
        let walk = crate::rw_kit::derive_walk(&m).unwrap();
        let (level, depth) = (2.0, 12);
        let caps = Caps {
            max_generations: depth,
            ..Caps::default()
        };
        let exec = Executor::sequential();
        let seed = SeedRecord::new(8);
        let tree = exec
            .run(20_000, 500, &seed, Moments::new, |acc, _, rng| {
                let l = stopping_line(&m, level, &caps, rng)?;
                acc.push(l.sum_exp);
                Ok(())
            })
            .unwrap()
            .acc
            .estimate(seed, "tree");
        let walk_side = exec
            .run(
                200_000,
                10_000,
                &seed.derive("walk"),
                Moments::new,
                |acc, _, rng| {
                    let mut s = 0.0;
                    let mut hit = false;
                    for _ in 0..depth {
                        s += walk.step(rng);
                        if s >= level {
                            hit = true;
                            break;
                        }
                    }
                    acc.push(f64::from(u8::from(hit)));
                    Ok(())
                },
            )
            .unwrap()
            .acc
            .estimate(seed, "walk");
        assert!(tree.agrees_with(&walk_side, 4.0), "{tree:?} {walk_side:?}");
    }
}
