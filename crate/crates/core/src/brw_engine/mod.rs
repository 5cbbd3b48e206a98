//! Forward simulation of the branching random walk.
//!
//! A [`Frontier`] holds one generation as flat parallel arrays. Only parent
//! links are kept; earlier generations are dropped as the walk advances.

mod stopping;
mod tail;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::PointProcessModel;
use crate::rng::SimRng;
use crate::rw_kit::RenewalFunction;

pub use stopping::{stopping_line, stopping_lines_crn, StoppingLineResult};
pub use tail::{minimum_tail_direct, TailRow, TailTable, FEASIBILITY_HITS};

/// Limits on simulated work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    /// Largest frontier size before a run is aborted.
    pub max_population: usize,
    /// Largest generation depth for open-ended runs (stopping lines).
    pub max_generations: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_population: 1 << 24,
            max_generations: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    None,
    Barrier,
}

/// Which particles may be discarded before the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunePolicy {
    pub mode: PruneMode,
    /// With `Barrier`, particles above `(3/2) ln n + barrier_offset` are
    /// discarded (`n` is the run's horizon).
    pub barrier_offset: f64,
    pub track_bias: bool,
}

impl PrunePolicy {
    pub const DEFAULT_OFFSET: f64 = 20.0;

    pub fn none() -> Self {
        PrunePolicy {
            mode: PruneMode::None,
            barrier_offset: Self::DEFAULT_OFFSET,
            track_bias: true,
        }
    }

    pub fn barrier(offset: f64) -> Self {
        PrunePolicy {
            mode: PruneMode::Barrier,
            barrier_offset: offset,
            track_bias: true,
        }
    }

    /// Position above which particles are discarded for horizon `n`.
    pub fn cutoff(&self, n: usize) -> f64 {
        match self.mode {
            PruneMode::None => f64::INFINITY,
            PruneMode::Barrier if n == 0 => f64::INFINITY,
            PruneMode::Barrier => 1.5 * (n as f64).ln() + self.barrier_offset,
        }
    }
}

/// Mass removed by pruning. Each discarded particle at `x` would have
/// contributed `exp(-x)` to `E[W_n]` and `x exp(-x)` to `E[D_n]`, so these
/// sums are the conditional expected biases of the pruned statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneLedger {
    pub count: u64,
    /// `sum exp(-x)`
    pub mass: f64,
    /// `sum |x| exp(-x)`
    pub abs_v_mass: f64,
}

impl PruneLedger {
    #[inline]
    fn record(&mut self, x: f64) {
        let w = (-x).exp();
        self.count += 1;
        self.mass += w;
        self.abs_v_mass += x.abs() * w;
    }
}

/// One generation of the walk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Frontier {
    pub generation: usize,
    pub positions: Vec<f64>,
    /// Minimum over the ancestral path including the particle itself.
    pub path_min: Vec<f64>,
    /// Maximum over the ancestral path including the particle itself.
    pub path_max: Vec<f64>,
    pub alive_kill0: Vec<bool>,
    pub alive_killbeta: Vec<bool>,
    pub parent_index: Vec<u32>,
    pub beta: f64,
}

impl Frontier {
    /// A single particle at `start`.
    pub fn root(start: f64, beta: f64) -> Self {
        Frontier {
            generation: 0,
            positions: vec![start],
            path_min: vec![start],
            path_max: vec![start],
            alive_kill0: vec![start >= 0.0],
            alive_killbeta: vec![start >= -beta],
            parent_index: vec![0],
            beta,
        }
    }

    /// A single particle at `start` born at `generation`, whose strict
    /// ancestors span `[ancestor_min, ancestor_max]`.
    pub fn rooted(
        generation: usize,
        start: f64,
        ancestor_min: f64,
        ancestor_max: f64,
        beta: f64,
    ) -> Self {
        let mut f = Frontier::default();
        f.clear_for(generation, beta);
        f.push(start, ancestor_min.min(start), ancestor_max.max(start), 0);
        f
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn clear_for(&mut self, generation: usize, beta: f64) {
        self.generation = generation;
        self.beta = beta;
        self.positions.clear();
        self.path_min.clear();
        self.path_max.clear();
        self.alive_kill0.clear();
        self.alive_killbeta.clear();
        self.parent_index.clear();
    }

    #[inline]
    fn push(&mut self, x: f64, pmin: f64, pmax: f64, parent: u32) {
        self.positions.push(x);
        self.path_min.push(pmin);
        self.path_max.push(pmax);
        self.alive_kill0.push(pmin >= 0.0);
        self.alive_killbeta.push(pmin >= -self.beta);
        self.parent_index.push(parent);
    }

    /// Checks the structural invariants; used by tests and debug builds.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        [
            self.path_min.len(),
            self.path_max.len(),
            self.alive_kill0.len(),
            self.alive_killbeta.len(),
            self.parent_index.len(),
        ]
        .iter()
        .all(|&l| l == n)
            && (0..n).all(|i| {
                self.path_min[i] <= self.positions[i]
                    && self.positions[i] <= self.path_max[i]
                    && self.alive_kill0[i] == (self.path_min[i] >= 0.0)
                    && self.alive_killbeta[i] == (self.path_min[i] >= -self.beta)
            })
    }

    /// Writes the next generation into `next`. `horizon` is the run's final
    /// generation, which fixes the pruning cutoff.
    #[allow(clippy::too_many_arguments)]
    pub fn evolve_into(
        &self,
        next: &mut Frontier,
        model: &PointProcessModel,
        policy: &PrunePolicy,
        horizon: usize,
        caps: &Caps,
        ledger: &mut PruneLedger,
        rng: &mut SimRng,
        buf: &mut Vec<f64>,
    ) -> Result<()> {
        next.clear_for(self.generation + 1, self.beta);
        let cutoff = policy.cutoff(horizon);
        for i in 0..self.len() {
            let (x0, pmin, pmax) = (self.positions[i], self.path_min[i], self.path_max[i]);
            model.sample_into(rng, buf)?;
            for &d in buf.iter() {
                let x = x0 + d;
                if x > cutoff {
                    if policy.track_bias {
                        ledger.record(x);
                    }
                    continue;
                }
                next.push(x, pmin.min(x), pmax.max(x), i as u32);
            }
            if next.len() > caps.max_population {
                return Err(Error::PopulationOverflow {
                    generation: next.generation,
                    population: next.len(),
                    cap: caps.max_population,
                });
            }
        }
        Ok(())
    }
}

/// Advances `frontier` one generation (allocating the result).
pub fn evolve(
    frontier: &Frontier,
    model: &PointProcessModel,
    policy: &PrunePolicy,
    horizon: usize,
    caps: &Caps,
    ledger: &mut PruneLedger,
    rng: &mut SimRng,
) -> Result<Frontier> {
    let mut next = Frontier::default();
    let mut buf = Vec::new();
    frontier.evolve_into(
        &mut next, model, policy, horizon, caps, ledger, rng, &mut buf,
    )?;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// The population cap was hit while building `generation`; statistics
    /// describe the last complete generation.
    Overflow {
        generation: usize,
    },
}

/// Summary statistics of one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRunStats {
    pub generation: usize,
    /// `min V(u)`, `+inf` for an empty population.
    pub m_n: f64,
    /// Minimum over particles whose path never went below 0.
    pub m_n_kill: f64,
    pub argmin_count: u64,
    pub argmin_count_kill: u64,
    /// `sum exp(-V)`
    pub w_n: f64,
    /// `sum V exp(-V)`
    pub d_n: f64,
    /// `sum R(beta + V) exp(-V)` over paths staying above `-beta`; NaN
    /// without a renewal function.
    pub d_n_beta: f64,
    pub population: u64,
    pub survived: bool,
    /// Conditional expected bias of `w_n` from pruning.
    pub pruned_mass_bound: f64,
    /// Bound on the conditional expected bias of `d_n` from pruning.
    pub pruned_d_bound: f64,
    pub pruned_count: u64,
    pub status: RunStatus,
}

impl TreeRunStats {
    /// Combines the statistics of two disjoint sets of particles of the same
    /// generation.
    pub fn merge(&mut self, other: &TreeRunStats) {
        let pick = |m: &mut f64, c: &mut u64, om: f64, oc: u64| {
            if om < *m {
                *m = om;
                *c = oc;
            } else if om == *m && om.is_finite() {
                *c += oc;
            }
        };
        pick(
            &mut self.m_n,
            &mut self.argmin_count,
            other.m_n,
            other.argmin_count,
        );
        pick(
            &mut self.m_n_kill,
            &mut self.argmin_count_kill,
            other.m_n_kill,
            other.argmin_count_kill,
        );
        self.w_n += other.w_n;
        self.d_n += other.d_n;
        self.d_n_beta += other.d_n_beta;
        self.population += other.population;
        self.survived |= other.survived;
        self.pruned_mass_bound += other.pruned_mass_bound;
        self.pruned_d_bound += other.pruned_d_bound;
        self.pruned_count += other.pruned_count;
        if self.status == RunStatus::Complete {
            self.status = other.status;
        }
    }
}

/// Streaming accumulator for [`TreeRunStats`].
#[derive(Clone, Copy, Debug)]
struct StatsAcc {
    beta: f64,
    m: f64,
    m_count: u64,
    mk: f64,
    mk_count: u64,
    w: f64,
    d: f64,
    db: f64,
    pop: u64,
}

impl StatsAcc {
    fn new(beta: f64) -> Self {
        StatsAcc {
            beta,
            m: f64::INFINITY,
            m_count: 0,
            mk: f64::INFINITY,
            mk_count: 0,
            w: 0.0,
            d: 0.0,
            db: 0.0,
            pop: 0,
        }
    }

    #[inline]
    fn push(&mut self, x: f64, pmin: f64, renewal: Option<&RenewalFunction>) {
        self.pop += 1;
        if x < self.m {
            self.m = x;
            self.m_count = 1;
        } else if x == self.m {
            self.m_count += 1;
        }
        if pmin >= 0.0 {
            if x < self.mk {
                self.mk = x;
                self.mk_count = 1;
            } else if x == self.mk {
                self.mk_count += 1;
            }
        }
        let e = (-x).exp();
        self.w += e;
        self.d += x * e;
        if let Some(r) = renewal {
            if pmin >= -self.beta {
                self.db += r.eval(self.beta + x) * e;
            }
        }
    }

    fn finish(
        self,
        generation: usize,
        renewal: Option<&RenewalFunction>,
        ledger: &PruneLedger,
        status: RunStatus,
    ) -> TreeRunStats {
        TreeRunStats {
            generation,
            m_n: self.m,
            m_n_kill: self.mk,
            argmin_count: self.m_count,
            argmin_count_kill: self.mk_count,
            w_n: self.w,
            d_n: self.d,
            d_n_beta: if renewal.is_some() { self.db } else { f64::NAN },
            population: self.pop,
            survived: self.pop > 0,
            pruned_mass_bound: ledger.mass,
            pruned_d_bound: ledger.abs_v_mass,
            pruned_count: ledger.count,
            status,
        }
    }
}

impl Frontier {
    /// Statistics of this generation.
    pub fn stats(&self, renewal: Option<&RenewalFunction>, ledger: &PruneLedger) -> TreeRunStats {
        let mut acc = StatsAcc::new(self.beta);
        for i in 0..self.len() {
            acc.push(self.positions[i], self.path_min[i], renewal);
        }
        acc.finish(self.generation, renewal, ledger, RunStatus::Complete)
    }
}

/// Runs one tree to generation `n` and returns its statistics.
pub fn run_tree(
    model: &PointProcessModel,
    n: usize,
    beta: f64,
    policy: &PrunePolicy,
    renewal: Option<&RenewalFunction>,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<TreeRunStats> {
    Ok(run_tree_observed(model, &[n], beta, policy, renewal, caps, rng)?.remove(0))
}

/// Runs one tree and reports statistics at each generation in `observe`
/// (increasing). Pruning uses the largest observed generation as horizon.
/// On population overflow the remaining observations repeat the last
/// complete generation with an overflow status.
pub fn run_tree_observed(
    model: &PointProcessModel,
    observe: &[usize],
    beta: f64,
    policy: &PrunePolicy,
    renewal: Option<&RenewalFunction>,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<Vec<TreeRunStats>> {
    if beta < 0.0 {
        return Err(Error::invalid("beta must be non-negative"));
    }
    run_from(
        model,
        Frontier::root(0.0, beta),
        observe,
        policy,
        renewal,
        caps,
        rng,
    )
}

/// Runs the descendants of one particle to absolute generation `n`.
/// `root` is typically built with [`Frontier::rooted`]; pruning uses `n` as
/// horizon, so cutoffs match those of a whole tree of depth `n`.
pub fn run_subtree(
    model: &PointProcessModel,
    root: Frontier,
    n: usize,
    policy: &PrunePolicy,
    renewal: Option<&RenewalFunction>,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<TreeRunStats> {
    Ok(run_from(model, root, &[n], policy, renewal, caps, rng)?.remove(0))
}

fn run_from(
    model: &PointProcessModel,
    root: Frontier,
    observe: &[usize],
    policy: &PrunePolicy,
    renewal: Option<&RenewalFunction>,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<Vec<TreeRunStats>> {
    if observe.is_empty()
        || observe.windows(2).any(|w| w[0] >= w[1])
        || observe[0] < root.generation
    {
        return Err(Error::invalid("observation generations must be increasing"));
    }
    let beta = root.beta;
    let horizon = *observe.last().unwrap();
    let mut out = Vec::with_capacity(observe.len());
    let mut ledger = PruneLedger::default();
    let mut cur = root;
    let mut next = Frontier::default();
    let mut buf = Vec::new();
    let mut obs = observe.iter().copied().peekable();
    while let Some(&target) = obs.peek() {
        if cur.generation == target {
            out.push(cur.stats(renewal, &ledger));
            obs.next();
            continue;
        }
        if cur.generation + 1 == horizon {
            // last generation: accumulate children without storing them
            let cutoff = policy.cutoff(horizon);
            let mut acc = StatsAcc::new(beta);
            for i in 0..cur.len() {
                let (x0, pmin) = (cur.positions[i], cur.path_min[i]);
                model.sample_into(rng, &mut buf)?;
                for &d in &buf {
                    let x = x0 + d;
                    if x > cutoff {
                        if policy.track_bias {
                            ledger.record(x);
                        }
                        continue;
                    }
                    acc.push(x, pmin.min(x), renewal);
                }
            }
            out.push(acc.finish(horizon, renewal, &ledger, RunStatus::Complete));
            obs.next();
            continue;
        }
        match cur.evolve_into(
            &mut next,
            model,
            policy,
            horizon,
            caps,
            &mut ledger,
            rng,
            &mut buf,
        ) {
            Ok(()) => std::mem::swap(&mut cur, &mut next),
            Err(Error::PopulationOverflow { generation, .. }) => {
                let mut last = cur.stats(renewal, &ledger);
                last.status = RunStatus::Overflow { generation };
                for _ in obs.by_ref() {
                    out.push(last.clone());
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Executor;
    use crate::rng::SeedRecord;
    use crate::stats::Moments;

    fn rng(i: u64) -> SimRng {
        SeedRecord::new(77).derive("brw").rng(i)
    }

    #[test]
    fn binary_population_doubles() {
        let m = PointProcessModel::binary_gaussian();
        let caps = Caps::default();
        let mut ledger = PruneLedger::default();
        let mut f = Frontier::root(0.0, 1.0);
        let mut r = rng(0);
        f = evolve(&f, &m, &PrunePolicy::none(), 10, &caps, &mut ledger, &mut r).unwrap();
        assert_eq!(f.len(), 2);
        for _ in 1..10 {
            f = evolve(&f, &m, &PrunePolicy::none(), 10, &caps, &mut ledger, &mut r).unwrap();
            assert!(f.is_consistent());
        }
        assert_eq!(f.len(), 1024);
        assert_eq!(f.generation, 10);
    }

    #[test]
    fn root_statistics() {
        let m = PointProcessModel::binary_gaussian();
        let s = run_tree(
            &m,
            0,
            0.0,
            &PrunePolicy::none(),
            None,
            &Caps::default(),
            &mut rng(1),
        )
        .unwrap();
        assert_eq!((s.m_n, s.w_n, s.d_n, s.m_n_kill), (0.0, 1.0, 0.0, 0.0));
        assert_eq!(s.argmin_count, 1);
    }

    #[test]
    fn single_child_tree_is_static() {
        let m = PointProcessModel::single_child("one-child-zero", 0.0);
        let s = run_tree(
            &m,
            25,
            0.0,
            &PrunePolicy::none(),
            None,
            &Caps::default(),
            &mut rng(1),
        )
        .unwrap();
        assert_eq!((s.population, s.m_n, s.w_n, s.d_n), (1, 0.0, 1.0, 0.0));
    }

    #[test]
    fn killed_minimum_dominates() {
        let m = PointProcessModel::binary_gaussian();
        for i in 0..200 {
            let s = run_tree(
                &m,
                8,
                0.0,
                &PrunePolicy::none(),
                None,
                &Caps::default(),
                &mut rng(i),
            )
            .unwrap();
            assert!(s.m_n_kill >= s.m_n.max(0.0));
        }
    }

    #[test]
    fn overflow_is_reported() {
        let m = PointProcessModel::binary_gaussian();
        let caps = Caps {
            max_population: 100,
            ..Caps::default()
        };
        let s = run_tree(&m, 10, 0.0, &PrunePolicy::none(), None, &caps, &mut rng(1)).unwrap();
        assert_eq!(s.status, RunStatus::Overflow { generation: 7 });
        assert_eq!(s.population, 64);
    }

    #[test]
    fn observed_generations_match_separate_runs() {
        let m = PointProcessModel::binary_gaussian();
        let p = PrunePolicy::none();
        let c = Caps::default();
        let both = run_tree_observed(&m, &[4, 7], 0.0, &p, None, &c, &mut rng(3)).unwrap();
        let single = run_tree(&m, 7, 0.0, &p, None, &c, &mut rng(3)).unwrap();
        assert_eq!(both[1].m_n, single.m_n);
        assert_eq!(both[1].w_n, single.w_n);
        assert_eq!(both[1].population, 128);
        assert_eq!(both[0].population, 16);
    }

    #[test]
    fn additive_martingale_mean_is_one() {
        let m = PointProcessModel::binary_gaussian();
        let r = Executor::sequential()
            .run(
                4000,
                500,
                &SeedRecord::new(5),
                || (Moments::new(), Moments::new()),
                |acc, _, rng| {
                    let s = run_tree(
                        &m,
                        8,
                        0.0,
                        &PrunePolicy::none(),
                        None,
                        &Caps::default(),
                        rng,
                    )?;
                    acc.0.push(s.w_n);
                    acc.1.push(s.d_n);
                    Ok(())
                },
            )
            .unwrap();
        let seed = SeedRecord::new(5);
        assert!(r.acc.0.estimate(seed, "w").within_sigmas(1.0, 4.0));
        assert!(r.acc.1.estimate(seed, "d").within_sigmas(0.0, 4.0));
    }
}
