use serde::{Deserialize, Serialize};

use super::{run_spine_path, SpineRealization};
use crate::brw_engine::{Caps, PruneLedger, PrunePolicy};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::PointProcessModel;
use crate::rng::{SeedRecord, SimRng};
use crate::stats::{EstimateWithCI, Moments};
use crate::util::a_n;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "barrier", rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// Only the terminal window and the killing at 0.
    None,
    /// Barrier 0 up to generation `n/2`, then `max(a_n(z + L + 1), 0)`.
    Zzl,
    /// Explicit barrier `d_0..d_n`.
    Custom(Vec<f64>),
}

/// Constraint on the path of a generation-`n` particle `u`: `V(u)` in the
/// window `[a_n(z) - 1, a_n(z))` and `V(u_k) >= max(d_k, 0)` for all `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConstraint {
    pub z: f64,
    pub l: f64,
    pub n: usize,
    pub kind: ConstraintKind,
}

/// The barrier `d_k(n, z, lambda)`.
pub fn barrier_dk(n: usize, z: f64, lambda: f64, k: usize) -> f64 {
    if (k as f64) <= lambda * n as f64 {
        0.0
    } else {
        a_n(n, z + 1.0).max(0.0)
    }
}

impl PathConstraint {
    pub fn none(n: usize, z: f64) -> Self {
        PathConstraint {
            z,
            l: 0.0,
            n,
            kind: ConstraintKind::None,
        }
    }

    pub fn zzl(n: usize, z: f64, l: f64) -> Self {
        PathConstraint {
            z,
            l,
            n,
            kind: ConstraintKind::Zzl,
        }
    }

    pub fn custom(n: usize, z: f64, barrier: Vec<f64>) -> Result<Self> {
        if barrier.len() != n + 1 || barrier.iter().any(|d| d.is_nan()) {
            return Err(Error::invalid("custom barrier needs n + 1 values"));
        }
        Ok(PathConstraint {
            z,
            l: 0.0,
            n,
            kind: ConstraintKind::Custom(barrier),
        })
    }

    /// Effective barrier `max(d_k, 0)` for `k = 0..=n`.
    pub fn barrier(&self) -> Vec<f64> {
        (0..=self.n)
            .map(|k| match &self.kind {
                ConstraintKind::None => 0.0,
                ConstraintKind::Zzl => barrier_dk(self.n, self.z + self.l, 0.5, k),
                ConstraintKind::Custom(d) => d[k].max(0.0),
            })
            .collect()
    }

    /// `[a_n(z) - 1, a_n(z))`
    pub fn window(&self) -> (f64, f64) {
        let a = a_n(self.n, self.z);
        (a - 1.0, a)
    }

    /// Whether a path `V(u_0..u_n)` satisfies the constraint.
    pub fn admits(&self, path: &[f64]) -> bool {
        if path.len() != self.n + 1 {
            return false;
        }
        let (lo, hi) = self.window();
        let end = path[self.n];
        end >= lo && end < hi && path.iter().zip(self.barrier()).all(|(&x, d)| x >= d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.z >= 0.0 && self.l >= 0.0) {
            return Err(Error::invalid("constraint needs z >= 0 and L >= 0"));
        }
        if self.n == 0 {
            return Err(Error::invalid("constraint needs n >= 1"));
        }
        Ok(())
    }
}

/// Outcome of the killed-minimum search for one marked tree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KilledSample {
    pub spine_end: f64,
    /// The spine path left `[0, inf)`; the integrand is 0.
    pub spine_killed: bool,
    /// Some other killed particle of generation `n` lies strictly below the
    /// spine leaf.
    pub beaten: bool,
    /// Killed particles of generation `n` at the spine leaf's position,
    /// the leaf included.
    pub ties: u64,
    pub pruned_mass: f64,
}

impl KilledSample {
    /// `exp(V(w_n)) 1{V(w_n) = M_n^kill} / #argmin`, before the path
    /// constraint.
    pub fn weight(&self) -> f64 {
        if self.spine_killed || self.beaten {
            0.0
        } else {
            self.spine_end.exp() / self.ties as f64
        }
    }
}

enum Search {
    Beaten,
    Ties(u64),
}

/// Killed descendants of a particle at `x` in generation `g`, searched for a
/// generation-`n` position below `t`.
#[allow(clippy::too_many_arguments)]
fn search_below(
    model: &PointProcessModel,
    x: f64,
    g: usize,
    n: usize,
    t: f64,
    cutoff: f64,
    caps: &Caps,
    ledger: &mut PruneLedger,
    rng: &mut SimRng,
    buf: &mut Vec<f64>,
) -> Result<Search> {
    if g == n {
        return Ok(if x < t {
            Search::Beaten
        } else {
            Search::Ties(u64::from(x == t))
        });
    }
    let mut ties = 0;
    let mut cur = vec![x];
    let mut next = Vec::new();
    for gen in g + 1..=n {
        next.clear();
        for &x0 in &cur {
            model.sample_into(rng, buf)?;
            for &d in buf.iter() {
                let y = x0 + d;
                if y < 0.0 {
                    continue;
                }
                if gen == n {
                    if y < t {
                        return Ok(Search::Beaten);
                    }
                    ties += u64::from(y == t);
                } else if y > cutoff {
                    ledger.count += 1;
                    ledger.mass += (-y).exp();
                    ledger.abs_v_mass += y * (-y).exp();
                } else {
                    next.push(y);
                }
            }
            if next.len() > caps.max_population {
                return Err(Error::PopulationOverflow {
                    generation: gen,
                    population: next.len(),
                    cap: caps.max_population,
                });
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Search::Ties(ties))
}

/// Decides whether the spine leaf of `real` is a minimum of the BRW killed
/// below 0 at generation `n`. Sibling subtrees are searched from the latest
/// generation back and the search stops at the first lower particle.
pub fn killed_integrand(
    model: &PointProcessModel,
    real: &SpineRealization,
    policy: &PrunePolicy,
    caps: &Caps,
    rng: &mut SimRng,
) -> Result<KilledSample> {
    let n = real.depth();
    let t = real.spine_end();
    let mut out = KilledSample {
        spine_end: t,
        spine_killed: real.spine_min() < 0.0,
        beaten: false,
        ties: 1,
        pruned_mass: 0.0,
    };
    if out.spine_killed {
        return Ok(out);
    }
    let cutoff = policy.cutoff(n);
    let mut ledger = PruneLedger::default();
    let mut buf = Vec::new();
    'outer: for rec in real.sibling_records.iter().rev() {
        for &x in &rec.positions {
            if x < 0.0 {
                continue;
            }
            match search_below(
                model,
                x,
                rec.generation,
                n,
                t,
                cutoff,
                caps,
                &mut ledger,
                rng,
                &mut buf,
            )? {
                Search::Beaten => {
                    out.beaten = true;
                    break 'outer;
                }
                Search::Ties(c) => out.ties += c,
            }
        }
    }
    out.pruned_mass = ledger.mass;
    Ok(out)
}

/// A spine-estimator campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpineEstimate {
    pub estimate: EstimateWithCI,
    /// Replications whose spine satisfied the constraint.
    pub admitted: u64,
    /// Admitted replications where another particle was lower.
    pub beaten: u64,
    /// Replications whose spine was killed, which covers every replication
    /// with an empty killed population; they contribute 0.
    pub spine_killed: u64,
    /// Mean pruned mass per replication.
    pub pruned_mass: f64,
    pub completed: u64,
    pub partial: bool,
}

/// Unbiased estimate of `P(M_n^kill in I_n(z), argmin satisfies the
/// constraint)` from marked trees: each replication contributes
/// `exp(V(w_n)) 1{V(w_n) = M_n^kill} / #argmin` when the spine path is
/// admitted, else 0.
#[allow(clippy::too_many_arguments)]
pub fn killed_min_estimator(
    model: &PointProcessModel,
    constraint: &PathConstraint,
    replications: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<SpineEstimate> {
    constraint.validate()?;
    if replications == 0 {
        return Err(Error::invalid("no replications"));
    }
    let n = constraint.n;
    let seed = seed
        .derive("spine-killed")
        .derive_index(n as u64)
        .derive(&format!("{:?}", (constraint.z, constraint.l)));
    if constraint.window().1 <= 0.0 {
        // the killed walk never visits the window
        return Ok(SpineEstimate {
            estimate: EstimateWithCI::exact(0.0, seed, "spine"),
            admitted: 0,
            beaten: 0,
            spine_killed: 0,
            pruned_mass: 0.0,
            completed: replications,
            partial: false,
        });
    }
    let r = exec.run(
        replications,
        1024,
        &seed,
        || (Moments::new(), 0u64, 0u64, 0u64, 0.0f64),
        |acc, _, rng| {
            let real = run_spine_path(model, n, rng)?;
            if real.spine_min() < 0.0 {
                acc.3 += 1;
            }
            if !constraint.admits(&real.spine_positions) {
                acc.0.push(0.0);
                return Ok(());
            }
            acc.1 += 1;
            let s = killed_integrand(model, &real, policy, caps, rng)?;
            acc.2 += u64::from(s.beaten);
            acc.4 += s.pruned_mass;
            acc.0.push(s.weight());
            Ok(())
        },
    )?;
    let (m, admitted, beaten, killed, pruned) = r.acc;
    Ok(SpineEstimate {
        estimate: m.estimate(seed, "spine"),
        admitted,
        beaten,
        spine_killed: killed,
        pruned_mass: pruned / r.completed.max(1) as f64,
        completed: r.completed,
        partial: r.partial,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KilledTailRow {
    pub z: f64,
    /// `(3/2) ln n - z`
    pub level: f64,
    /// `P(M_n^kill < level)`
    pub p: EstimateWithCI,
    /// `exp(z) P(M_n^kill < level)`
    pub scaled: EstimateWithCI,
    /// `P(M_n^kill in I_n(z + k))` for `k = 0, 1, ...` while the window
    /// meets `[0, inf)`; `p` is their sum, taken per replication.
    pub windows: Vec<EstimateWithCI>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KilledTailReport {
    pub n: usize,
    pub replications: u64,
    pub completed: u64,
    pub partial: bool,
    pub model_hash: String,
    pub seed: SeedRecord,
    pub rows: Vec<KilledTailRow>,
    /// Replications with an admitted spine (leaf in `[0, max level)`).
    pub admitted: u64,
    pub spine_killed: u64,
    pub pruned_mass: f64,
}

/// `P(M_n^kill < a_n(z))` for every `z` of the grid from one spine campaign,
/// as the sum of the window probabilities `P(M_n^kill in I_n(z + k))`.
#[allow(clippy::too_many_arguments)]
pub fn killed_cumulative_tail(
    model: &PointProcessModel,
    n: usize,
    z_grid: &[f64],
    replications: u64,
    policy: &PrunePolicy,
    caps: &Caps,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<KilledTailReport> {
    if z_grid.is_empty() || z_grid.iter().any(|z| !(*z >= 0.0)) {
        return Err(Error::invalid("z grid must be non-empty and non-negative"));
    }
    if n == 0 || replications == 0 {
        return Err(Error::invalid("need n >= 1 and replications >= 1"));
    }
    let seed = seed.derive("spine-killed-tail").derive_index(n as u64);
    let levels: Vec<f64> = z_grid.iter().map(|&z| a_n(n, z)).collect();
    let windows: Vec<usize> = levels
        .iter()
        .map(|&a| if a > 0.0 { a.ceil() as usize } else { 0 })
        .collect();
    let top = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = z_grid.len();
    let offsets: Vec<usize> = windows
        .iter()
        .scan(0, |s, &w| {
            let o = *s;
            *s += w;
            Some(o)
        })
        .collect();
    let total_windows: usize = windows.iter().sum();
    let r = exec.run(
        replications,
        1024,
        &seed,
        || (vec![Moments::new(); k + total_windows], 0u64, 0u64, 0.0f64),
        |acc, _, rng| {
            let real = run_spine_path(model, n, rng)?;
            let t = real.spine_end();
            let killed = real.spine_min() < 0.0;
            acc.2 += u64::from(killed);
            let weight = if !killed && t < top {
                acc.1 += 1;
                let s = killed_integrand(model, &real, policy, caps, rng)?;
                acc.3 += s.pruned_mass;
                s.weight()
            } else {
                0.0
            };
            for i in 0..k {
                let a = levels[i];
                acc.0[i].push(if t < a { weight } else { 0.0 });
                for j in 0..windows[i] {
                    let hi = a - j as f64;
                    let inside = t < hi && t >= hi - 1.0;
                    acc.0[k + offsets[i] + j].push(if inside { weight } else { 0.0 });
                }
            }
            Ok(())
        },
    )?;
    let (m, admitted, spine_killed, pruned) = r.acc;
    let rows = z_grid
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let p = if levels[i] <= 0.0 {
                EstimateWithCI::exact(0.0, seed, "spine")
            } else {
                m[i].estimate(seed, "spine")
            };
            KilledTailRow {
                z,
                level: levels[i],
                scaled: p.scaled(z.exp()),
                p,
                windows: (0..windows[i])
                    .map(|j| m[k + offsets[i] + j].estimate(seed, "spine"))
                    .collect(),
            }
        })
        .collect();
    Ok(KilledTailReport {
        n,
        replications,
        completed: r.completed,
        partial: r.partial,
        model_hash: model.model_hash().to_string(),
        seed,
        rows,
        admitted,
        spine_killed,
        pruned_mass: pruned / r.completed.max(1) as f64,
    })
}
