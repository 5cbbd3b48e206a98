use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WalkModel;
use crate::error::{Error, Result};
use crate::exec::{Accumulate, Executor};
use crate::rng::{SeedRecord, SimRng};
use crate::stats::{EstimateWithCI, Moments};

pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

const MAGIC: &[u8; 4] = b"BRWL";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderOptions {
    /// Walks still above their start after this many steps are discarded
    /// and redrawn.
    pub step_cap: u64,
    /// Largest tolerated fraction of discarded walks per side.
    pub max_cap_fraction: f64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        LadderOptions {
            step_cap: DEFAULT_STEP_CAP,
            max_cap_fraction: 1e-3,
        }
    }
}

/// First strict descending ladder samples of `S` and of `-S`.
///
/// Pairs are sorted by height; `heights[i]` and `epochs[i]` come from the
/// same walk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderTable {
    pub heights: Vec<f64>,
    pub epochs: Vec<u64>,
    pub heights_minus: Vec<f64>,
    pub epochs_minus: Vec<u64>,
    pub budget: u64,
    pub step_cap: u64,
    /// Discarded capped walks per side; unknown for tables read from cache.
    pub cap_events: Option<(u64, u64)>,
}

/// One first ladder epoch of `sign * S`: `(|H_1|, T_1)`, or `None` at the cap.
#[inline]
fn first_descent(walk: &WalkModel, sign: f64, cap: u64, rng: &mut SimRng) -> Option<(f64, u64)> {
    let mut s = 0.0;
    for k in 1..=cap {
        s += sign * walk.step(rng);
        if s < 0.0 {
            return Some((-s, k));
        }
    }
    None
}

#[derive(Default)]
struct Side {
    pairs: Vec<(f64, u64)>,
    capped: u64,
}

impl Accumulate for Side {
    fn merge(&mut self, mut other: Self) {
        self.pairs.append(&mut other.pairs);
        self.capped += other.capped;
    }
}

fn sample_side(
    walk: &WalkModel,
    sign: f64,
    budget: u64,
    opts: &LadderOptions,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<Side> {
    let allowed = (opts.max_cap_fraction * budget as f64).floor() as u64;
    let r = exec.run(budget, 4096, seed, Side::default, |acc, _, rng| loop {
        match first_descent(walk, sign, opts.step_cap, rng) {
            Some(p) => {
                acc.pairs.push(p);
                return Ok(());
            }
            None => {
                acc.capped += 1;
                if acc.capped > allowed {
                    return Err(Error::StepCapExceeded {
                        events: acc.capped,
                        allowed,
                        cap: opts.step_cap,
                    });
                }
            }
        }
    })?;
    if r.partial {
        return Err(Error::invalid("ladder table construction was cancelled"));
    }
    let mut side = r.acc;
    if side.capped > allowed {
        return Err(Error::StepCapExceeded {
            events: side.capped,
            allowed,
            cap: opts.step_cap,
        });
    }
    side.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(side)
}

/// Samples `budget` first-ladder pairs for `S` and for `-S`.
pub fn build_ladder_table(
    walk: &WalkModel,
    budget: u64,
    opts: &LadderOptions,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<LadderTable> {
    if budget < 1000 {
        return Err(Error::invalid(format!(
            "ladder table needs a budget of at least 10^3, got {budget}"
        )));
    }
    if opts.step_cap == 0 {
        return Err(Error::invalid("step cap must be positive"));
    }
    let seed = seed.derive("ladder");
    let plus = sample_side(walk, 1.0, budget, opts, &seed.derive("S"), exec)?;
    let minus = sample_side(walk, -1.0, budget, opts, &seed.derive("-S"), exec)?;
    let (heights, epochs) = plus.pairs.into_iter().unzip();
    let (heights_minus, epochs_minus) = minus.pairs.into_iter().unzip();
    Ok(LadderTable {
        heights,
        epochs,
        heights_minus,
        epochs_minus,
        budget,
        step_cap: opts.step_cap,
        cap_events: Some((plus.capped, minus.capped)),
    })
}

impl LadderTable {
    pub fn mean_height(&self, seed: SeedRecord) -> EstimateWithCI {
        let mut m = Moments::new();
        self.heights.iter().for_each(|&h| m.push(h));
        m.estimate(seed, "ladder-mean-height")
    }

    pub fn mean_height_minus(&self, seed: SeedRecord) -> EstimateWithCI {
        let mut m = Moments::new();
        self.heights_minus.iter().for_each(|&h| m.push(h));
        m.estimate(seed, "ladder-mean-height-minus")
    }

    /// `1 / E|H_1|` with a delta-method standard error.
    pub fn c0_from_heights(&self, seed: SeedRecord) -> EstimateWithCI {
        let h = self.mean_height(seed);
        EstimateWithCI {
            value: 1.0 / h.value,
            stderr: h.stderr / (h.value * h.value),
            count: h.count,
            seed,
            estimator_kind: "inverse-mean-ladder-height".into(),
        }
    }

    /// Empirical `P(T_1 > n)` for `S`.
    pub fn epoch_survival(&self, n: u64) -> f64 {
        self.epochs.iter().filter(|&&t| t > n).count() as f64 / self.epochs.len() as f64
    }

    /// Cache file name for a table keyed by model, seed, budget and cap.
    pub fn cache_path(
        dir: &Path,
        model_hash: &str,
        seed: &SeedRecord,
        budget: u64,
        cap: u64,
    ) -> PathBuf {
        dir.join(format!(
            "ladder-{model_hash}-{:016x}{:016x}-{budget}-{cap}.brwl",
            seed.master, seed.stream
        ))
    }

    /// Little-endian layout: `"BRWL"`, version `u32`, pair count `u64`, then
    /// `count` pairs `(height f64, epoch f64)` for `S` followed by `count`
    /// pairs for `-S`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let count = self.heights.len() as u64;
        let mut out = Vec::with_capacity(16 + 32 * self.heights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (h, t) in self
            .heights
            .iter()
            .zip(&self.epochs)
            .chain(self.heights_minus.iter().zip(&self.epochs_minus))
        {
            out.extend_from_slice(&h.to_le_bytes());
            out.extend_from_slice(&(*t as f64).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], step_cap: u64) -> Result<Self> {
        let bad = |m: &str| Error::CacheFormat(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing BRWL magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if count.checked_mul(32) != Some(body.len() as u64) {
            return Err(bad("length does not match pair count"));
        }
        let read = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap());
        let n = count as usize;
        let mut t = LadderTable {
            heights: Vec::with_capacity(n),
            epochs: Vec::with_capacity(n),
            heights_minus: Vec::with_capacity(n),
            epochs_minus: Vec::with_capacity(n),
            budget: count,
            step_cap,
            cap_events: None,
        };
        for i in 0..2 * n {
            let (h, e) = (read(2 * i), read(2 * i + 1));
            if !(h > 0.0) || !(e >= 1.0) || e.fract() != 0.0 {
                return Err(bad("ladder pair out of range"));
            }
            if i < n {
                t.heights.push(h);
                t.epochs.push(e as u64);
            } else {
                t.heights_minus.push(h);
                t.epochs_minus.push(e as u64);
            }
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, step_cap: u64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        LadderTable::from_bytes(&bytes, step_cap)
    }

    /// Loads the cached table for this key, or builds and caches it.
    pub fn load_or_build(
        dir: &Path,
        model_hash: &str,
        walk: &WalkModel,
        budget: u64,
        opts: &LadderOptions,
        seed: &SeedRecord,
        exec: &Executor,
    ) -> Result<Self> {
        let path = LadderTable::cache_path(dir, model_hash, seed, budget, opts.step_cap);
        if path.exists() {
            return LadderTable::load(&path, opts.step_cap);
        }
        let t = build_ladder_table(walk, budget, opts, seed, exec)?;
        t.save(&path)?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_two_sample;
    use std::f64::consts::LN_2;

    fn table(budget: u64) -> LadderTable {
        let w = WalkModel::gaussian(2.0 * LN_2).unwrap();
        let opts = LadderOptions {
            step_cap: 1_000_000,
            ..LadderOptions::default()
        };
        build_ladder_table(
            &w,
            budget,
            &opts,
            &SeedRecord::new(11),
            &Executor::sequential(),
        )
        .unwrap()
    }

    #[test]
    fn table_shape_and_symmetry() {
        let t = table(20_000);
        assert_eq!(t.heights.len(), 20_000);
        assert_eq!(t.heights_minus.len(), 20_000);
        assert!(t.heights.iter().all(|&h| h > 0.0));
        assert!(t.epochs.iter().all(|&e| e >= 1));
        assert!(t.heights.windows(2).all(|w| w[0] <= w[1]));
        let ks = ks_two_sample(&t.heights, &t.heights_minus);
        assert!(ks.p_value > 0.01, "{ks:?}");
        // symmetric walk: E|H_1| = sigma / sqrt 2
        let h = t.mean_height(SeedRecord::new(0));
        assert!(h.within_sigmas(LN_2.sqrt(), 4.0), "{h:?}");
        // P(T_1 > n) = C(2n,n) 4^-n for symmetric continuous walks
        let p = t.epoch_survival(10);
        let exact = crate::stats::central_binomial_prob(10);
        let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((p - exact).abs() < 4.0 * se);
    }

    #[test]
    fn degenerate_walk_hits_cap() {
        let m = crate::offspring::PointProcessModel::single_child("one-child-zero", 0.0);
        let w = super::super::derive_walk(&m).unwrap();
        let opts = LadderOptions {
            step_cap: 50,
            ..LadderOptions::default()
        };
        let e = build_ladder_table(
            &w,
            1000,
            &opts,
            &SeedRecord::new(1),
            &Executor::sequential(),
        );
        assert!(matches!(e, Err(Error::StepCapExceeded { .. })));
    }

    #[test]
    fn cache_round_trip() {
        let t = table(1000);
        let dir = tempfile::tempdir().unwrap();
        let p = LadderTable::cache_path(dir.path(), "abc", &SeedRecord::new(1), 1000, t.step_cap);
        t.save(&p).unwrap();
        let back = LadderTable::load(&p, t.step_cap).unwrap();
        assert_eq!(back.heights, t.heights);
        assert_eq!(back.epochs, t.epochs);
        assert_eq!(back.heights_minus, t.heights_minus);
        assert_eq!(back.cap_events, None);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"BRWL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1000);
        assert_eq!(bytes.len(), 16 + 32 * 1000);
        assert!(LadderTable::from_bytes(&bytes[..100], 1).is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(LadderTable::from_bytes(&corrupt, 1).is_err());
    }
}
