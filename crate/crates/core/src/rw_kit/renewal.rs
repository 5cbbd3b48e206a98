use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::LadderTable;
use crate::error::{Error, Result};
use crate::exec::{Accumulate, Executor};
use crate::rng::{SeedRecord, SimRng};
use crate::stats::{EstimateWithCI, Moments};

pub const DEFAULT_GRID_STEP: f64 = 0.05;

/// Which walk the renewal function belongs to: `S` gives `R`, `-S` gives
/// `R_-`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn heights(self, table: &LadderTable) -> &[f64] {
        match self {
            Side::Plus => &table.heights,
            Side::Minus => &table.heights_minus,
        }
    }
}

#[inline]
fn draw(heights: &[f64], rng: &mut SimRng) -> f64 {
    heights[rng.random_range(0..heights.len())]
}

/// `R(x)` on a regular grid, from ladder-height renewal paths resampled from
/// a [`LadderTable`]. `R(x) = 1 + E #{k >= 1 : |H_1| + ... + |H_k| <= x}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalFunction {
    pub side: Side,
    pub step: f64,
    /// `values[i]` estimates `R(i * step)`; `values[0] == 1`.
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Asymptotic slope from the count increment over `[x_max/2, x_max]`.
    pub c0_hat: EstimateWithCI,
    pub paths: u64,
}

struct GridAcc {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    slope: Moments,
}

impl Accumulate for GridAcc {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        self.slope.merge(&other.slope);
    }
}

impl RenewalFunction {
    pub fn build(
        table: &LadderTable,
        side: Side,
        x_max: f64,
        step: f64,
        paths: u64,
        seed: &SeedRecord,
        exec: &Executor,
    ) -> Result<Self> {
        if !(step > 0.0 && x_max >= step) || paths < 2 {
            return Err(Error::invalid(
                "renewal grid needs step > 0, x_max >= step and at least two paths",
            ));
        }
        let heights = side.heights(table);
        if heights.is_empty() {
            return Err(Error::invalid("empty ladder table"));
        }
        let bins = (x_max / step).round() as usize;
        let x_max = bins as f64 * step;
        let half = bins / 2;
        let seed = seed.derive("renewal-grid");
        let r = exec.run(
            paths,
            1024,
            &seed,
            || GridAcc {
                sum: vec![0.0; bins + 1],
                sumsq: vec![0.0; bins + 1],
                slope: Moments::new(),
            },
            |acc, _, rng| {
                let mut hist = vec![0u32; bins + 1];
                let mut s = draw(heights, rng);
                while s <= x_max {
                    // s > 0, so the bin index is at least 1
                    let j = ((s / step).ceil() as usize).min(bins);
                    hist[j] += 1;
                    s += draw(heights, rng);
                }
                let mut count = 0.0;
                for (j, h) in hist.iter().enumerate() {
                    count += f64::from(*h);
                    acc.sum[j] += count;
                    acc.sumsq[j] += count * count;
                }
                let mut at_half = 0.0;
                for h in &hist[..=half] {
                    at_half += f64::from(*h);
                }
                acc.slope
                    .push((count - at_half) / (x_max - half as f64 * step));
                Ok(())
            },
        )?;
        let n = r.completed as f64;
        let values = r.acc.sum.iter().map(|s| 1.0 + s / n).collect();
        let stderr = r
            .acc
            .sum
            .iter()
            .zip(&r.acc.sumsq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0) / (n - 1.0)).sqrt()
            })
            .collect();
        Ok(RenewalFunction {
            side,
            step,
            values,
            stderr,
            c0_hat: r.acc.slope.estimate(seed, "renewal-slope"),
            paths: r.completed,
        })
    }

    pub fn x_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| i as f64 * self.step)
    }

    /// `R(x)`: 0 below 0, 1 at 0, linear interpolation on the grid and
    /// extrapolation with slope `c0_hat` past its end.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return 1.0;
        }
        let last = self.values.len() - 1;
        let t = x / self.step;
        if t >= last as f64 {
            return self.values[last] + self.c0_hat.value * (x - self.x_max());
        }
        let i = t as usize;
        let f = t - i as f64;
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    pub fn stderr_at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let i = ((x / self.step).round() as usize).min(self.values.len() - 1);
        self.stderr[i]
    }

    /// `max R(x) / (1 + x)` over the grid.
    pub fn slope_bound(&self) -> f64 {
        self.grid()
            .zip(&self.values)
            .map(|(x, v)| v / (1.0 + x))
            .fold(0.0, f64::max)
    }
}

fn estimate_by_paths(
    table: &LadderTable,
    side: Side,
    paths: u64,
    seed: SeedRecord,
    kind: &str,
    exec: &Executor,
    f: impl Fn(&[f64], &mut SimRng) -> f64 + Sync,
) -> Result<EstimateWithCI> {
    let heights = side.heights(table);
    if heights.is_empty() {
        return Err(Error::invalid("empty ladder table"));
    }
    let r = exec.run(paths, 4096, &seed, Moments::new, |m, _, rng| {
        m.push(f(heights, rng));
        Ok(())
    })?;
    Ok(r.acc.estimate(seed, kind))
}

fn renewal_at(
    table: &LadderTable,
    side: Side,
    x: f64,
    paths: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<EstimateWithCI> {
    let seed = seed.derive("renewal-point");
    if x < 0.0 {
        return Ok(EstimateWithCI::exact(0.0, seed, "renewal-convention"));
    }
    if x == 0.0 {
        return Ok(EstimateWithCI::exact(1.0, seed, "renewal-convention"));
    }
    estimate_by_paths(
        table,
        side,
        paths,
        seed,
        "renewal-resampled",
        exec,
        |h, rng| {
            let mut count = 1.0;
            let mut s = draw(h, rng);
            while s <= x {
                count += 1.0;
                s += draw(h, rng);
            }
            count
        },
    )
}

/// `R(x)` by direct resampling of ladder-height renewal paths.
pub fn renewal_r(
    table: &LadderTable,
    x: f64,
    paths: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<EstimateWithCI> {
    renewal_at(table, Side::Plus, x, paths, seed, exec)
}

/// `R_-(x)`, the renewal function of `-S`.
pub fn renewal_r_minus(
    table: &LadderTable,
    x: f64,
    paths: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<EstimateWithCI> {
    renewal_at(table, Side::Minus, x, paths, seed, exec)
}

/// `int_0^a R(x) dx`, estimated per path as `sum_{k >= 0} (a - s_k)+`.
pub fn renewal_integral(
    table: &LadderTable,
    side: Side,
    a: f64,
    paths: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<EstimateWithCI> {
    let seed = seed.derive("renewal-integral");
    if a <= 0.0 {
        return Ok(EstimateWithCI::exact(0.0, seed, "renewal-integral"));
    }
    estimate_by_paths(
        table,
        side,
        paths,
        seed,
        "renewal-integral",
        exec,
        |h, rng| {
            let mut total = a;
            let mut s = draw(h, rng);
            while s < a {
                total += a - s;
                s += draw(h, rng);
            }
            total
        },
    )
}
