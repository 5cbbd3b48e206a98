use serde::{Deserialize, Serialize};

use super::{renewal_integral, LadderTable, RenewalFunction, Side, WalkModel, DEFAULT_GRID_STEP};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::SeedRecord;
use crate::stats::{central_binomial_prob, weighted_affine_fit, EstimateWithCI, Moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KozlovRow {
    pub n: u64,
    /// `P(min_{1<=j<=n} S_j >= 0)`
    pub p_plus: EstimateWithCI,
    /// `P(max_{1<=j<=n} S_j <= 0)`
    pub p_minus: EstimateWithCI,
    /// `C(2n, n) 4^-n`, the exact value for symmetric continuous walks.
    pub sparre_andersen: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub walk: String,
    pub budget: u64,
    pub rows: Vec<KozlovRow>,
    /// Intercept of the weighted affine fit of `sqrt(n) P` against `1/sqrt(n)`.
    pub c_plus_hat: EstimateWithCI,
    pub c_minus_hat: EstimateWithCI,
    /// `1/sqrt(pi)` for symmetric continuous walks.
    pub c_reference: Option<f64>,
    pub c0_hat: Option<EstimateWithCI>,
    pub c0_from_heights: Option<EstimateWithCI>,
    pub mean_ladder_height: Option<EstimateWithCI>,
    /// Every row within four standard errors of its exact value.
    pub sparre_andersen_pass: Option<bool>,
}

/// Estimates `C+`, `C-` from the persistence probabilities of one walk per
/// replication, and `c0` from `ladder` when given.
pub fn estimate_constants(
    walk: &WalkModel,
    n_grid: &[u64],
    budget: u64,
    ladder: Option<&LadderTable>,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<ConstantsReport> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::invalid(
            "n_grid must be non-empty, positive and increasing",
        ));
    }
    let seed = seed.derive("constants");
    // a zero walk is symmetric but never leaves 0
    let continuous_symmetric = walk.is_symmetric() && walk.sigma_sq() > 0.0;
    let n_max = *n_grid.last().unwrap();
    let g = n_grid.len();
    let r = exec.run(
        budget,
        1 << 14,
        &seed,
        || vec![Moments::new(); 2 * g],
        |acc, _, rng| {
            // first times below and above zero
            let (mut below, mut above) = (u64::MAX, u64::MAX);
            let mut s = 0.0;
            for k in 1..=n_max {
                s += walk.step(rng);
                if s < 0.0 && below == u64::MAX {
                    below = k;
                }
                if s > 0.0 && above == u64::MAX {
                    above = k;
                }
                if below != u64::MAX && above != u64::MAX {
                    break;
                }
            }
            for (i, &n) in n_grid.iter().enumerate() {
                acc[i].push(f64::from(u8::from(below > n)));
                acc[g + i].push(f64::from(u8::from(above > n)));
            }
            Ok(())
        },
    )?;
    let m = r.acc;
    let rows: Vec<KozlovRow> = n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| KozlovRow {
            n,
            p_plus: m[i].estimate(seed, "persistence-mc"),
            p_minus: m[g + i].estimate(seed, "persistence-mc"),
            sparre_andersen: continuous_symmetric.then(|| central_binomial_prob(n)),
        })
        .collect();
    let fit = |side: usize| {
        let x: Vec<f64> = n_grid.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect();
        let y: Vec<f64> = (0..g)
            .map(|i| (n_grid[i] as f64).sqrt() * m[side * g + i].mean())
            .collect();
        let se: Vec<f64> = (0..g)
            .map(|i| ((n_grid[i] as f64).sqrt() * m[side * g + i].stderr()).max(1e-12))
            .collect();
        let (c, se_c) = if g == 1 {
            (y[0], se[0])
        } else {
            let (c, _, se_c) = weighted_affine_fit(&x, &y, &se);
            (c, se_c)
        };
        EstimateWithCI {
            value: c,
            stderr: se_c,
            count: budget,
            seed,
            estimator_kind: "persistence-affine-intercept".into(),
        }
    };
    let sparre_andersen_pass = continuous_symmetric.then(|| {
        rows.iter().all(|row| {
            let exact = row.sparre_andersen.unwrap();
            row.p_plus.within_sigmas(exact, 4.0) && row.p_minus.within_sigmas(exact, 4.0)
        })
    });
    let (c0_hat, c0_from_heights, mean_ladder_height) = match ladder {
        Some(t) => {
            let rf = RenewalFunction::build(
                t,
                Side::Plus,
                40.0,
                DEFAULT_GRID_STEP,
                t.budget.clamp(2, 100_000),
                &seed,
                exec,
            )?;
            (
                Some(rf.c0_hat),
                Some(t.c0_from_heights(seed)),
                Some(t.mean_height(seed)),
            )
        }
        None => (None, None, None),
    };
    Ok(ConstantsReport {
        walk: walk.name().to_string(),
        budget,
        c_plus_hat: fit(0),
        c_minus_hat: fit(1),
        rows,
        c_reference: continuous_symmetric.then(|| 1.0 / std::f64::consts::PI.sqrt()),
        c0_hat,
        c0_from_heights,
        mean_ladder_height,
        sparre_andersen_pass,
    })
}

/// Persistence events bounded by the classical ballot-type estimates. The
/// walk starts at `x` (or 0 where absent).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BallotScenario {
    /// `P_x(min_{j<=n} S_j >= 0)`, scale `sqrt(n) / (1+x)`.
    Kozlov { x: f64 },
    /// `P_x(S_n in [a,b], min_{j<=n} S_j >= 0)`, scale
    /// `n^{3/2} / ((1+x)(1+b-a)(1+b))`.
    Window { x: f64, a: f64, b: f64 },
    /// `P_x(S_n in [y+a, y+b], min_{j<=n} S_j >= 0, min_{lambda n<=j<=n} S_j >= y)`,
    /// same scale as `Window`.
    TwoBarrier {
        x: f64,
        y: f64,
        a: f64,
        b: f64,
        lambda: f64,
    },
    /// `P(S_n in [a, a+1], min_{j<=n} S_j >= 0, min_{n/2<j<=n} S_j >= a)`,
    /// scale `n^{3/2}`.
    Lower { a: f64 },
}

impl BallotScenario {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BallotScenario::Kozlov { x } => x >= 0.0,
            BallotScenario::Window { x, a, b } => x >= 0.0 && 0.0 <= a && a <= b,
            BallotScenario::TwoBarrier { x, y, a, b, lambda } => {
                x >= 0.0 && y >= 0.0 && 0.0 <= a && a <= b && lambda > 0.0 && lambda < 1.0
            }
            BallotScenario::Lower { a } => a >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid ballot scenario {self:?}")))
        }
    }

    fn name(&self) -> &'static str {
        match self {
            BallotScenario::Kozlov { .. } => "kozlov",
            BallotScenario::Window { .. } => "window",
            BallotScenario::TwoBarrier { .. } => "two-barrier",
            BallotScenario::Lower { .. } => "lower",
        }
    }

    fn scale(&self, n: u64) -> f64 {
        let n32 = (n as f64).powf(1.5);
        match *self {
            BallotScenario::Kozlov { x } => (n as f64).sqrt() / (1.0 + x),
            BallotScenario::Window { x, a, b } | BallotScenario::TwoBarrier { x, a, b, .. } => {
                n32 / ((1.0 + x) * (1.0 + b - a) * (1.0 + b))
            }
            BallotScenario::Lower { .. } => n32,
        }
    }

    /// `(start, late barrier, first index of the late barrier, terminal window)`
    fn shape(&self, n: u64) -> (f64, f64, u64, Option<(f64, f64)>) {
        match *self {
            BallotScenario::Kozlov { x } => (x, 0.0, u64::MAX, None),
            BallotScenario::Window { x, a, b } => (x, 0.0, u64::MAX, Some((a, b))),
            BallotScenario::TwoBarrier { x, y, a, b, lambda } => (
                x,
                y,
                (lambda * n as f64).ceil() as u64,
                Some((y + a, y + b)),
            ),
            BallotScenario::Lower { a } => (0.0, a, n / 2 + 1, Some((a, a + 1.0))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub n: u64,
    pub estimate: EstimateWithCI,
    /// Normalizing factor applied in `scaled`.
    pub scale: f64,
    pub scaled: EstimateWithCI,
}

/// Monte Carlo estimate of one scenario probability at horizon `n`.
pub fn ballot_check(
    walk: &WalkModel,
    scenario: BallotScenario,
    n: u64,
    budget: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<CheckReport> {
    scenario.validate()?;
    let seed = seed.derive(scenario.name()).derive_index(n);
    let (start, late, late_from, window) = scenario.shape(n);
    let r = exec.run(budget, 1 << 14, &seed, Moments::new, |m, _, rng| {
        let mut s = start;
        let mut alive = true;
        for j in 1..=n {
            s += walk.step(rng);
            if s < 0.0 || (j >= late_from && s < late) {
                alive = false;
                break;
            }
        }
        let hit = alive && window.is_none_or(|(lo, hi)| lo <= s && s <= hi);
        m.push(f64::from(u8::from(hit)));
        Ok(())
    })?;
    let estimate = r.acc.estimate(seed, "ballot-mc");
    let scale = scenario.scale(n);
    Ok(CheckReport {
        name: scenario.name().to_string(),
        n,
        scaled: estimate.scaled(scale),
        estimate,
        scale,
    })
}

/// [`ballot_check`] over a grid of horizons, with the max/min spread of the
/// scaled values.
pub fn ballot_scan(
    walk: &WalkModel,
    scenario: BallotScenario,
    n_grid: &[u64],
    budget: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<(Vec<CheckReport>, f64)> {
    let reports = n_grid
        .iter()
        .map(|&n| ballot_check(walk, scenario, n, budget, seed, exec))
        .collect::<Result<Vec<_>>>()?;
    let vals = reports.iter().map(|r| r.scaled.value);
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.fold(f64::INFINITY, f64::min);
    Ok((reports, max / min))
}

/// `C- C+ sqrt(pi) / (sigma sqrt 2)`.
pub fn local_ballot_constant(c_plus: f64, c_minus: f64, sigma_sq: f64) -> f64 {
    c_minus * c_plus * std::f64::consts::PI.sqrt() / (sigma_sq.sqrt() * std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalBallotReport {
    pub a: f64,
    pub n: u64,
    pub y: f64,
    pub lambda: f64,
    /// `n^{3/2} P(S_n - y in [0,a], min_{[0,n]} S >= 0, min_{[lambda n, n]} S >= y)`
    pub lhs_scaled: EstimateWithCI,
    /// `int_0^a R_-(x) dx`
    pub integral: EstimateWithCI,
    pub constant: f64,
    pub rhs: EstimateWithCI,
    /// `lhs / rhs`; NaN when both vanish.
    pub ratio: f64,
    pub ratio_stderr: f64,
}

/// Compares the persistence-window probability with its renewal-function
/// asymptotic, for `F` the indicator of `[0, a]`.
#[allow(clippy::too_many_arguments)]
pub fn local_ballot_check(
    walk: &WalkModel,
    table: &LadderTable,
    a: f64,
    n: u64,
    y: f64,
    lambda: f64,
    constant: f64,
    budget: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<LocalBallotReport> {
    if !(lambda > 0.0 && lambda < 1.0) || y < 0.0 || a < 0.0 {
        return Err(Error::invalid("need 0 < lambda < 1, y >= 0, a >= 0"));
    }
    let lhs = ballot_check(
        walk,
        BallotScenario::TwoBarrier {
            x: 0.0,
            y,
            a: 0.0,
            b: a,
            lambda,
        },
        n,
        budget,
        &seed.derive("local-ballot"),
        exec,
    )?;
    let lhs_scaled = lhs.estimate.scaled((n as f64).powf(1.5));
    let integral = renewal_integral(
        table,
        Side::Minus,
        a,
        table.budget.clamp(2, 1_000_000),
        &seed.derive("local-ballot"),
        exec,
    )?;
    let rhs = integral.scaled(constant);
    let ratio = lhs_scaled.value / rhs.value;
    let ratio_stderr = ratio.abs() * lhs_scaled.relative_stderr().hypot(rhs.relative_stderr());
    Ok(LocalBallotReport {
        a,
        n,
        y,
        lambda,
        lhs_scaled,
        integral,
        constant,
        rhs,
        ratio,
        ratio_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn walk() -> WalkModel {
        WalkModel::gaussian(2.0 * LN_2).unwrap()
    }

    #[test]
    fn sparre_andersen_rows() {
        let r = estimate_constants(
            &walk(),
            &[1, 5, 10],
            200_000,
            None,
            &SeedRecord::new(2),
            &Executor::sequential(),
        )
        .unwrap();
        assert_eq!(r.sparre_andersen_pass, Some(true), "{:#?}", r.rows);
        assert!((r.rows[2].sparre_andersen.unwrap() - 0.17620).abs() < 1e-5);
        // P(S_1 >= 0) = 1/2 exactly
        assert!(r.rows[0].p_plus.within_sigmas(0.5, 4.0));
    }

    #[test]
    fn persistence_constant_plateau() {
        let grid = [25, 50, 100, 200, 400];
        let r = estimate_constants(
            &walk(),
            &grid,
            200_000,
            None,
            &SeedRecord::new(3),
            &Executor::sequential(),
        )
        .unwrap();
        let c = 1.0 / std::f64::consts::PI.sqrt();
        assert!((r.c_plus_hat.value - c).abs() < 0.05, "{:?}", r.c_plus_hat);
        assert!(
            (r.c_minus_hat.value - c).abs() < 0.05,
            "{:?}",
            r.c_minus_hat
        );
    }

    #[test]
    fn zero_walk_never_leaves() {
        let m = crate::offspring::PointProcessModel::single_child("one-child-zero", 0.0);
        let w = super::super::derive_walk(&m).unwrap();
        let r = estimate_constants(
            &w,
            &[3, 7],
            1000,
            None,
            &SeedRecord::new(1),
            &Executor::sequential(),
        )
        .unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| row.p_plus.value == 1.0 && row.p_minus.value == 1.0));
    }

    #[test]
    fn null_window_is_zero() {
        let r = ballot_check(
            &walk(),
            BallotScenario::Window {
                x: 0.0,
                a: 1.0,
                b: 1.0,
            },
            50,
            20_000,
            &SeedRecord::new(1),
            &Executor::sequential(),
        )
        .unwrap();
        assert_eq!(r.estimate.value, 0.0);
    }

    #[test]
    fn kozlov_at_origin_matches_binomial() {
        let r = ballot_check(
            &walk(),
            BallotScenario::Kozlov { x: 0.0 },
            20,
            100_000,
            &SeedRecord::new(5),
            &Executor::sequential(),
        )
        .unwrap();
        assert!(r.estimate.within_sigmas(central_binomial_prob(20), 4.0));
    }

    #[test]
    fn constant_value() {
        let c = 1.0 / std::f64::consts::PI.sqrt();
        let k = local_ballot_constant(c, c, 2.0 * LN_2);
        assert!((k - 0.3388).abs() < 5e-5, "{k}");
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let bad = BallotScenario::TwoBarrier {
            x: 0.0,
            y: 0.0,
            a: 0.0,
            b: 1.0,
            lambda: 1.5,
        };
        assert!(ballot_check(
            &walk(),
            bad,
            10,
            10,
            &SeedRecord::new(1),
            &Executor::sequential()
        )
        .is_err());
    }
}
