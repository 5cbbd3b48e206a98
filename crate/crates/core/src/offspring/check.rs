use serde::{Deserialize, Serialize};

use super::PointProcessModel;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::SeedRecord;
use crate::stats::{EstimateWithCI, Moments};

/// Verdicts are decided at this many standard errors.
pub const VERDICT_SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Monte Carlo moment report for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub model_hash: String,
    pub budget: u64,
    /// `E[sum 1]`
    pub mean_children: EstimateWithCI,
    /// `E[sum exp(-V)]`
    pub sum_exp: EstimateWithCI,
    /// `E[sum V exp(-V)]`
    pub sum_v_exp: EstimateWithCI,
    /// `E[sum V^2 exp(-V)]`
    pub sigma_sq: EstimateWithCI,
    /// `E[X (ln+ X)^2]` with `X = sum exp(-V)`
    pub x_log_sq: EstimateWithCI,
    /// `E[Y ln+ Y]` with `Y = sum V+ exp(-V)`
    pub y_log: EstimateWithCI,
    pub verdicts: Vec<Verdict>,
    pub all_pass: bool,
}

fn ln_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// Estimates the boundary-case moments from `budget` ordinary samples and
/// checks them against their required values at four standard errors.
pub fn check_boundary_conditions(
    model: &PointProcessModel,
    budget: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<ModelReport> {
    if budget < 10_000 {
        return Err(Error::invalid(format!(
            "boundary check needs a budget of at least 10^4 samples, got {budget}"
        )));
    }
    let seed = seed.derive("boundary-check");
    let campaign = exec.run(
        budget,
        4096,
        &seed,
        || vec![Moments::new(); 6],
        |acc, _, rng| {
            let mut d = Vec::new();
            model.sample_into(rng, &mut d)?;
            let mut x = 0.0;
            let mut xv = 0.0;
            let mut xv2 = 0.0;
            let mut y = 0.0;
            for &v in &d {
                let w = (-v).exp();
                x += w;
                xv += v * w;
                xv2 += v * v * w;
                y += v.max(0.0) * w;
            }
            let lx = ln_plus(x);
            for (m, val) in
                acc.iter_mut()
                    .zip([d.len() as f64, x, xv, xv2, x * lx * lx, y * ln_plus(y)])
            {
                m.push(val);
            }
            Ok(())
        },
    )?;
    let m = campaign.acc;
    let est = |i: usize, kind: &str| m[i].estimate(seed, kind);
    let mean_children = est(0, "mc-mean-children");
    let sum_exp = est(1, "mc-sum-exp");
    let sum_v_exp = est(2, "mc-sum-v-exp");
    let sigma_sq = est(3, "mc-sigma-sq");
    let x_log_sq = est(4, "mc-x-log-sq");
    let y_log = est(5, "mc-y-log");

    let k = VERDICT_SIGMAS;
    let mut verdicts = vec![
        Verdict {
            name: "normalization".into(),
            pass: sum_exp.within_sigmas(1.0, k),
            detail: format!(
                "E[sum e^-V] = {:.6} +- {:.2e}, target 1",
                sum_exp.value, sum_exp.stderr
            ),
        },
        Verdict {
            name: "centering".into(),
            pass: sum_v_exp.within_sigmas(0.0, k),
            detail: format!(
                "E[sum V e^-V] = {:.6} +- {:.2e}, target 0",
                sum_v_exp.value, sum_v_exp.stderr
            ),
        },
        Verdict {
            name: "supercritical".into(),
            pass: mean_children.value - 1.0 > k * mean_children.stderr,
            detail: format!(
                "E[sum 1] = {:.6} +- {:.2e}, must exceed 1",
                mean_children.value, mean_children.stderr
            ),
        },
        Verdict {
            name: "finite-variance".into(),
            pass: sigma_sq.value > 0.0 && sigma_sq.value.is_finite(),
            detail: format!("sigma^2 = {:.6} +- {:.2e}", sigma_sq.value, sigma_sq.stderr),
        },
        Verdict {
            name: "log-moments".into(),
            pass: x_log_sq.value.is_finite() && y_log.value.is_finite(),
            detail: format!(
                "E[X (ln+ X)^2] = {:.4}, E[Y ln+ Y] = {:.4}",
                x_log_sq.value, y_log.value
            ),
        },
    ];
    if campaign.partial {
        verdicts.push(Verdict {
            name: "complete".into(),
            pass: false,
            detail: format!("cancelled after {} of {budget} samples", campaign.completed),
        });
    }
    let all_pass = verdicts.iter().all(|v| v.pass);
    Ok(ModelReport {
        model: model.name().to_string(),
        model_hash: model.model_hash().to_string(),
        budget,
        mean_children,
        sum_exp,
        sum_v_exp,
        sigma_sq,
        x_log_sq,
        y_log,
        verdicts,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn verdict<'a>(r: &'a ModelReport, name: &str) -> &'a Verdict {
        r.verdicts.iter().find(|v| v.name == name).unwrap()
    }

    #[test]
    fn binary_gaussian_passes() {
        let m = PointProcessModel::binary_gaussian();
        let r =
            check_boundary_conditions(&m, 200_000, &SeedRecord::new(5), &Executor::sequential())
                .unwrap();
        assert!(r.all_pass, "{:#?}", r.verdicts);
        assert!(r.sigma_sq.within_sigmas(2.0 * LN_2, 4.0));
        assert!(r.sum_v_exp.within_sigmas(0.0, 4.0));
        assert_eq!(r.mean_children.value, 2.0);
    }

    #[test]
    fn single_child_fails_supercriticality_only() {
        let m = PointProcessModel::single_child("one-child-zero", 0.0);
        let r = check_boundary_conditions(&m, 10_000, &SeedRecord::new(5), &Executor::sequential())
            .unwrap();
        assert!(!r.all_pass);
        assert!(!verdict(&r, "supercritical").pass);
        assert!(verdict(&r, "normalization").pass);
        assert!(verdict(&r, "centering").pass);
    }

    #[test]
    fn shifted_model_fails_centering() {
        let m = PointProcessModel::iid(
            "shifted",
            super::super::ChildCountLaw::Fixed(2),
            super::super::DisplacementLaw::Normal {
                mean: 2.0 * LN_2 + 0.3,
                sd: (2.0 * LN_2).sqrt(),
            },
        );
        let r = check_boundary_conditions(&m, 50_000, &SeedRecord::new(5), &Executor::sequential())
            .unwrap();
        assert!(!verdict(&r, "normalization").pass);
    }

    #[test]
    fn small_budget_rejected() {
        let m = PointProcessModel::binary_gaussian();
        assert!(
            check_boundary_conditions(&m, 999, &SeedRecord::new(1), &Executor::sequential())
                .is_err()
        );
    }

    #[test]
    fn report_serializes() {
        let m = PointProcessModel::binary_gaussian();
        let r = check_boundary_conditions(&m, 10_000, &SeedRecord::new(5), &Executor::sequential())
            .unwrap();
        let j = serde_json::to_string(&r).unwrap();
        let back: ModelReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
    }
}
