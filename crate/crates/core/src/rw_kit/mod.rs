//! The many-to-one random walk and its fluctuation theory.
//!
//! The walk's step law is the `exp(-x)`-tilted intensity of the offspring
//! process, so that `E[sum_{|x|=n} g(V(x_1..x_n))] = E[exp(S_n) g(S_1..S_n)]`.

mod ballot;
mod ladder;
mod renewal;

use std::sync::Arc;

use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::offspring::{DisplacementLaw, PointProcessModel, ProcessLaw};
use crate::rng::{SeedRecord, SimRng};
use crate::stats::{EstimateWithCI, Moments};

pub use ballot::{
    ballot_check, ballot_scan, estimate_constants, local_ballot_check, local_ballot_constant,
    BallotScenario, CheckReport, ConstantsReport, KozlovRow, LocalBallotReport,
};
pub use ladder::{build_ladder_table, LadderOptions, LadderTable, DEFAULT_STEP_CAP};
pub use renewal::{
    renewal_integral, renewal_r, renewal_r_minus, RenewalFunction, Side, DEFAULT_GRID_STEP,
};

#[derive(Clone, Debug)]
enum StepSampler {
    /// Normal(0, sd^2), the tilt of a boundary-case Gaussian model.
    CenteredNormal(f64),
    /// Tilted draw of an i.i.d. displacement law.
    Tilted(DisplacementLaw),
    /// Spine-child displacement of a size-biased offspring draw.
    Spine(Arc<PointProcessModel>),
}

/// One-dimensional walk `S` with `S_0 = 0`.
#[derive(Clone, Debug)]
pub struct WalkModel {
    name: String,
    step: StepSampler,
    sigma_sq: f64,
    symmetric: bool,
}

impl WalkModel {
    /// Centered Gaussian walk with the given step variance.
    pub fn gaussian(sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::invalid(
                "gaussian walk needs a positive finite variance",
            ));
        }
        Ok(WalkModel {
            name: format!("gaussian({sigma_sq})"),
            step: StepSampler::CenteredNormal(sigma_sq.sqrt()),
            sigma_sq,
            symmetric: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    /// Whether the step law is symmetric about 0 (then the
    /// distribution-free fluctuation identities apply).
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Whether steps are centered Gaussian.
    pub fn is_gaussian(&self) -> bool {
        matches!(self.step, StepSampler::CenteredNormal(_))
    }

    #[inline]
    pub fn step(&self, rng: &mut SimRng) -> f64 {
        match &self.step {
            StepSampler::CenteredNormal(sd) => {
                let z: f64 = rng.sample(StandardNormal);
                sd * z
            }
            StepSampler::Tilted(law) => law.sample_tilted(rng),
            StepSampler::Spine(model) => {
                let mut buf = Vec::new();
                // samplers validated at construction
                let i = model
                    .sample_tilted_into(rng, &mut buf)
                    .expect("tilted sampler failed after validation");
                buf[i]
            }
        }
    }

    /// Moment check of the step law: mean against 0 and second moment against
    /// `sigma_sq`, each with its standard error.
    pub fn check_moments(
        &self,
        budget: u64,
        seed: &SeedRecord,
        exec: &Executor,
    ) -> Result<(EstimateWithCI, EstimateWithCI)> {
        let seed = seed.derive("walk-moments");
        let r = exec.run(
            budget,
            1 << 16,
            &seed,
            || (Moments::new(), Moments::new()),
            |acc, _, rng| {
                let x = self.step(rng);
                acc.0.push(x);
                acc.1.push(x * x);
                Ok(())
            },
        )?;
        Ok((
            r.acc.0.estimate(seed, "walk-step-mean"),
            r.acc.1.estimate(seed, "walk-step-second-moment"),
        ))
    }
}

/// The many-to-one walk of a model.
pub fn derive_walk(model: &PointProcessModel) -> Result<WalkModel> {
    let unsupported = |what: &str| Error::UnsupportedModel {
        model: model.name().to_string(),
        what: what.to_string(),
    };
    if let Some(a) = model.analytic() {
        if !a.exact_boundary && (a.sum_exp - 1.0).abs() > 1e-9 {
            return Err(unsupported("a many-to-one walk (E[sum e^-V] != 1)"));
        }
    }
    let step = match model.law() {
        ProcessLaw::Iid { displacement, .. } => match displacement.tilted() {
            Some(DisplacementLaw::Normal { mean, sd }) if mean.abs() < 1e-12 => {
                StepSampler::CenteredNormal(sd)
            }
            _ => StepSampler::Tilted(*displacement),
        },
        ProcessLaw::Custom(_) => {
            // probe once so that unsupported tilts fail here, not mid-walk
            let mut probe = Vec::new();
            model.sample_tilted_into(&mut SeedRecord::new(0).rng(0), &mut probe)?;
            StepSampler::Spine(Arc::new(model.clone()))
        }
    };
    let sigma_sq = match model.analytic() {
        Some(a) => a.sigma_sq,
        None => {
            return Err(unsupported(
                "a many-to-one walk without analytic step variance",
            ))
        }
    };
    let symmetric = match &step {
        StepSampler::CenteredNormal(_) => true,
        StepSampler::Tilted(DisplacementLaw::Constant(c)) => *c == 0.0,
        _ => false,
    };
    Ok(WalkModel {
        name: format!("walk[{}]", model.name()),
        step,
        sigma_sq,
        symmetric,
    })
}
