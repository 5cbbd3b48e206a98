use serde::{Deserialize, Serialize};

use rand::RngExt;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::rng::{SeedRecord, SimRng};
use crate::rw_kit::{RenewalFunction, Side, WalkModel};
use crate::stats::{EstimateWithCI, Moments};

/// Envelope growth after a proposal whose weight exceeded it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEvent {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub envelope: f64,
    pub new_factor: f64,
}

/// Steps of the walk conditioned to stay above `-beta`: the kernel
/// `R(y + beta) / R(x + beta) 1{y >= -beta} p(x, dy)`, sampled by rejection
/// from the free step.
///
/// The envelope at `x` is `factor * R(x + beta + reach) / R(x + beta)`,
/// which bounds the weight of every proposal with `y <= x + reach` because
/// `R` is non-decreasing. A proposal above the envelope doubles `factor`,
/// is logged, and the step restarts.
#[derive(Clone, Debug)]
pub struct ConditionedStepper<'a> {
    walk: &'a WalkModel,
    renewal: &'a RenewalFunction,
    beta: f64,
    reach: f64,
    factor: f64,
    proposals: u64,
    events: Vec<EnvelopeEvent>,
}

impl<'a> ConditionedStepper<'a> {
    pub fn new(walk: &'a WalkModel, renewal: &'a RenewalFunction, beta: f64) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        if renewal.side != Side::Plus {
            return Err(Error::invalid(
                "conditioning uses the renewal function of S",
            ));
        }
        Ok(ConditionedStepper {
            walk,
            renewal,
            beta,
            reach: 5.0 * walk.sigma_sq().sqrt(),
            factor: 1.0,
            proposals: 0,
            events: Vec::new(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn events(&self) -> &[EnvelopeEvent] {
        &self.events
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    /// `R(y + beta) / R(x + beta)`, zero below the barrier.
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        self.renewal.eval(y + self.beta) / self.renewal.eval(x + self.beta)
    }

    fn envelope(&self, x: f64) -> f64 {
        self.factor * self.weight(x, x + self.reach)
    }

    pub fn step(&mut self, x: f64, rng: &mut SimRng) -> Result<f64> {
        if !(x >= -self.beta) {
            return Err(Error::invalid("conditioned walk started below -beta"));
        }
        loop {
            let y = x + self.walk.step(rng);
            self.proposals += 1;
            if y < -self.beta {
                continue;
            }
            let w = self.weight(x, y);
            let env = self.envelope(x);
            if w > env {
                self.factor *= 2.0;
                self.events.push(EnvelopeEvent {
                    x,
                    y,
                    weight: w,
                    envelope: env,
                    new_factor: self.factor,
                });
                continue;
            }
            let u: f64 = rng.random();
            if u * env < w {
                return Ok(y);
            }
        }
    }

    /// `steps` conditioned steps from `x0`; the returned path starts at `x0`.
    pub fn path(&mut self, x0: f64, steps: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0);
        let mut x = x0;
        for _ in 0..steps {
            x = self.step(x, rng)?;
            assert!(x >= -self.beta, "conditioned walk went below -beta");
            out.push(x);
        }
        Ok(out)
    }
}

/// One conditioned step from `x`.
pub fn conditioned_spine_step(
    walk: &WalkModel,
    renewal: &RenewalFunction,
    x: f64,
    beta: f64,
    rng: &mut SimRng,
) -> Result<f64> {
    ConditionedStepper::new(walk, renewal, beta)?.step(x, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanakaReport {
    pub x: f64,
    pub beta: f64,
    /// `E_x[R(S_1 + beta) 1{S_1 >= -beta}]`
    pub lhs: EstimateWithCI,
    /// `R(x + beta)` from the table.
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `(lhs - rhs) / sqrt(se_lhs^2 + se_rhs^2)`
    pub z_score: f64,
    pub pass: bool,
}

/// Harmonicity of `R(. + beta)` for the walk killed below `-beta`, both
/// sides evaluated with the same renewal estimate.
pub fn tanaka_check(
    walk: &WalkModel,
    renewal: &RenewalFunction,
    x: f64,
    beta: f64,
    samples: u64,
    seed: &SeedRecord,
    exec: &Executor,
) -> Result<TanakaReport> {
    if !(x >= -beta) || renewal.side != Side::Plus {
        return Err(Error::invalid(
            "tanaka check needs x >= -beta and the renewal function of S",
        ));
    }
    let seed = seed.derive("tanaka").derive(&format!("{x:?}/{beta:?}"));
    let r = exec.run(samples, 1 << 14, &seed, Moments::new, |acc, _, rng| {
        let y = x + walk.step(rng);
        acc.push(if y >= -beta {
            renewal.eval(y + beta)
        } else {
            0.0
        });
        Ok(())
    })?;
    let lhs = r.acc.estimate(seed, "tanaka");
    let rhs = renewal.eval(x + beta);
    let rhs_stderr = renewal.stderr_at(x + beta);
    let se = lhs.stderr.hypot(rhs_stderr);
    let z_score = if se > 0.0 {
        (lhs.value - rhs) / se
    } else {
        0.0
    };
    Ok(TanakaReport {
        x,
        beta,
        lhs,
        rhs,
        rhs_stderr,
        z_score,
        pass: z_score.abs() <= 4.0,
    })
}
