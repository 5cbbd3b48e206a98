//! Offspring point processes in the boundary case and their size-biased
//! versions.
//!
//! A [`PointProcessModel`] draws the displacement vector of one particle's
//! children. Its tilted companion has Radon-Nikodym derivative
//! `sum_i exp(-V(i))` with respect to the ordinary law, and carries a marked
//! (spine) child picked with probability proportional to `exp(-V(child))`.

mod check;
mod spec;

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub use check::{check_boundary_conditions, ModelReport, Verdict, VERDICT_SIGMAS};
pub use spec::{builtin_names, ModelSpec};

/// Hard cap on the number of children of one particle. Samples above it are
/// reported as errors rather than truncated.
pub const MAX_CHILDREN: usize = 1 << 16;

/// Law of the number of children.
#[derive(Clone, Debug)]
pub enum ChildCountLaw {
    Fixed(usize),
    /// `1 + Poisson(mean_extra)`.
    OnePlusPoisson {
        mean_extra: f64,
        poisson: Poisson<f64>,
    },
}

impl ChildCountLaw {
    pub fn one_plus_poisson(mean_extra: f64) -> Result<Self> {
        let poisson = Poisson::new(mean_extra)
            .map_err(|e| Error::invalid(format!("poisson mean {mean_extra}: {e}")))?;
        Ok(ChildCountLaw::OnePlusPoisson {
            mean_extra,
            poisson,
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            ChildCountLaw::Fixed(k) => *k as f64,
            ChildCountLaw::OnePlusPoisson { mean_extra, .. } => 1.0 + mean_extra,
        }
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match self {
            ChildCountLaw::Fixed(j) => f64::from(u8::from(k == *j)),
            ChildCountLaw::OnePlusPoisson { mean_extra, .. } => {
                if k == 0 {
                    return 0.0;
                }
                let j = (k - 1) as f64;
                (j * mean_extra.ln() - mean_extra - ln_factorial(k - 1)).exp()
                    * f64::from(u8::from(*mean_extra > 0.0 || k == 1))
            }
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> usize {
        match self {
            ChildCountLaw::Fixed(k) => *k,
            ChildCountLaw::OnePlusPoisson { poisson, .. } => 1 + poisson.sample(rng) as usize,
        }
    }

    /// Draw from `P(N = k) * k / E[N]`.
    pub fn sample_size_biased(&self, rng: &mut SimRng) -> usize {
        match self {
            ChildCountLaw::Fixed(k) => *k,
            ChildCountLaw::OnePlusPoisson {
                mean_extra,
                poisson,
            } => {
                // k P(1+Pois = k) = P(Pois = k-1) + m P(Pois = k-2)
                let extra = usize::from(rng.random::<f64>() * (1.0 + mean_extra) >= 1.0);
                1 + extra + poisson.sample(rng) as usize
            }
        }
    }
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Law of one child's displacement in i.i.d.-displacement models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DisplacementLaw {
    Normal { mean: f64, sd: f64 },
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl DisplacementLaw {
    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            DisplacementLaw::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            DisplacementLaw::Constant(c) => c,
            DisplacementLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Draw from the law with density proportional to `exp(-x)` against this
    /// one.
    #[inline]
    pub fn sample_tilted(&self, rng: &mut SimRng) -> f64 {
        match *self {
            DisplacementLaw::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean - sd * sd + sd * z
            }
            DisplacementLaw::Constant(c) => c,
            DisplacementLaw::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                lo - (-u * (-(-(hi - lo)).exp_m1())).ln_1p()
            }
        }
    }

    /// The tilted law as a displacement law, where it has one.
    pub fn tilted(&self) -> Option<DisplacementLaw> {
        match *self {
            DisplacementLaw::Normal { mean, sd } => Some(DisplacementLaw::Normal {
                mean: mean - sd * sd,
                sd,
            }),
            DisplacementLaw::Constant(c) => Some(DisplacementLaw::Constant(c)),
            DisplacementLaw::Uniform { .. } => None,
        }
    }

    /// `E[X^p exp(-X)]` for `p` in 0..=2.
    pub fn exp_moment(&self, p: u32) -> f64 {
        match *self {
            DisplacementLaw::Normal { mean, sd } => {
                let s2 = sd * sd;
                let base = (-mean + s2 / 2.0).exp();
                let m = mean - s2;
                match p {
                    0 => base,
                    1 => m * base,
                    _ => (m * m + s2) * base,
                }
            }
            DisplacementLaw::Constant(c) => c.powi(p as i32) * (-c).exp(),
            DisplacementLaw::Uniform { lo, hi } => {
                // antiderivative of x^p e^{-x}: -e^{-x} * poly_p(x)
                let poly = |x: f64| match p {
                    0 => 1.0,
                    1 => x + 1.0,
                    _ => x * x + 2.0 * x + 2.0,
                };
                (poly(lo) * (-lo).exp() - poly(hi) * (-hi).exp()) / (hi - lo)
            }
        }
    }
}

/// General displacement-vector sampler for models outside the i.i.d. family.
pub trait PointProcessSampler: Send + Sync + fmt::Debug {
    fn sample(&self, rng: &mut SimRng, out: &mut Vec<f64>);
}

/// Model-specific sampler of the size-biased process.
pub trait TiltedSampler: Send + Sync + fmt::Debug {
    /// Fills `out` with a draw of the size-biased displacement vector and
    /// returns the spine child's index.
    fn sample_tilted(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> usize;
}

#[derive(Clone, Debug)]
pub enum ProcessLaw {
    Iid {
        count: ChildCountLaw,
        displacement: DisplacementLaw,
    },
    Custom(Arc<dyn PointProcessSampler>),
}

/// How the tilted process is sampled.
#[derive(Clone, Debug)]
pub enum TiltMethod {
    /// Size-bias the child count, tilt one uniformly chosen child
    /// (i.i.d.-displacement models only).
    Exact,
    /// Accept an ordinary draw with probability `sum exp(-V) / envelope`.
    Rejection {
        envelope: f64,
    },
    Custom(Arc<dyn TiltedSampler>),
}

/// Closed-form descriptors of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    pub mean_children: f64,
    /// `E[sum exp(-V)]`
    pub sum_exp: f64,
    /// `E[sum V exp(-V)]`
    pub sum_v_exp: f64,
    /// `E[sum V^2 exp(-V)]`, the many-to-one step variance.
    pub sigma_sq: f64,
    pub exact_boundary: bool,
}

/// Displacements of one particle's children relative to the parent.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementSet {
    pub displacements: Vec<f64>,
    pub spine_index: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PointProcessModel {
    name: String,
    law: ProcessLaw,
    tilt: TiltMethod,
    analytic: Option<AnalyticMoments>,
    hash: String,
}

impl PointProcessModel {
    pub fn iid(name: &str, count: ChildCountLaw, displacement: DisplacementLaw) -> Self {
        let n = count.mean();
        let sum_exp = n * displacement.exp_moment(0);
        let sum_v_exp = n * displacement.exp_moment(1);
        let sigma_sq = n * displacement.exp_moment(2);
        let analytic = AnalyticMoments {
            mean_children: n,
            sum_exp,
            sum_v_exp,
            sigma_sq,
            exact_boundary: n > 1.0 && (sum_exp - 1.0).abs() < 1e-12 && sum_v_exp.abs() < 1e-12,
        };
        let hash = crate::util::fnv_hex(&format!("{name}|{count:?}|{displacement:?}"));
        PointProcessModel {
            name: name.to_string(),
            law: ProcessLaw::Iid {
                count,
                displacement,
            },
            tilt: TiltMethod::Exact,
            analytic: Some(analytic),
            hash,
        }
    }

    pub fn custom(
        name: &str,
        sampler: Arc<dyn PointProcessSampler>,
        tilt: TiltMethod,
        analytic: Option<AnalyticMoments>,
    ) -> Self {
        PointProcessModel {
            name: name.to_string(),
            hash: crate::util::fnv_hex(&format!("custom|{name}|{sampler:?}")),
            law: ProcessLaw::Custom(sampler),
            tilt,
            analytic,
        }
    }

    /// Two children at i.i.d. Normal(2 ln 2, 2 ln 2) displacements: the
    /// reference boundary-case model.
    pub fn binary_gaussian() -> Self {
        let s2 = 2.0 * LN_2;
        PointProcessModel::iid(
            "binary-gaussian",
            ChildCountLaw::Fixed(2),
            DisplacementLaw::Normal {
                mean: s2,
                sd: s2.sqrt(),
            },
        )
    }

    /// `1 + Poisson(m)` children at i.i.d. Normal(s2, s2) with
    /// `s2 = 2 ln(1 + m)`, which puts the model in the boundary case.
    pub fn poisson_gaussian(mean_extra: f64) -> Result<Self> {
        if !(mean_extra > 0.0 && mean_extra.is_finite()) {
            return Err(Error::invalid("poisson-gaussian needs mean_extra > 0"));
        }
        let s2 = 2.0 * mean_extra.ln_1p();
        Ok(PointProcessModel::iid(
            "poisson-gaussian",
            ChildCountLaw::one_plus_poisson(mean_extra)?,
            DisplacementLaw::Normal {
                mean: s2,
                sd: s2.sqrt(),
            },
        ))
    }

    /// One child at a fixed displacement (diagnostic, not boundary case).
    pub fn single_child(name: &str, displacement: f64) -> Self {
        PointProcessModel::iid(
            name,
            ChildCountLaw::Fixed(1),
            DisplacementLaw::Constant(displacement),
        )
    }

    pub(crate) fn rehash(mut self, extra: &str) -> Self {
        self.hash = crate::util::fnv_hex(&format!("{}|{extra}", self.hash));
        self
    }

    pub fn with_tilt(mut self, tilt: TiltMethod) -> Self {
        self.hash = crate::util::fnv_hex(&format!("{}|{:?}", self.hash, tilt_key(&tilt)));
        self.tilt = tilt;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn law(&self) -> &ProcessLaw {
        &self.law
    }

    pub fn tilt(&self) -> &TiltMethod {
        &self.tilt
    }

    pub fn analytic(&self) -> Option<&AnalyticMoments> {
        self.analytic.as_ref()
    }

    /// Short stable identifier of the model definition.
    pub fn model_hash(&self) -> &str {
        &self.hash
    }

    /// Ordinary offspring draw into `out` (cleared first).
    #[inline]
    pub fn sample_into(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match &self.law {
            ProcessLaw::Iid {
                count,
                displacement,
            } => {
                let k = count.sample(rng);
                check_cap(k)?;
                out.extend((0..k).map(|_| displacement.sample(rng)));
            }
            ProcessLaw::Custom(s) => {
                s.sample(rng, out);
                check_cap(out.len())?;
            }
        }
        Ok(())
    }

    /// Size-biased draw into `out`; returns the spine child's index.
    pub fn sample_tilted_into(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<usize> {
        out.clear();
        match (&self.tilt, &self.law) {
            (TiltMethod::Custom(t), _) => {
                let idx = t.sample_tilted(rng, out);
                check_cap(out.len())?;
                if idx >= out.len() {
                    return Err(Error::invalid(format!(
                        "custom tilted sampler returned spine index {idx} for {} children",
                        out.len()
                    )));
                }
                return Ok(idx);
            }
            (
                TiltMethod::Exact,
                ProcessLaw::Iid {
                    count,
                    displacement,
                },
            ) => {
                let k = count.sample_size_biased(rng);
                check_cap(k)?;
                if k == 0 {
                    return Err(Error::UnsupportedModel {
                        model: self.name.clone(),
                        what: "tilting (no children)".into(),
                    });
                }
                let marked = rng.random_range(0..k);
                for i in 0..k {
                    out.push(if i == marked {
                        displacement.sample_tilted(rng)
                    } else {
                        displacement.sample(rng)
                    });
                }
            }
            (TiltMethod::Exact, ProcessLaw::Custom(_)) => {
                return Err(Error::UnsupportedModel {
                    model: self.name.clone(),
                    what: "exact tilted sampling (no i.i.d. structure and no custom sampler)"
                        .into(),
                });
            }
            (TiltMethod::Rejection { envelope }, _) => loop {
                self.sample_into(rng, out)?;
                let weight: f64 = out.iter().map(|v| (-v).exp()).sum();
                if weight > *envelope {
                    return Err(Error::EnvelopeViolated {
                        envelope: *envelope,
                        weight,
                    });
                }
                if rng.random::<f64>() * envelope < weight {
                    break;
                }
            },
        }
        Ok(pick_spine(out, rng))
    }
}

fn tilt_key(t: &TiltMethod) -> String {
    match t {
        TiltMethod::Exact => "exact".into(),
        TiltMethod::Rejection { envelope } => format!("rejection:{envelope}"),
        TiltMethod::Custom(c) => format!("custom:{c:?}"),
    }
}

#[inline]
fn check_cap(k: usize) -> Result<()> {
    if k > MAX_CHILDREN {
        Err(Error::ChildCapExceeded {
            count: k,
            cap: MAX_CHILDREN,
        })
    } else {
        Ok(())
    }
}

/// Index drawn with probability proportional to `exp(-v)`.
fn pick_spine(displacements: &[f64], rng: &mut SimRng) -> usize {
    if displacements.len() == 1 {
        return 0;
    }
    let shift = displacements.iter().copied().fold(f64::INFINITY, f64::min);
    let total: f64 = displacements.iter().map(|v| (shift - v).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, v) in displacements.iter().enumerate() {
        u -= (shift - v).exp();
        if u < 0.0 {
            return i;
        }
    }
    displacements.len() - 1
}

/// One ordinary offspring draw.
pub fn sample_offspring(model: &PointProcessModel, rng: &mut SimRng) -> Result<DisplacementSet> {
    let mut displacements = Vec::new();
    model.sample_into(rng, &mut displacements)?;
    Ok(DisplacementSet {
        displacements,
        spine_index: None,
    })
}

/// One size-biased offspring draw with its spine child.
pub fn sample_tilted_offspring(
    model: &PointProcessModel,
    rng: &mut SimRng,
) -> Result<DisplacementSet> {
    let mut displacements = Vec::new();
    let idx = model.sample_tilted_into(rng, &mut displacements)?;
    Ok(DisplacementSet {
        displacements,
        spine_index: Some(idx),
    })
}
