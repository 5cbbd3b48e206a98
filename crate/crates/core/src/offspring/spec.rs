use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::{ChildCountLaw, DisplacementLaw, PointProcessModel, TiltMethod};
use crate::error::{Error, Result};

/// Declarative model description, as read from the `[model]` table of a
/// config file. Numeric parameters are decimal strings so that the parsed
/// `f64` is identical on every platform.
///
/// ```toml
/// [model]
/// name = "poisson-gaussian"
/// params = { mean_extra = "1.5" }
/// tilt = "rejection"
/// envelope = "40"
/// ```
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    /// `"exact"` (default) or `"rejection"`.
    #[serde(default)]
    pub tilt: Option<String>,
    /// Rejection envelope bounding `sum exp(-V)`.
    #[serde(default)]
    pub envelope: Option<String>,
}

const BUILTINS: &[(&str, &[&str], &str)] = &[
    (
        "binary-gaussian",
        &[],
        "two children at i.i.d. Normal(2 ln 2, 2 ln 2)",
    ),
    (
        "poisson-gaussian",
        &["mean_extra"],
        "1 + Poisson(mean_extra) children at i.i.d. Normal(s2, s2), s2 = 2 ln(1 + mean_extra)",
    ),
    (
        "iid-gaussian",
        &["children", "mean", "variance"],
        "fixed child count, i.i.d. Normal(mean, variance) displacements",
    ),
    (
        "iid-uniform",
        &["children", "lo", "hi"],
        "fixed child count, i.i.d. Uniform(lo, hi) displacements",
    ),
    ("one-child-zero", &[], "a single child at displacement 0"),
    (
        "one-child-drift",
        &["drift"],
        "a single child at displacement `drift`",
    ),
];

/// Built-in model names with their parameter keys and a one-line summary.
pub fn builtin_names() -> impl Iterator<Item = (&'static str, &'static [&'static str], &'static str)>
{
    BUILTINS.iter().copied()
}

fn parse_decimal(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("parameter `{key}` = {s:?} is not a decimal number")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("parameter `{key}` must be finite")));
    }
    Ok(v)
}

impl ModelSpec {
    pub fn builtin(name: &str) -> Self {
        ModelSpec {
            name: name.to_string(),
            ..ModelSpec::default()
        }
    }

    pub fn with_param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            model: ModelSpec,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(doc.model)
    }

    fn param(&self, key: &str, default: Option<&str>) -> Result<f64> {
        match self.params.get(key).map(String::as_str).or(default) {
            Some(s) => parse_decimal(key, s),
            None => Err(Error::Config(format!(
                "model `{}` needs parameter `{key}`",
                self.name
            ))),
        }
    }

    fn children(&self) -> Result<usize> {
        let c = self.param("children", None)?;
        if c < 1.0 || c.fract() != 0.0 || c > super::MAX_CHILDREN as f64 {
            return Err(Error::Config(format!(
                "`children` must be an integer in 1..={}",
                super::MAX_CHILDREN
            )));
        }
        Ok(c as usize)
    }

    pub fn build(&self) -> Result<PointProcessModel> {
        let Some(&(_, allowed, _)) = BUILTINS.iter().find(|(n, _, _)| *n == self.name) else {
            let names: Vec<_> = BUILTINS.iter().map(|b| b.0).collect();
            return Err(Error::Config(format!(
                "unknown model `{}` (known: {})",
                self.name,
                names.join(", ")
            )));
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "model `{}` has no parameter `{k}`",
                self.name
            )));
        }
        let model = match self.name.as_str() {
            "binary-gaussian" => PointProcessModel::binary_gaussian(),
            "poisson-gaussian" => {
                let m = self.param("mean_extra", Some("1"))?;
                PointProcessModel::poisson_gaussian(m).map_err(|e| Error::Config(e.to_string()))?
            }
            "iid-gaussian" => {
                let var = self.param("variance", Some(&(2.0 * LN_2).to_string()))?;
                if var < 0.0 {
                    return Err(Error::Config("`variance` must be non-negative".into()));
                }
                PointProcessModel::iid(
                    "iid-gaussian",
                    ChildCountLaw::Fixed(self.children()?),
                    DisplacementLaw::Normal {
                        mean: self.param("mean", None)?,
                        sd: var.sqrt(),
                    },
                )
            }
            "iid-uniform" => {
                let (lo, hi) = (self.param("lo", None)?, self.param("hi", None)?);
                if lo >= hi {
                    return Err(Error::Config("`lo` must be below `hi`".into()));
                }
                PointProcessModel::iid(
                    "iid-uniform",
                    ChildCountLaw::Fixed(self.children()?),
                    DisplacementLaw::Uniform { lo, hi },
                )
            }
            "one-child-zero" => PointProcessModel::single_child("one-child-zero", 0.0),
            "one-child-drift" => {
                PointProcessModel::single_child("one-child-drift", self.param("drift", Some("1"))?)
            }
            _ => unreachable!("builtin table and constructor disagree"),
        };
        // parameters enter the hash verbatim, so "1.50" and "1.5" are distinct runs
        let model = model.rehash(&format!("{:?}", self.params));
        match (self.tilt.as_deref(), &self.envelope) {
            (None | Some("exact"), None) => Ok(model),
            (None | Some("exact"), Some(_)) => Err(Error::Config(
                "`envelope` only applies to tilt = \"rejection\"".into(),
            )),
            (Some("rejection"), Some(e)) => {
                let envelope = parse_decimal("envelope", e)?;
                if envelope <= 0.0 {
                    return Err(Error::Config("`envelope` must be positive".into()));
                }
                Ok(model.with_tilt(TiltMethod::Rejection { envelope }))
            }
            (Some("rejection"), None) => Err(Error::Config(
                "tilt = \"rejection\" needs an `envelope`".into(),
            )),
            (Some(other), _) => Err(Error::Config(format!(
                "unknown tilt method {other:?} (expected \"exact\" or \"rejection\")"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let s = ModelSpec::from_toml(
            "[model]\nname = \"poisson-gaussian\"\nparams = { mean_extra = \"1.5\" }\n",
        )
        .unwrap();
        let m = s.build().unwrap();
        assert!(m.analytic().unwrap().exact_boundary);
        assert_eq!(m.name(), "poisson-gaussian");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(
            ModelSpec::from_toml("[model]\nname = \"binary-gaussian\"\ncolour = \"red\"\n")
                .is_err()
        );
        let s = ModelSpec::builtin("binary-gaussian").with_param("mean", "1");
        assert!(s.build().is_err());
        assert!(ModelSpec::builtin("no-such-model").build().is_err());
    }

    #[test]
    fn numbers_must_be_strings() {
        assert!(ModelSpec::from_toml(
            "[model]\nname = \"poisson-gaussian\"\nparams = { mean_extra = 1.5 }\n"
        )
        .is_err());
        let bad = ModelSpec::builtin("poisson-gaussian").with_param("mean_extra", "abc");
        assert!(bad.build().is_err());
    }

    #[test]
    fn rejection_requires_envelope() {
        let mut s = ModelSpec::builtin("binary-gaussian");
        s.tilt = Some("rejection".into());
        assert!(s.build().is_err());
        s.envelope = Some("50".into());
        assert!(matches!(
            s.build().unwrap().tilt(),
            TiltMethod::Rejection { .. }
        ));
    }

    #[test]
    fn hash_tracks_parameters() {
        let a = ModelSpec::builtin("poisson-gaussian").with_param("mean_extra", "1.5");
        let b = ModelSpec::builtin("poisson-gaussian").with_param("mean_extra", "2");
        let a1 = a.build().unwrap();
        assert_eq!(a1.model_hash(), a.build().unwrap().model_hash());
        assert_ne!(a1.model_hash(), b.build().unwrap().model_hash());
    }

    #[test]
    fn every_builtin_builds_with_example_params() {
        for (name, keys, _) in builtin_names() {
            let mut s = ModelSpec::builtin(name);
            for k in keys {
                let v = match *k {
                    "children" => "2",
                    "lo" => "-0.5",
                    "hi" => "2",
                    _ => "1",
                };
                s = s.with_param(k, v);
            }
            s.build().unwrap();
        }
    }
}
