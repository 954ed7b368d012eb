//! JSON problem files.
//!
//! ```json
//! {
//!   "n": 2, "vars": ["x", "y"],
//!   "D": ["x^2 + y^2"], "d": [1.0], "I": [],
//!   "lambda": 1.0,
//!   "integrator": { "method": "rkf45_adaptive", "abs_tol": 1e-10, "rel_tol": 1e-10, "t_end": 10 },
//!   "initial_conditions": [[2.0, 0.0]],
//!   "seed": 7
//! }
//! ```
//!
//! Optional keys: `base_field`, `p_prime`, `h_override`, `rank_tol`, `proper_I`,
//! `sampling` (`center`, `half_width`), `samples`, and `stability`
//! (`point`, `radius`, `samples`).

use std::path::Path;

use serde::Deserialize;

use crate::fieldforge::{RateVariant, SpecError, SystemSpec};
use crate::flow::{IntegratorConfig, Method, DEFAULT_MAX_STEPS, DEFAULT_R_MAX};
use crate::verify::{SampleBox, StabilityProbe, VerifyConfig};

#[derive(Debug, thiserror::Error)]
pub enum SpecFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed spec file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("length mismatch {0}")]
    LengthMismatch(String),
    #[error("unsupported format version {0}")]
    Format(u32),
    #[error("invalid integrator block: {0}")]
    Integrator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Rk4Fixed,
    #[default]
    Rkf45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    #[serde(default)]
    pub method: MethodName,
    pub dt: Option<f64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub t_end: Option<f64>,
    #[serde(rename = "R_max")]
    pub r_max: Option<f64>,
    pub stride: Option<usize>,
    pub max_steps: Option<usize>,
}

impl IntegratorBlock {
    pub fn to_config(&self) -> Result<IntegratorConfig, SpecFileError> {
        let method = match self.method {
            MethodName::Rk4Fixed => Method::Rk4Fixed {
                dt: self.dt.ok_or_else(|| SpecFileError::Integrator("rk4_fixed needs dt".into()))?,
            },
            MethodName::Rkf45Adaptive => {
                let abs_tol = self.abs_tol.unwrap_or(1e-10);
                Method::Rkf45Adaptive {
                    abs_tol,
                    rel_tol: self.rel_tol.unwrap_or(abs_tol),
                }
            }
        };
        let cfg = IntegratorConfig {
            method,
            t_end: self.t_end.unwrap_or(10.0),
            r_max: self.r_max.unwrap_or(DEFAULT_R_MAX),
            stride: self.stride.unwrap_or(1),
            max_steps: self.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
        };
        cfg.validate()
            .map_err(|e| SpecFileError::Integrator(e.to_string()))?;
        Ok(cfg)
    }
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        IntegratorBlock {
            method: MethodName::Rkf45Adaptive,
            dt: None,
            abs_tol: None,
            rel_tol: None,
            t_end: None,
            r_max: None,
            stride: None,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub center: Option<Vec<f64>>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    pub point: Vec<f64>,
    pub radius: f64,
    pub samples: Option<usize>,
}

/// Raw on-disk document.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub format: Option<u32>,
    pub n: usize,
    pub vars: Vec<String>,
    #[serde(rename = "D")]
    pub dissipated: Vec<String>,
    pub d: Vec<f64>,
    #[serde(rename = "I", default)]
    pub conserved: Vec<String>,
    pub base_field: Option<Vec<String>>,
    #[serde(default)]
    pub lambda: f64,
    pub p_prime: Option<usize>,
    pub h_override: Option<Vec<String>>,
    pub rank_tol: Option<f64>,
    #[serde(rename = "proper_I", default)]
    pub proper_i: bool,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub initial_conditions: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    pub sampling: Option<SamplingBlock>,
    pub samples: Option<usize>,
    pub stability: Option<StabilityBlock>,
}

/// A validated problem ready to run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: SystemSpec,
    pub integrator: IntegratorConfig,
    pub initial_conditions: Vec<Vec<f64>>,
    pub seed: u64,
    pub verify: VerifyConfig,
    pub stability: Option<StabilityProbe>,
}

impl SpecFile {
    pub fn from_json(text: &str) -> Result<Self, SpecFileError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn into_problem(self, variant: RateVariant) -> Result<Problem, SpecFileError> {
        if let Some(f) = self.format {
            if f != 1 {
                return Err(SpecFileError::Format(f));
            }
        }
        if self.vars.len() != self.n {
            return Err(SpecFileError::LengthMismatch("vars vs n".into()));
        }
        let mut builder = SystemSpec::builder(&self.vars)
            .dissipated(&self.dissipated)
            .targets(&self.d)
            .conserved(&self.conserved)
            .lambda(self.lambda)
            .proper_i(self.proper_i)
            .rate_variant(variant);
        if let Some(b) = &self.base_field {
            builder = builder.base_field(b);
        }
        if let Some(p) = self.p_prime {
            builder = builder.p_prime(p);
        }
        if let Some(h) = &self.h_override {
            builder = builder.h_override(h);
        }
        if let Some(t) = self.rank_tol {
            builder = builder.rank_tol(t);
        }
        let spec = builder.build()?;
        for (i, x) in self.initial_conditions.iter().enumerate() {
            if x.len() != self.n {
                return Err(SpecFileError::LengthMismatch(format!(
                    "initial_conditions[{i}] vs n"
                )));
            }
        }
        let integrator = self.integrator.to_config()?;
        let mut verify = VerifyConfig {
            seed: self.seed,
            integrator,
            ..VerifyConfig::default()
        };
        if let Some(s) = self.samples {
            verify.samples = s;
        }
        if let Some(s) = &self.sampling {
            if matches!(&s.center, Some(c) if c.len() != self.n) {
                return Err(SpecFileError::LengthMismatch("sampling.center vs n".into()));
            }
            verify.sampling = SampleBox {
                center: s.center.clone(),
                half_width: s.half_width.unwrap_or(verify.sampling.half_width),
            };
        }
        let stability = match self.stability {
            Some(b) if b.point.len() != self.n => {
                return Err(SpecFileError::LengthMismatch("stability.point vs n".into()))
            }
            Some(b) => Some(StabilityProbe {
                point: b.point,
                radius: b.radius,
                samples: b.samples.unwrap_or(500),
            }),
            None => None,
        };
        Ok(Problem {
            spec,
            integrator,
            initial_conditions: self.initial_conditions,
            seed: self.seed,
            verify,
            stability,
        })
    }
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Self, SpecFileError> {
        SpecFile::from_json(text)?.into_problem(RateVariant::Standard)
    }

    pub fn load(path: &Path, variant: RateVariant) -> Result<Self, SpecFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SpecFile::from_json(&text)?.into_problem(variant)
    }

    /// Override the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.verify.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = r#"{
        "n": 2, "vars": ["x", "y"], "D": ["x^2 + y^2"], "d": [1.0],
        "lambda": 1.0, "initial_conditions": [[2.0, 0.0]], "seed": 3
    }"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let p = Problem::from_json(CIRCLE).unwrap();
        assert_eq!(p.spec.p(), 1);
        assert_eq!(p.spec.k(), 0);
        assert_eq!(p.seed, 3);
        assert_eq!(p.integrator.t_end, 10.0);
        assert!(matches!(p.integrator.method, Method::Rkf45Adaptive { abs_tol, .. } if abs_tol == 1e-10));
    }

    #[test]
    fn length_mismatch_message() {
        let text = CIRCLE.replace("\"d\": [1.0]", "\"d\": [1.0, 2.0]");
        let err = Problem::from_json(&text).unwrap_err();
        assert_eq!(err.to_string(), "length mismatch d vs D");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_blocks() {
        let text = CIRCLE.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        assert!(matches!(Problem::from_json(&text), Err(SpecFileError::Json(_))));
        let text = CIRCLE.replace("\"seed\": 3", "\"seed\": 3, \"integrator\": {\"method\": \"rk4_fixed\"}");
        assert!(matches!(Problem::from_json(&text), Err(SpecFileError::Integrator(_))));
        let text = CIRCLE.replace("[[2.0, 0.0]]", "[[2.0]]");
        assert!(matches!(Problem::from_json(&text), Err(SpecFileError::LengthMismatch(_))));
        let text = CIRCLE.replace("\"n\": 2", "\"n\": 3");
        assert!(matches!(Problem::from_json(&text), Err(SpecFileError::LengthMismatch(_))));
    }

    #[test]
    fn full_file() {
        let text = r#"{
            "format": 1, "n": 3, "vars": ["x1", "x2", "x3"],
            "D": ["x1^2 + 0.5*x2^2"], "d": [1.5],
            "I": ["0.5*(x1^2 + x2^2 + x3^2)"],
            "base_field": ["x2*x3", "-2*x1*x3", "x1*x2"],
            "lambda": 0.5, "p_prime": 1, "rank_tol": 1e-9, "proper_I": true,
            "integrator": {"method": "rk4_fixed", "dt": 0.01, "t_end": 5, "R_max": 100, "stride": 2},
            "initial_conditions": [[1.1, 0.9, 1.0]],
            "sampling": {"center": [1, 1, 1], "half_width": 0.5},
            "samples": 10,
            "stability": {"point": [0, 0, 1], "radius": 0.1},
            "seed": 11
        }"#;
        let p = Problem::from_json(text).unwrap();
        assert!(p.spec.proper_i());
        assert_eq!(p.spec.rank_tol(), 1e-9);
        assert_eq!(p.integrator.stride, 2);
        assert_eq!(p.integrator.r_max, 100.0);
        assert_eq!(p.verify.samples, 10);
        assert_eq!(p.verify.sampling.half_width, 0.5);
        assert_eq!(p.stability.unwrap().samples, 500);
    }
}
