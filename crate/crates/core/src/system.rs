//! Linear time-varying plant/input/output models and their JSON schema.

use crate::domain::TimeDomain;
use crate::error::{Error, Result};
use crate::matfun::MatrixFunction;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// An LTV control system
///
/// ```text
/// x'(t) = A(t) x(t) + B(t) u(t)
/// y(t)  = C(t) x(t) + D(t) u(t)
/// ```
///
/// with `A` required and `B`, `C`, `D` optional. Systems are immutable after
/// construction; all analyses take them by shared reference.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    name: String,
    a: MatrixFunction,
    b: Option<MatrixFunction>,
    c: Option<MatrixFunction>,
    d: Option<MatrixFunction>,
    domain: TimeDomain,
}

impl LtvSystem {
    pub fn new(
        name: impl Into<String>,
        a: MatrixFunction,
        b: Option<MatrixFunction>,
        c: Option<MatrixFunction>,
        d: Option<MatrixFunction>,
        domain: TimeDomain,
    ) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Dimension(format!(
                "plant matrix A must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if let Some(b) = &b {
            if b.rows() != n {
                return Err(Error::Dimension(format!(
                    "B must have {n} rows to match A, got {}x{}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        if let Some(c) = &c {
            if c.cols() != n {
                return Err(Error::Dimension(format!(
                    "C must have {n} columns to match A, got {}x{}",
                    c.rows(),
                    c.cols()
                )));
            }
        }
        if let Some(d) = &d {
            let (b, c) = match (&b, &c) {
                (Some(b), Some(c)) => (b, c),
                _ => {
                    return Err(Error::Dimension(
                        "feedthrough D requires both B and C".into(),
                    ))
                }
            };
            if d.rows() != c.rows() || d.cols() != b.cols() {
                return Err(Error::Dimension(format!(
                    "D must be {}x{}, got {}x{}",
                    c.rows(),
                    b.cols(),
                    d.rows(),
                    d.cols()
                )));
            }
        }
        Ok(LtvSystem {
            name: name.into(),
            a,
            b,
            c,
            d,
            domain,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of states `n`.
    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn plant(&self) -> &MatrixFunction {
        &self.a
    }

    pub fn input(&self) -> Option<&MatrixFunction> {
        self.b.as_ref()
    }

    pub fn output(&self) -> Option<&MatrixFunction> {
        self.c.as_ref()
    }

    pub fn feedthrough(&self) -> Option<&MatrixFunction> {
        self.d.as_ref()
    }

    pub fn domain(&self) -> &TimeDomain {
        &self.domain
    }

    pub fn require_input(&self) -> Result<&MatrixFunction> {
        self.b.as_ref().ok_or_else(|| Error::MissingInput {
            system: self.name.clone(),
        })
    }

    pub fn require_output(&self) -> Result<&MatrixFunction> {
        self.c.as_ref().ok_or_else(|| Error::MissingOutput {
            system: self.name.clone(),
        })
    }

    /// Evaluates `A(t)` after checking `t` against the domain.
    pub fn eval_plant(&self, t: f64) -> Result<DMatrix<f64>> {
        self.domain.check(t)?;
        self.a.eval(t)
    }

    pub fn eval_input(&self, t: f64) -> Result<DMatrix<f64>> {
        self.domain.check(t)?;
        self.require_input()?.eval(t)
    }

    pub fn eval_output(&self, t: f64) -> Result<DMatrix<f64>> {
        self.domain.check(t)?;
        self.require_output()?.eval(t)
    }

    pub fn from_config(config: &SystemConfig) -> Result<Self> {
        let a = MatrixFunction::parse(&config.a)?;
        if a.rows() != config.n || a.cols() != config.n {
            return Err(Error::Schema(format!(
                "field n = {} disagrees with the {}x{} shape of A",
                config.n,
                a.rows(),
                a.cols()
            )));
        }
        let parse_opt = |g: &Option<Vec<Vec<String>>>| -> Result<Option<MatrixFunction>> {
            g.as_ref().map(|g| MatrixFunction::parse(g)).transpose()
        };
        let domain = match &config.domain {
            Some(d) => d.build()?,
            None => TimeDomain::real_line(),
        };
        LtvSystem::new(
            config.name.clone(),
            a,
            parse_opt(&config.b)?,
            parse_opt(&config.c)?,
            parse_opt(&config.d)?,
            domain,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: SystemConfig =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        LtvSystem::from_config(&config)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        LtvSystem::from_json(&std::fs::read_to_string(path)?)
    }

    /// The canonical config document for this system. Serializing it is
    /// deterministic, which makes generated systems byte-stable.
    pub fn to_config(&self) -> SystemConfig {
        SystemConfig {
            name: self.name.clone(),
            n: self.dim(),
            a: self.a.to_grid(),
            b: self.b.as_ref().map(MatrixFunction::to_grid),
            c: self.c.as_ref().map(MatrixFunction::to_grid),
            d: self.d.as_ref().map(MatrixFunction::to_grid),
            domain: Some(DomainConfig::from_domain(&self.domain)),
        }
    }
}

/// On-disk JSON schema for [`LtvSystem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub name: String,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<String>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<String>>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<String>>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
}

/// Domain section of the config: `min`/`max` accept a number or the strings
/// `"inf"` / `"-inf"`; a missing bound is unbounded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<BoundValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<BoundValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundValue {
    Number(f64),
    Named(String),
}

impl BoundValue {
    fn resolve(&self, sign: f64) -> Result<f64> {
        match self {
            BoundValue::Number(v) => Ok(*v),
            BoundValue::Named(s) => match s.trim() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(Error::Schema(format!(
                    "domain bound must be a number, \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
        .map(|v| if v.is_nan() { sign * f64::INFINITY } else { v })
    }
}

impl DomainConfig {
    pub fn build(&self) -> Result<TimeDomain> {
        let lower = match &self.min {
            Some(b) => b.resolve(-1.0)?,
            None => f64::NEG_INFINITY,
        };
        let upper = match &self.max {
            Some(b) => b.resolve(1.0)?,
            None => f64::INFINITY,
        };
        // Excluded points may sit outside [lower, upper] (e.g. a pole below
        // the domain); only the ones inside ever affect evaluation.
        TimeDomain::new(lower, upper, self.excluded.clone())
    }

    pub fn from_domain(d: &TimeDomain) -> Self {
        let bound = |v: f64| {
            if v == f64::INFINITY {
                Some(BoundValue::Named("inf".into()))
            } else if v == f64::NEG_INFINITY {
                Some(BoundValue::Named("-inf".into()))
            } else {
                Some(BoundValue::Number(v))
            }
        };
        DomainConfig {
            min: bound(d.lower()),
            max: bound(d.upper()),
            excluded: d.excluded().to_vec(),
        }
    }
}
