//! Robust cost functions with analytic first and second derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing offset for the `l_1/2` cost, which keeps its derivative finite at 0.
pub const LHALF_EPS: f64 = 1e-6;

pub const DEFAULT_HUBER_DELTA: f64 = 0.1;

/// Cost `rho(x)` on nonnegative residual angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFunction {
    /// `x * exp(tau * x)`
    Exponential { tau: f64 },
    /// `x^2`
    L2,
    /// `x`
    L1,
    /// `sqrt(x + eps) - sqrt(eps)`
    LHalf,
    /// `x^2 / 2` below `delta`, `delta * (x - delta / 2)` above.
    Huber { delta: f64 },
}

/// Value, first derivative and second derivative at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostValue {
    pub rho: f64,
    pub grad: f64,
    pub hess: f64,
}

impl CostFunction {
    pub fn exponential() -> Self {
        CostFunction::Exponential { tau: 1.0 }
    }

    pub fn huber() -> Self {
        CostFunction::Huber {
            delta: DEFAULT_HUBER_DELTA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostFunction::Exponential { .. } => "exp",
            CostFunction::L2 => "l2",
            CostFunction::L1 => "l1",
            CostFunction::LHalf => "lhalf",
            CostFunction::Huber { .. } => "huber",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            CostFunction::Exponential { tau } => Some(*tau),
            _ => None,
        }
    }

    /// Same kind with the penalty parameter replaced; other kinds are unchanged.
    pub fn with_tau(self, tau: f64) -> Self {
        match self {
            CostFunction::Exponential { .. } => CostFunction::Exponential { tau },
            other => other,
        }
    }

    pub fn rho(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Exponential { tau } => x * (tau * x).exp(),
            CostFunction::L2 => x * x,
            CostFunction::L1 => x,
            CostFunction::LHalf => (x + LHALF_EPS).sqrt() - LHALF_EPS.sqrt(),
            CostFunction::Huber { delta } => {
                if x <= delta {
                    0.5 * x * x
                } else {
                    delta * (x - 0.5 * delta)
                }
            }
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Exponential { tau } => (1.0 + tau * x) * (tau * x).exp(),
            CostFunction::L2 => 2.0 * x,
            CostFunction::L1 => 1.0,
            CostFunction::LHalf => 0.5 / (x + LHALF_EPS).sqrt(),
            CostFunction::Huber { delta } => x.min(delta),
        }
    }

    pub fn hess(&self, x: f64) -> f64 {
        match *self {
            CostFunction::Exponential { tau } => (2.0 * tau + tau * tau * x) * (tau * x).exp(),
            CostFunction::L2 => 2.0,
            CostFunction::L1 => 0.0,
            CostFunction::LHalf => -0.25 / (x + LHALF_EPS).powf(1.5),
            CostFunction::Huber { delta } => {
                if x <= delta {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// All three quantities at `x >= 0`.
    pub fn eval(&self, x: f64) -> Result<CostValue> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::Domain(x));
        }
        Ok(CostValue {
            rho: self.rho(x),
            grad: self.grad(x),
            hess: self.hess(x),
        })
    }
}

impl fmt::Display for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostFunction::Exponential { tau } => write!(f, "exp(tau={tau})"),
            CostFunction::Huber { delta } => write!(f, "huber(delta={delta})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CostFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(CostFunction::exponential()),
            "l2" => Ok(CostFunction::L2),
            "l1" => Ok(CostFunction::L1),
            "lhalf" | "l_half" => Ok(CostFunction::LHalf),
            "huber" => Ok(CostFunction::huber()),
            other => Err(Error::Config {
                key: "cost".into(),
                msg: format!("unknown cost '{other}' (expected exp, l1, l2, lhalf, huber)"),
            }),
        }
    }
}
