//! Regression losses on the predicted distance `d̂` against the true distance `d`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Predicted distances are clamped to this floor before any logarithm.
pub const DHAT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LossKind {
    Mse,
    Mae,
    /// `d̂ − (d − 2) ln d̂`, minimised at `d − 2`.
    ReChi2,
    /// Poisson negative log-likelihood `d̂ − d ln d̂`, minimised at `d`.
    Pnll,
    /// χ²(kd) negative log-likelihood `d̂ − (d − 2/k) ln d̂`.
    Gnll { k: f64 },
}

impl LossKind {
    pub const TABLE: [LossKind; 4] = [LossKind::Mse, LossKind::Mae, LossKind::ReChi2, LossKind::Pnll];

    pub fn gnll(k: f64) -> Result<Self> {
        if k > 0.0 && k.is_finite() {
            Ok(LossKind::Gnll { k })
        } else {
            Err(Error::invalid(format!("GNLL requires finite k > 0, got {k}")))
        }
    }

    /// Coefficient of `−ln d̂` for the log-likelihood family, clamped at zero.
    fn log_coefficient(&self, d: f64) -> Option<f64> {
        match *self {
            LossKind::ReChi2 => Some((d - 2.0).max(0.0)),
            LossKind::Pnll => Some(d),
            LossKind::Gnll { k } => Some((d - 2.0 / k).max(0.0)),
            LossKind::Mse | LossKind::Mae => None,
        }
    }

    /// Loss value and `∂loss/∂d̂`.
    ///
    /// `d̂` is clamped to [`DHAT_FLOOR`]; the derivative is evaluated at the clamped
    /// point and passed straight through to the unclamped input.
    pub fn eval(&self, dhat: f64, d: f64) -> Result<(f64, f64)> {
        if !dhat.is_finite() || !d.is_finite() {
            return Err(Error::NonFinite(format!("loss input d̂={dhat}, d={d}")));
        }
        if d < 0.0 {
            return Err(Error::invalid(format!("negative target distance {d}")));
        }
        match *self {
            LossKind::Mse => {
                let e = dhat - d;
                Ok((e * e, 2.0 * e))
            }
            LossKind::Mae => {
                let e = dhat - d;
                let g = if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                Ok((e.abs(), g))
            }
            _ => {
                let c = self.log_coefficient(d).expect("log family");
                let x = dhat.max(DHAT_FLOOR);
                if x <= 0.0 {
                    return Err(Error::NonFinite(format!("d̂ {dhat} not positive after flooring")));
                }
                if c == 0.0 {
                    return Ok((x, 1.0));
                }
                Ok((x - c * x.ln(), 1.0 - c / x))
            }
        }
    }

    /// Loss value only.
    pub fn value(&self, dhat: f64, d: f64) -> Result<f64> {
        self.eval(dhat, d).map(|(v, _)| v)
    }

    /// Analytic minimiser over `d̂ > 0` (`None` for losses minimised at the floor).
    pub fn argmin(&self, d: f64) -> Option<f64> {
        match self.log_coefficient(d) {
            None => Some(d),
            Some(c) if c > 0.0 => Some(c),
            Some(_) => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mse => f.write_str("mse"),
            LossKind::Mae => f.write_str("mae"),
            LossKind::ReChi2 => f.write_str("rechi2"),
            LossKind::Pnll => f.write_str("pnll"),
            LossKind::Gnll { k } => write!(f, "gnll:{k}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "rechi2" | "rechi²" => Ok(LossKind::ReChi2),
            "pnll" => Ok(LossKind::Pnll),
            other => match other.strip_prefix("gnll:") {
                Some(k) => {
                    let k: f64 = k
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad GNLL k in {s:?}")))?;
                    LossKind::gnll(k)
                }
                None => Err(Error::invalid(format!(
                    "unknown loss {s:?} (expected mse, mae, rechi2, pnll or gnll:<k>)"
                ))),
            },
        }
    }
}

impl From<LossKind> for String {
    fn from(k: LossKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for LossKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
