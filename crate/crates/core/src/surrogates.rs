//! Differentiable surrogates `s(z)` of the pair-misordering indicator
//! `1[z <= 0]`, where `z = f(x+) - f(x-)`.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surrogate {
    /// `ln(1 + e^{-z}) / ln 2`
    Log,
    /// `(mu - z)^p` for `z < mu`, else 0
    Poly { mu: f64, p: u32 },
}

impl Default for Surrogate {
    fn default() -> Self {
        Surrogate::poly_default()
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Surrogate::Log => f.write_str("log"),
            Surrogate::Poly { mu, p } => write!(f, "poly(mu={mu},p={p})"),
        }
    }
}

impl Surrogate {
    /// Experiment default `(mu = 0.1, p = 3)`.
    pub fn poly_default() -> Self {
        Surrogate::Poly { mu: 0.1, p: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Surrogate::Log => Ok(()),
            Surrogate::Poly { mu, p } => {
                if p < 1 {
                    return Err(Error::invalid("poly surrogate exponent must be >= 1"));
                }
                if !mu.is_finite() {
                    return Err(Error::NonFinite("poly surrogate margin".into()));
                }
                Ok(())
            }
        }
    }

    /// Surrogate value; no input checking (hot loop).
    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Surrogate::Log => {
                // ln(1 + e^{-z}) evaluated without overflow on either side
                let v = if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                };
                v / LN_2
            }
            Surrogate::Poly { mu, p } => {
                if z < mu {
                    (mu - z).powi(p as i32)
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative `ds/dz`; no input checking (hot loop). For `poly` the
    /// one-sided value 0 is returned at `z = mu`.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Surrogate::Log => {
                // -e^{-z} / (1 + e^{-z}) = -1 / (1 + e^{z})
                let sig_neg = if z >= 0.0 {
                    let e = (-z).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + z.exp())
                };
                -sig_neg / LN_2
            }
            Surrogate::Poly { mu, p } => {
                if z < mu {
                    -(p as f64) * (mu - z).powi(p as i32 - 1)
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn surrogate_eval(spec: &Surrogate, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("surrogate argument {z}")));
    }
    spec.validate()?;
    Ok(spec.value(z))
}

pub fn surrogate_grad(spec: &Surrogate, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("surrogate argument {z}")));
    }
    spec.validate()?;
    Ok(spec.derivative(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_values() {
        assert_abs_diff_eq!(surrogate_eval(&Surrogate::Log, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        let p1 = Surrogate::Poly { mu: 1.0, p: 3 };
        assert_eq!(surrogate_eval(&p1, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            surrogate_eval(&Surrogate::poly_default(), 0.0).unwrap(),
            0.001,
            epsilon = 1e-15
        );
    }

    #[test]
    fn closed_form_gradients() {
        assert_abs_diff_eq!(
            surrogate_grad(&Surrogate::Log, 0.0).unwrap(),
            -1.0 / (2.0 * LN_2),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(surrogate_grad(&Surrogate::Log, 0.0).unwrap(), -0.72135, epsilon = 1e-5);
        let p1 = Surrogate::Poly { mu: 1.0, p: 3 };
        assert_eq!(surrogate_grad(&p1, 0.0).unwrap(), -3.0);
        assert_eq!(surrogate_grad(&p1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn stable_at_extremes() {
        let big = Surrogate::Log.value(-700.0);
        assert!(big.is_finite());
        assert_abs_diff_eq!(big, 700.0 / LN_2, epsilon = 1e-9);
        assert!(Surrogate::Log.value(800.0) >= 0.0);
        assert_abs_diff_eq!(Surrogate::Log.derivative(-800.0), -1.0 / LN_2, epsilon = 1e-15);
        assert_eq!(Surrogate::Log.derivative(800.0), -0.0);
    }

    #[test]
    fn rejects_non_finite_and_bad_exponent() {
        assert!(surrogate_eval(&Surrogate::Log, f64::NAN).is_err());
        assert!(surrogate_grad(&Surrogate::Log, f64::INFINITY).is_err());
        assert!(surrogate_eval(&Surrogate::Poly { mu: 0.1, p: 0 }, 0.0).is_err());
    }
}
