use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgnsError, Result};
use crate::filter::equilibrium_variance_2d;
use crate::model::{Coefficients, Dims, ModelSpec};

/// Two-dimensional linear model without noise cross-interaction:
///
/// ```text
/// dx = (a11 x + a12 y) dt + s1 dW1
/// dy = (a21 x + a22 y) dt + s2 dW2
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Linear2dParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for Linear2dParams {
    fn default() -> Self {
        Linear2dParams { a11: -1.0, a12: 1.0, a21: 0.0, a22: -1.0, s1: 1.0, s2: 1.0 }
    }
}

impl Linear2dParams {
    pub fn validate(&self) -> Result<()> {
        if [self.a11, self.a12, self.a21, self.a22, self.s1, self.s2].iter().any(|v| !v.is_finite()) {
            return Err(CgnsError::Parameter("linear model parameters must be finite".into()));
        }
        if self.a22 >= 0.0 {
            return Err(CgnsError::Parameter(format!(
                "a22 must be negative for the hidden state to have an equilibrium, got {}",
                self.a22
            )));
        }
        if self.s1 <= 0.0 || self.s2 <= 0.0 {
            return Err(CgnsError::Parameter("s1 and s2 must be positive".into()));
        }
        Ok(())
    }

    /// Stationary filter variance.
    pub fn equilibrium_variance(&self) -> Result<f64> {
        equilibrium_variance_2d(self.a12, self.a22, self.s1, self.s2)
    }

    /// `a22 + s2² / R` at the stationary filter variance, which is positive
    /// for every admissible parameter set.
    pub fn equilibrium_gy(&self) -> Result<f64> {
        let r = self.equilibrium_variance()?;
        Ok(self.a22 + self.s2 * self.s2 / r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear2dModel {
    pub params: Linear2dParams,
}

pub fn linear2d_model(params: Linear2dParams) -> Result<Linear2dModel> {
    params.validate()?;
    Ok(Linear2dModel { params })
}

impl ModelSpec<f64> for Linear2dModel {
    fn dims(&self) -> Dims {
        Dims { k: 1, l: 1, d: 1, r: 1 }
    }

    fn coefficients(&self, _t: f64, x: &DVector<f64>) -> Coefficients<f64> {
        let p = &self.params;
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Coefficients {
            lambda_x: m(p.a12),
            f_x: DVector::from_element(1, p.a11 * x[0]),
            sigma_x1: m(p.s1),
            sigma_x2: m(0.0),
            lambda_y: m(p.a22),
            f_y: DVector::from_element(1, p.a21 * x[0]),
            sigma_y1: m(0.0),
            sigma_y2: m(p.s2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gain_matrices_do_not_depend_on_x() {
        let m = linear2d_model(Linear2dParams { a11: 0.3, a21: -0.7, ..Default::default() }).unwrap();
        let a = m.coefficients(0.0, &DVector::from_element(1, -4.0));
        let b = m.coefficients(3.0, &DVector::from_element(1, 11.0));
        assert_eq!(a.lambda_x, b.lambda_x);
        assert_eq!(a.lambda_y, b.lambda_y);
        assert_eq!(a.sigma_x1, b.sigma_x1);
        assert_eq!(a.sigma_y2, b.sigma_y2);
    }

    #[test]
    fn unstable_hidden_state_is_rejected() {
        assert!(linear2d_model(Linear2dParams { a22: 0.0, ..Default::default() }).is_err());
        assert!(linear2d_model(Linear2dParams { a22: 0.2, ..Default::default() }).is_err());
    }

    proptest! {
        #[test]
        fn equilibrium_solves_the_riccati_equation(a12 in 0.1f64..3.0, a22 in -3.0f64..-0.05, s1 in 0.1f64..2.0, s2 in 0.1f64..2.0) {
            let p = Linear2dParams { a11: 0.0, a12, a21: 0.0, a22, s1, s2 };
            let r = p.equilibrium_variance().unwrap();
            let residual = 2.0 * a22 * r + s2 * s2 - (r * a12).powi(2) / (s1 * s1);
            prop_assert!(residual.abs() < 1e-12 * (1.0 + s2 * s2));
            let gy = p.equilibrium_gy().unwrap();
            prop_assert!(gy > 0.0);
            // scalar E = 1 − Gy dt
            let dt = 0.01;
            prop_assert!((1.0 - gy * dt).abs() < 1.0);
        }
    }
}
