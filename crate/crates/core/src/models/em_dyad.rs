use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::{LinearInTheta, Regressors};
use crate::error::{CgnsError, Result};
use crate::model::{Coefficients, Dims, ModelSpec};

/// Dyad without noise cross-interaction, the test bed for parameter
/// estimation:
///
/// ```text
/// du = (−d_u u + γ1 u v + F_u) dt + σ_u dW_u
/// dv = (−d_v v − γ2 u² + F_v) dt + σ_v dW_v
/// ```
///
/// θ = (d_u, γ1, F_u, d_v, γ2, F_v); the noise amplitudes are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmDyadParams {
    pub d_u: f64,
    pub gamma1: f64,
    #[serde(alias = "F_u")]
    pub f_u: f64,
    pub d_v: f64,
    pub gamma2: f64,
    #[serde(alias = "F_v")]
    pub f_v: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
}

impl Default for EmDyadParams {
    fn default() -> Self {
        EmDyadParams { d_u: 1.0, gamma1: 3.0, f_u: 1.0, d_v: 1.0, gamma2: 3.0, f_v: 0.8, sigma_u: 0.5, sigma_v: 1.0 }
    }
}

pub const EM_DYAD_NAMES: [&str; 6] = ["d_u", "gamma1", "F_u", "d_v", "gamma2", "F_v"];

impl EmDyadParams {
    pub fn validate(&self) -> Result<()> {
        if !self.theta().iter().all(|v| v.is_finite()) {
            return Err(CgnsError::Parameter("drift parameters must be finite".into()));
        }
        if !(self.sigma_u > 0.0) || !(self.sigma_v > 0.0) {
            return Err(CgnsError::Parameter("sigma_u and sigma_v must be positive".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.d_u, self.gamma1, self.f_u, self.d_v, self.gamma2, self.f_v])
    }

    pub fn with_theta(&self, theta: &DVector<f64>) -> Result<Self> {
        if theta.len() != 6 {
            return Err(CgnsError::Shape(format!("θ has {} entries, expected 6", theta.len())));
        }
        Ok(EmDyadParams {
            d_u: theta[0],
            gamma1: theta[1],
            f_u: theta[2],
            d_v: theta[3],
            gamma2: theta[4],
            f_v: theta[5],
            ..*self
        })
    }

    /// d_u / γ1, the level of v above which u is anti-damped.
    pub fn anti_damping_threshold(&self) -> f64 {
        self.d_u / self.gamma1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmDyadModel {
    pub params: EmDyadParams,
}

pub fn em_dyad_model(params: EmDyadParams) -> Result<EmDyadModel> {
    params.validate()?;
    Ok(EmDyadModel { params })
}

impl ModelSpec<f64> for EmDyadModel {
    fn dims(&self) -> Dims {
        Dims { k: 1, l: 1, d: 1, r: 1 }
    }

    fn coefficients(&self, _t: f64, x: &DVector<f64>) -> Coefficients<f64> {
        let p = &self.params;
        let u = x[0];
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Coefficients {
            lambda_x: m(p.gamma1 * u),
            f_x: DVector::from_element(1, -p.d_u * u + p.f_u),
            sigma_x1: m(p.sigma_u),
            sigma_x2: m(0.0),
            lambda_y: m(-p.d_v),
            f_y: DVector::from_element(1, -p.gamma2 * u * u + p.f_v),
            sigma_y1: m(0.0),
            sigma_y2: m(p.sigma_v),
        }
    }
}

/// The θ-family of [`EmDyadModel`] at fixed noise amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmDyadFamily {
    pub sigma_u: f64,
    pub sigma_v: f64,
}

impl LinearInTheta for EmDyadFamily {
    type Model = EmDyadModel;

    fn dims(&self) -> Dims {
        Dims { k: 1, l: 1, d: 1, r: 1 }
    }

    fn param_names(&self) -> Vec<String> {
        EM_DYAD_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn regressors(&self, _t: f64, x: &DVector<f64>) -> Regressors {
        let u = x[0];
        let mut r = Regressors::zeros(self.dims(), 6);
        r.c[0][0] = -u;
        r.m[1][(0, 0)] = u;
        r.c[2][0] = 1.0;
        r.m[3][(1, 0)] = -1.0;
        r.c[4][1] = -u * u;
        r.c[5][1] = 1.0;
        r
    }

    fn noise_gramian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.sigma_u * self.sigma_u, self.sigma_v * self.sigma_v]))
    }

    fn model_at(&self, theta: &DVector<f64>) -> Result<EmDyadModel> {
        let base = EmDyadParams { sigma_u: self.sigma_u, sigma_v: self.sigma_v, ..Default::default() };
        em_dyad_model(base.with_theta(theta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gramians;
    use crate::simulate::rng_from_seed;
    use rand::Rng;

    #[test]
    fn zero_noise_euler_step_at_truth() {
        let m = em_dyad_model(EmDyadParams::default()).unwrap();
        let c = m.coefficients(0.0, &DVector::from_element(1, 1.0));
        let du = c.drift_x(&DVector::zeros(1))[0] * 0.001;
        assert_eq!(du, 0.0);
    }

    #[test]
    fn no_cross_noise_anywhere() {
        let m = em_dyad_model(EmDyadParams::default()).unwrap();
        for u in [-3.0, 0.0, 0.4, 7.0] {
            let g = gramians(&m, 0.0, &DVector::from_element(1, u)).unwrap();
            assert!(g.no_cross_noise());
        }
    }

    #[test]
    fn regressors_reproduce_the_drift() {
        let fam = EmDyadFamily { sigma_u: 0.5, sigma_v: 1.0 };
        let mut rng = rng_from_seed(11);
        for _ in 0..50 {
            let theta = DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
            let x = DVector::from_element(1, rng.random_range(-2.0..2.0));
            let y = DVector::from_element(1, rng.random_range(-2.0..2.0));
            let c = fam.model_at(&theta).unwrap().coefficients(0.0, &x);
            let dz = fam.regressors(0.0, &x).drift(&theta, &y);
            assert!((dz[0] - c.drift_x(&y)[0]).abs() < 1e-12);
            assert!((dz[1] - c.drift_y(&y)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_at_truth() {
        assert!((EmDyadParams::default().anti_damping_threshold() - 1.0 / 3.0).abs() < 1e-15);
    }
}
