use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgnsError, Result};
use crate::model::{Coefficients, Dims, ModelSpec};

/// Dyad interaction with multiplicative and cross-interacting noise:
///
/// ```text
/// du = (−d_u u + γ u v + F_u) dt + σ_u dW_u
/// dv = (−d_v v − γ u² + F_v) dt + σ_vu u dW_u + σ_v dW_v
/// ```
///
/// `u` is observed, `v` is hidden. Defaults are the intermittent regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DyadParams {
    pub d_u: f64,
    pub gamma: f64,
    #[serde(alias = "F_u")]
    pub f_u: f64,
    pub sigma_u: f64,
    pub d_v: f64,
    #[serde(alias = "F_v")]
    pub f_v: f64,
    pub sigma_vu: f64,
    pub sigma_v: f64,
}

impl Default for DyadParams {
    fn default() -> Self {
        DyadParams { d_u: 0.5, gamma: 3.0, f_u: 1.0, sigma_u: 0.6, d_v: 0.5, f_v: 0.3, sigma_vu: 0.8, sigma_v: 1.0 }
    }
}

impl DyadParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d_u, self.gamma, self.f_u, self.sigma_u, self.d_v, self.f_v, self.sigma_vu, self.sigma_v];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CgnsError::Parameter("dyad parameters must be finite".into()));
        }
        for (name, v) in [("sigma_u", self.sigma_u), ("sigma_vu", self.sigma_vu), ("sigma_v", self.sigma_v)] {
            if v <= 0.0 {
                return Err(CgnsError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Level of v above which it acts as anti-damping on u.
    pub fn anti_damping_threshold(&self) -> f64 {
        self.d_u / self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadModel {
    pub params: DyadParams,
}

pub fn dyad_model(params: DyadParams) -> Result<DyadModel> {
    params.validate()?;
    Ok(DyadModel { params })
}

impl ModelSpec<f64> for DyadModel {
    fn dims(&self) -> Dims {
        Dims { k: 1, l: 1, d: 1, r: 1 }
    }

    fn coefficients(&self, _t: f64, x: &DVector<f64>) -> Coefficients<f64> {
        let p = &self.params;
        let u = x[0];
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Coefficients {
            lambda_x: m(p.gamma * u),
            f_x: DVector::from_element(1, -p.d_u * u + p.f_u),
            sigma_x1: m(p.sigma_u),
            sigma_x2: m(0.0),
            lambda_y: m(-p.d_v),
            f_y: DVector::from_element(1, -p.gamma * u * u + p.f_v),
            sigma_y1: m(p.sigma_vu * u),
            sigma_y2: m(p.sigma_v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gramians;
    use crate::simulate::simulate;

    #[test]
    fn coefficients_by_hand() {
        let m = dyad_model(DyadParams::default()).unwrap();
        let x = DVector::from_element(1, 2.0);
        let c = m.coefficients(0.0, &x);
        assert_eq!(c.lambda_x[(0, 0)], 6.0);
        assert_eq!(c.f_x[0], 0.0);
        assert_eq!(c.f_y[0], -12.0 + 0.3);
        let g = gramians(&m, 0.0, &x).unwrap();
        assert!((g.syx[(0, 0)] - 0.8 * 0.6 * 2.0).abs() < 1e-15);
        assert!((g.sxx[(0, 0)] - 0.36).abs() < 1e-15);
        let g0 = gramians(&m, 0.0, &DVector::zeros(1)).unwrap();
        assert_eq!(g0.syx[(0, 0)], 0.0);
        assert!((DyadParams::default().anti_damping_threshold() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_noise() {
        let p = DyadParams { sigma_v: 0.0, ..Default::default() };
        assert!(dyad_model(p).is_err());
    }

    #[test]
    fn params_from_json_with_defaults() {
        let p: DyadParams = serde_json::from_str(r#"{"gamma": 2.5, "F_u": 0.7}"#).unwrap();
        assert_eq!(p.gamma, 2.5);
        assert_eq!(p.f_u, 0.7);
        assert_eq!(p.sigma_v, 1.0);
        assert!(serde_json::from_str::<DyadParams>(r#"{"gama": 2.5}"#).is_err());
    }

    #[test]
    fn u_is_positively_skewed() {
        // statistical: pooled over 20 seeds of length 60
        let m = dyad_model(DyadParams::default()).unwrap();
        let mut samples = Vec::new();
        for seed in 0..20 {
            let tr = simulate(&m, DVector::from_element(1, 0.5), DVector::zeros(1), 12_000, 0.005, seed).unwrap();
            samples.extend(tr.x_path.iter().skip(1000).map(|x| x[0]));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = samples.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        assert!(skew > 0.5, "skewness {skew}");
    }
}
