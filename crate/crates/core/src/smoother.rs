//! Backward smoother and the per-step coefficients it shares with the
//! online smoother.
//!
//! The backward recursion is written as an affine map of the next smoother
//! state,
//!
//! ```text
//! μs_j = E μs_{j+1} + b
//! Rs_j = E Rs_{j+1} E† + P
//! ```
//!
//! where `E`, `b` and `P` depend only on the filter posterior at j and the
//! data between t_j and t_{j+1}.

use nalgebra::{DMatrix, DVector};

use crate::error::{CgnsError, Result};
use crate::filter::{run_filter, FilterRun, GaussianState, StepInputs};
use crate::linalg::{check_covariance, factor_hpd, is_finite_vec, solve_right, symmetrize};
use crate::model::ModelSpec;
use crate::scalar::Scalar;
use crate::simulate::Trajectory;

/// Switches for the coefficient computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoeffOptions {
    /// Keep only the leading-order part of F (ablation).
    pub drop_f_correction: bool,
    /// Use the no-cross-noise formulas even when Sxy ≠ 0.
    pub force_simplified: bool,
}

/// Auxiliary matrices of one backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients<T: Scalar> {
    /// l×l
    pub e: DMatrix<T>,
    /// l×k
    pub f: DMatrix<T>,
    /// k×l, Λx + Sxy R⁻¹
    pub gx: DMatrix<T>,
    /// l×l, Λy + Syy R⁻¹
    pub gy: DMatrix<T>,
    /// l×l, R⁻¹ (Λy R + R Λy† + Syy)
    pub h: DMatrix<T>,
    /// k×l, Sxx⁻¹ Gx
    pub k: DMatrix<T>,
    pub b: DVector<T>,
    pub p: DMatrix<T>,
    /// Whether the no-cross-noise formulas were used.
    pub simplified: bool,
}

/// Backward-step coefficients from precomputed step inputs and the filter
/// posterior at the start of the step.
pub fn step_coeffs_from<T: Scalar>(
    inp: &StepInputs<T>,
    filt: &GaussianState<T>,
    opts: CoeffOptions,
) -> Result<StepCoefficients<T>> {
    let c = &inp.coeffs;
    let g = &inp.gram;
    let r = &filt.cov;
    let l = r.nrows();
    let h = T::from_real(inp.dt);
    let eye = DMatrix::<T>::identity(l, l);

    let r_chol = factor_hpd(r, "filter covariance")?;
    let gx = &c.lambda_x + solve_right(&r_chol, &g.sxy);
    let gy = &c.lambda_y + solve_right(&r_chol, &g.syy);
    let ly_r = &c.lambda_y * r;
    let hm = r_chol.solve(&(&ly_r + ly_r.adjoint() + &g.syy));
    let k = inp.sxx_chol().solve(&gx);

    let simplified = opts.force_simplified || g.no_cross_noise();
    let (e, f) = if simplified {
        let e = &eye - &gy * h;
        let f = if opts.drop_f_correction {
            DMatrix::zeros(l, c.lambda_x.nrows())
        } else {
            // Gy R Λx† Sxx⁻¹ dt, with Λx† Sxx⁻¹ = (Sxx⁻¹ Λx)†
            &gy * r * inp.sxx_chol().solve(&c.lambda_x).adjoint() * h
        };
        (e, f)
    } else {
        let e = &eye + (&g.syx * &k - &gy) * h;
        let kt = k.adjoint();
        let lx_t_sinv = inp.sxx_chol().solve(&c.lambda_x).adjoint();
        let mut bracket = &kt - &lx_t_sinv;
        if !opts.drop_f_correction {
            let k_r_kt = &k * r * &kt;
            let corr = gx.adjoint() * &k_r_kt
                - r_chol.solve(&(hm.adjoint() * r * &kt))
                + c.lambda_y.adjoint() * &kt
                - c.lambda_x.adjoint() * &k_r_kt;
            bracket += corr * h;
        }
        (e, -(r * bracket))
    };

    let forecast_op = &eye + &c.lambda_y * h;
    let fc = &forecast_op * &filt.mean + &c.f_y * h;
    let b = &filt.mean - &e * fc + &f * inp.innovation(&filt.mean);
    let mut p = r - &e * &forecast_op * r - &f * &c.lambda_x * r * h;
    symmetrize(&mut p);

    Ok(StepCoefficients { e, f, gx, gy, h: hm, k, b, p, simplified })
}

/// Backward-step coefficients at one step, evaluating the model at
/// (filt.t, x_prev).
pub fn step_coeffs<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    filt: &GaussianState<T>,
    x_prev: &DVector<T>,
    x_next: &DVector<T>,
    dt: f64,
    opts: CoeffOptions,
) -> Result<StepCoefficients<T>> {
    let inp = StepInputs::evaluate(model, filt.t, x_prev, x_next, dt)?;
    step_coeffs_from(&inp, filt, opts)
}

/// One backward step: the smoother state at j from the smoother state at
/// j+1 and the coefficients of step j.
pub fn smoother_step<T: Scalar>(
    coeffs: &StepCoefficients<T>,
    next_smooth: &GaussianState<T>,
    filt: &GaussianState<T>,
) -> Result<GaussianState<T>> {
    let mean = &coeffs.e * &next_smooth.mean + &coeffs.b;
    let mut cov = &coeffs.e * &next_smooth.cov * coeffs.e.adjoint() + &coeffs.p;
    symmetrize(&mut cov);
    if !is_finite_vec(&mean) {
        return Err(CgnsError::Divergence { step: 0, what: "smoother mean is not finite".into() });
    }
    check_covariance(&cov, "smoother covariance")?;
    Ok(GaussianState { mean, cov, t: filt.t })
}

/// Forward filter followed by the backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherRun<T: Scalar> {
    pub filter: FilterRun<T>,
    /// Smoother posteriors indexed like the trajectory.
    pub states: Vec<GaussianState<T>>,
    /// coeffs[j] links step j to step j+1.
    pub coeffs: Vec<StepCoefficients<T>>,
}

pub fn run_smoother<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    traj: &Trajectory<T>,
    init: GaussianState<T>,
) -> Result<SmootherRun<T>> {
    run_smoother_with(model, traj, init, CoeffOptions::default())
}

pub fn run_smoother_with<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    traj: &Trajectory<T>,
    init: GaussianState<T>,
    opts: CoeffOptions,
) -> Result<SmootherRun<T>> {
    let filter = run_filter(model, traj, init)?;
    let n = traj.n_steps();
    let mut coeffs = Vec::with_capacity(n);
    for j in 0..n {
        let inp = StepInputs::evaluate(model, traj.times[j], &traj.x_path[j], &traj.x_path[j + 1], traj.dt)
            .map_err(|e| e.at_step(j))?;
        coeffs.push(step_coeffs_from(&inp, &filter.states[j], opts).map_err(|e| e.at_step(j))?);
    }
    let mut states = vec![filter.states[n].clone(); n + 1];
    for j in (0..n).rev() {
        states[j] = smoother_step(&coeffs[j], &states[j + 1], &filter.states[j]).map_err(|e| e.at_step(j))?;
    }
    Ok(SmootherRun { filter, states, coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, LinearGaussianModel};
    use crate::simulate::simulate;

    fn scalar_model(lx: f64, ly: f64, sx: f64, sy: f64, cross: f64) -> LinearGaussianModel<f64> {
        let mut m = LinearGaussianModel::zeros(Dims { k: 1, l: 1, d: 1, r: 1 });
        m.lambda_x[(0, 0)] = lx;
        m.lambda_y[(0, 0)] = ly;
        m.sigma_x1[(0, 0)] = sx;
        m.sigma_y1[(0, 0)] = cross;
        m.sigma_y2[(0, 0)] = sy;
        m
    }

    #[test]
    fn hand_evaluated_no_cross_noise_coefficients() {
        // Λy = -1, Syy = 2, R = 1, dt = 0.01 gives Gy = 1 and E = 0.99
        let m = scalar_model(0.5, -1.0, 1.0, 2f64.sqrt(), 0.0);
        let filt = GaussianState::standard(1, 0.0);
        let c = step_coeffs(&m, &filt, &DVector::zeros(1), &DVector::zeros(1), 0.01, CoeffOptions::default())
            .unwrap();
        assert!(c.simplified);
        assert!((c.gy[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((c.e[(0, 0)] - 0.99).abs() < 1e-15);
        // F = Gy R Λx Sxx⁻¹ dt
        assert!((c.f[(0, 0)] - 0.5 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn general_formula_reduces_to_simplified_without_cross_noise() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 2, l: 3, d: 2, r: 3 });
        m.lambda_x = DMatrix::from_row_slice(2, 3, &[1.0, 0.4, 0.0, -0.3, 1.0, 0.7]);
        m.lambda_y = DMatrix::from_row_slice(3, 3, &[-1.0, 0.2, 0.0, 0.1, -0.5, 0.3, 0.0, 0.0, -2.0]);
        m.sigma_x1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]);
        m.sigma_y2 = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 0.1, 0.0, 0.6, 0.0, 0.2, 0.0, 0.5]);
        let filt = GaussianState::new(
            DVector::from_vec(vec![0.1, -0.2, 0.3]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, 0.0, 0.1, 0.0, 0.5]),
            0.0,
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![0.0, 1.0]);
        let x1 = DVector::from_vec(vec![0.02, 0.97]);
        let inp = StepInputs::evaluate(&m, 0.0, &x0, &x1, 0.01).unwrap();
        let simple = step_coeffs_from(&inp, &filt, CoeffOptions::default()).unwrap();
        let general = general_branch(&inp, &filt);
        assert!(simple.simplified && !general.simplified);
        assert!((&simple.e - &general.e).norm() < 1e-14);
        assert!((&simple.f - &general.f).norm() < 1e-14);
        assert!((&simple.b - &general.b).norm() < 1e-14);
        assert!((&simple.p - &general.p).norm() < 1e-14);
    }

    // The general-formula branch with the cross-noise shortcut disabled.
    fn general_branch(inp: &StepInputs<f64>, filt: &GaussianState<f64>) -> StepCoefficients<f64> {
        let mut g = inp.clone();
        // a tiny cross term forces the general path; its effect is far below the tolerance
        g.gram.sxy[(0, 0)] = 1e-300;
        g.gram.syx[(0, 0)] = 1e-300;
        step_coeffs_from(&g, filt, CoeffOptions::default()).unwrap()
    }

    #[test]
    fn leading_order_limit() {
        let m = scalar_model(1.2, -0.7, 0.6, 1.0, 0.5);
        let filt = GaussianState::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.4), 0.0).unwrap();
        let x0 = DVector::from_element(1, 0.0);
        let mut prev_dev = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4, 1e-5] {
            let c = step_coeffs(&m, &filt, &x0, &x0, dt, CoeffOptions::default()).unwrap();
            let dev = (c.e[(0, 0)] - 1.0).abs();
            assert!(dev < prev_dev);
            prev_dev = dev;
        }
        assert!(prev_dev < 1e-4);
        // without cross noise F vanishes with dt
        let m = scalar_model(1.2, -0.7, 0.6, 1.0, 0.0);
        let c = step_coeffs(&m, &filt, &x0, &x0, 1e-8, CoeffOptions::default()).unwrap();
        assert!(c.f.norm() < 1e-7);
    }

    #[test]
    fn leading_order_f_is_minus_syx_sxx_inverse() {
        let m = scalar_model(1.2, -0.7, 0.6, 1.0, 0.5);
        let filt = GaussianState::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.4), 0.0).unwrap();
        let x0 = DVector::from_element(1, 0.0);
        let opts = CoeffOptions { drop_f_correction: true, ..Default::default() };
        let c = step_coeffs(&m, &filt, &x0, &x0, 0.01, opts).unwrap();
        // Syx = 0.5·0.6, Sxx = 0.36
        assert!((c.f[(0, 0)] + 0.3 / 0.36).abs() < 1e-12);
    }

    #[test]
    fn endpoint_and_length_one() {
        let m = scalar_model(1.0, -1.0, 0.5, 0.5, 0.0);
        let traj = simulate(&m, DVector::zeros(1), DVector::zeros(1), 1, 0.01, 3).unwrap();
        let run = run_smoother(&m, &traj, GaussianState::standard(1, 0.0)).unwrap();
        assert_eq!(run.states[1], run.filter.states[1]);
        let traj = simulate(&m, DVector::zeros(1), DVector::zeros(1), 300, 0.01, 3).unwrap();
        let run = run_smoother(&m, &traj, GaussianState::standard(1, 0.0)).unwrap();
        assert_eq!(run.states[300], run.filter.states[300]);
    }

    #[test]
    fn zero_innovation_and_forecast_returns_filter_mean() {
        let m = scalar_model(0.8, -0.4, 0.5, 0.7, 0.3);
        let filt = GaussianState::new(DVector::from_element(1, 0.6), DMatrix::from_element(1, 1, 0.2), 0.0).unwrap();
        let x0 = DVector::from_element(1, 0.1);
        let dt = 0.01;
        // choose x_next so the innovation is zero
        let x1 = &x0 + DVector::from_element(1, 0.8 * 0.6 * dt);
        let c = step_coeffs(&m, &filt, &x0, &x1, dt, CoeffOptions::default()).unwrap();
        let forecast = DVector::from_element(1, 0.6 + (-0.4 * 0.6) * dt);
        let next = GaussianState::new(forecast, DMatrix::from_element(1, 1, 0.25), dt).unwrap();
        let s = smoother_step(&c, &next, &filt).unwrap();
        assert!((s.mean[0] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn smoother_variance_below_filter_variance_on_linear_model() {
        let m = scalar_model(1.0, -1.0, 1.0, 1.0, 0.0);
        let traj = simulate(&m, DVector::zeros(1), DVector::zeros(1), 2000, 0.005, 8).unwrap();
        let run = run_smoother(&m, &traj, GaussianState::standard(1, 0.0)).unwrap();
        for (s, f) in run.states.iter().zip(&run.filter.states) {
            assert!(s.cov[(0, 0)] <= f.cov[(0, 0)] + 1e-10);
        }
    }

    #[test]
    fn cross_noise_paths_disagree() {
        let m = scalar_model(1.2, -0.7, 0.6, 1.0, 0.5);
        let filt = GaussianState::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, 0.4), 0.0).unwrap();
        let x0 = DVector::from_element(1, 0.0);
        let x1 = DVector::from_element(1, 0.05);
        let general = step_coeffs(&m, &filt, &x0, &x1, 0.01, CoeffOptions::default()).unwrap();
        let forced = step_coeffs(
            &m,
            &filt,
            &x0,
            &x1,
            0.01,
            CoeffOptions { force_simplified: true, ..Default::default() },
        )
        .unwrap();
        assert!(!general.simplified && forced.simplified);
        assert!((&general.e - &forced.e).norm() > 1e-6);
        assert!((&general.f - &forced.f).norm() > 1e-3);
    }
}
