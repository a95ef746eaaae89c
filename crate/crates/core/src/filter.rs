//! Forward filter for the unobserved state.
//!
//! One step maps the posterior at t_j to the posterior at t_{j+1} using the
//! observed increment:
//!
//! ```text
//! μ' = μ + (Λy μ + fy) dt + (R Λx† + Syx) Sxx⁻¹ (Δx − (Λx μ + fx) dt)
//! R' = R + (Λy R + R Λy† + Syy − (R Λx† + Syx) Sxx⁻¹ (Λx R + Sxy)) dt
//! ```
//!
//! with every coefficient evaluated at (t_j, x_j). The covariance is
//! symmetrized after each step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CgnsError, Result};
use crate::io::{fmt_f64, push_header, push_values, write_row};
use crate::linalg::{check_covariance, is_finite_vec, log_det, symmetrize};
use crate::model::{evaluate, Coefficients, ModelSpec, NoiseGramians};
use crate::scalar::{FieldKind, Scalar};
use crate::simulate::Trajectory;

/// Mean and covariance of the unobserved state at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    pub t: f64,
}

impl<T: Scalar> GaussianState<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>, t: f64) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(CgnsError::Shape(format!(
                "covariance {:?} does not match mean of length {}",
                cov.shape(),
                mean.len()
            )));
        }
        Ok(GaussianState { mean, cov, t })
    }

    /// Zero mean and identity covariance, the default initialization.
    pub fn standard(l: usize, t: f64) -> Self {
        GaussianState { mean: DVector::zeros(l), cov: DMatrix::identity(l, l), t }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Real parts of the covariance diagonal.
    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|z| z.real()).collect()
    }
}

/// Everything a single assimilation step needs from the model, evaluated
/// once at (t_j, x_j) and shared by the filter and smoother coefficients.
#[derive(Debug, Clone)]
pub struct StepInputs<T: Scalar> {
    pub t: f64,
    pub dt: f64,
    pub coeffs: Coefficients<T>,
    pub gram: NoiseGramians<T>,
    /// Observed increment x_{j+1} − x_j.
    pub dx: DVector<T>,
    sxx_chol: Cholesky<T, Dyn>,
}

impl<T: Scalar> StepInputs<T> {
    pub fn evaluate<M: ModelSpec<T> + ?Sized>(
        model: &M,
        t: f64,
        x_prev: &DVector<T>,
        x_next: &DVector<T>,
        dt: f64,
    ) -> Result<Self> {
        let coeffs = evaluate(model, t, x_prev)?;
        let dx = model.increment(x_prev, x_next);
        Self::from_parts(coeffs, dx, t, dt)
    }

    pub fn from_parts(coeffs: Coefficients<T>, dx: DVector<T>, t: f64, dt: f64) -> Result<Self> {
        let gram = NoiseGramians::from_coefficients(&coeffs);
        let sxx_chol = gram.sxx.clone().cholesky().ok_or(CgnsError::Observability { step: 0 })?;
        Ok(StepInputs { t, dt, coeffs, gram, dx, sxx_chol })
    }

    /// Cholesky factor of Sxx.
    pub fn sxx_chol(&self) -> &Cholesky<T, Dyn> {
        &self.sxx_chol
    }

    /// Δx − (Λx μ + fx) dt
    pub fn innovation(&self, mean: &DVector<T>) -> DVector<T> {
        &self.dx - self.coeffs.drift_x(mean) * T::from_real(self.dt)
    }
}

/// Filter update from precomputed step inputs. Returns the new state and
/// the innovation it consumed.
pub fn filter_update<T: Scalar>(
    inp: &StepInputs<T>,
    prev: &GaussianState<T>,
) -> Result<(GaussianState<T>, DVector<T>)> {
    let h = T::from_real(inp.dt);
    let c = &inp.coeffs;
    let r = &prev.cov;
    let mu = &prev.mean;

    // (R Λx† + Syx), l×k
    let gain_lhs = r * c.lambda_x.adjoint() + &inp.gram.syx;
    // Sxx⁻¹ (Λx R + Sxy) = Sxx⁻¹ gain_lhs†, k×l
    let sol = inp.sxx_chol.solve(&gain_lhs.adjoint());
    let innov = inp.innovation(mu);

    let mean = mu + c.drift_y(mu) * h + &gain_lhs * inp.sxx_chol.solve(&innov);
    let ly_r = &c.lambda_y * r;
    let mut cov = r + (&ly_r + ly_r.adjoint() + &inp.gram.syy - &gain_lhs * sol) * h;
    symmetrize(&mut cov);

    if !is_finite_vec(&mean) {
        return Err(CgnsError::Divergence { step: 0, what: "filter mean is not finite".into() });
    }
    check_covariance(&cov, "filter covariance")?;
    Ok((GaussianState { mean, cov, t: inp.t + inp.dt }, innov))
}

/// One filter step from t_prev to t_prev + dt.
pub fn filter_step<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    prev: &GaussianState<T>,
    x_prev: &DVector<T>,
    x_next: &DVector<T>,
    dt: f64,
) -> Result<GaussianState<T>> {
    let inp = StepInputs::evaluate(model, prev.t, x_prev, x_next, dt)?;
    Ok(filter_update(&inp, prev)?.0)
}

/// Log density of an innovation under N(0, Sxx dt + Λx R Λx† dt²), the
/// one-step predictive distribution of the observed increment.
pub fn innovation_loglik<T: Scalar>(
    inp: &StepInputs<T>,
    prev_cov: &DMatrix<T>,
    innov: &DVector<T>,
) -> Result<f64> {
    let h = inp.dt;
    let lx = &inp.coeffs.lambda_x;
    let s = &inp.gram.sxx * T::from_real(h) + lx * prev_cov * lx.adjoint() * T::from_real(h * h);
    let chol = s.cholesky().ok_or(CgnsError::Observability { step: 0 })?;
    let quad = innov.dotc(&chol.solve(innov)).real();
    let k = innov.len() as f64;
    let ld = log_det(&chol);
    Ok(match T::KIND {
        FieldKind::Real => -0.5 * (quad + ld + k * (2.0 * std::f64::consts::PI).ln()),
        FieldKind::Complex => -(quad + ld + k * std::f64::consts::PI.ln()),
    })
}

/// Filter posteriors along a whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun<T: Scalar> {
    /// One state per observation, starting with the initial condition.
    pub states: Vec<GaussianState<T>>,
    /// innovations[j] is consumed by the step from j to j+1.
    pub innovations: Vec<DVector<T>>,
    /// Predictive log density of each innovation.
    pub logliks: Vec<f64>,
    pub dt: f64,
}

impl<T: Scalar> FilterRun<T> {
    /// Log-likelihood of the observed increments under the model.
    pub fn total_loglik(&self) -> f64 {
        self.logliks.iter().sum()
    }
}

pub fn run_filter<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    traj: &Trajectory<T>,
    init: GaussianState<T>,
) -> Result<FilterRun<T>> {
    if traj.len() < 2 {
        return Err(CgnsError::Parameter("trajectory needs at least two samples".into()));
    }
    if init.dim() != model.dims().l {
        return Err(CgnsError::Shape(format!(
            "initial state has dimension {}, model has {}",
            init.dim(),
            model.dims().l
        )));
    }
    let mut states = Vec::with_capacity(traj.len());
    let mut innovations = Vec::with_capacity(traj.n_steps());
    let mut logliks = Vec::with_capacity(traj.n_steps());
    let mut cur = GaussianState { t: traj.times[0], ..init };
    for j in 0..traj.n_steps() {
        let inp = StepInputs::evaluate(model, traj.times[j], &traj.x_path[j], &traj.x_path[j + 1], traj.dt)
            .map_err(|e| e.at_step(j + 1))?;
        let (mut next, innov) = filter_update(&inp, &cur).map_err(|e| e.at_step(j + 1))?;
        next.t = traj.times[j + 1];
        logliks.push(innovation_loglik(&inp, &cur.cov, &innov).map_err(|e| e.at_step(j + 1))?);
        states.push(cur);
        innovations.push(innov);
        cur = next;
    }
    states.push(cur);
    Ok(FilterRun { states, innovations, logliks, dt: traj.dt })
}

/// Steady-state filter variance of the scalar linear model
/// `dx = (a11 x + a12 y) dt + s1 dW1`, `dy = (a21 x + a22 y) dt + s2 dW2`,
/// i.e. the positive root of 2·a22·R + s2² − (a12·R / s1)² = 0.
pub fn equilibrium_variance_2d(a12: f64, a22: f64, s1: f64, s2: f64) -> Result<f64> {
    if a12 == 0.0 {
        return Err(CgnsError::Parameter("a12 = 0 decouples the hidden state".into()));
    }
    if !(a22 < 0.0) {
        return Err(CgnsError::Parameter(format!("a22 must be negative, got {a22}")));
    }
    if !(s1 > 0.0) || !(s2 >= 0.0) {
        return Err(CgnsError::Parameter(format!("noise amplitudes must be positive, got {s1}, {s2}")));
    }
    let disc = (a22 * a22 * s1 * s1 + a12 * a12 * s2 * s2).sqrt();
    Ok((a22 * s1 * s1 + s1 * disc) / (a12 * a12))
}

/// Writes `t, [pass,] mu_*, diagR_*` rows for a sequence of states.
pub fn write_states_csv<T: Scalar, W: std::io::Write>(
    w: &mut W,
    states: &[GaussianState<T>],
    pass: Option<&str>,
) -> std::io::Result<()> {
    let l = states.first().map_or(0, |s| s.dim());
    let mut header = vec!["t".to_string()];
    if pass.is_some() {
        header.push("pass".into());
    }
    push_header::<T>(&mut header, "mu", l);
    for i in 0..l {
        header.push(format!("diagR_{i}"));
    }
    write_row(w, &header)?;
    for s in states {
        let mut row = vec![fmt_f64(s.t)];
        if let Some(p) = pass {
            row.push(p.to_string());
        }
        push_values(&mut row, &s.mean);
        row.extend(s.variances().into_iter().map(fmt_f64));
        write_row(w, &row)?;
    }
    Ok(())
}
