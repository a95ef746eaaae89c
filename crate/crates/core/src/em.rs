//! Expectation-maximization for drift parameters that enter linearly.
//!
//! The E-step is the smoother posterior of the hidden path. For a pair of
//! consecutive steps it supplies the posterior moments up to the lag-one
//! cross-covariance `Cov(y_j, y_{j+1}) = E_j Rs_{j+1}`. The M-step
//! maximizes the expected Euler log-likelihood of the full path, which is
//! quadratic in θ, so it reduces to one generalized least-squares solve.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgnsError, Result};
use crate::filter::{run_filter, GaussianState};
use crate::model::{Dims, ModelSpec};
use crate::online::{IngestOutcome, LagCriterion, LagPolicy, SmootherWindow, WindowEntry, WindowOptions};
use crate::scalar::Scalar;
use crate::simulate::Trajectory;
use crate::smoother::{run_smoother, SmootherRun};

/// Drift parameters with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub names: Vec<String>,
    pub values: DVector<f64>,
}

impl ThetaVector {
    pub fn new(names: Vec<String>, values: DVector<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(CgnsError::Shape(format!("{} names for {} parameters", names.len(), values.len())));
        }
        Ok(ThetaVector { names, values })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Regressors of the drift of the stacked state z = (x, y) at one step:
/// `drift(z) = Σ_p θ_p (M_p y + c_p) + (M_0 y + c_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressors {
    /// (k+l)×l blocks, one per parameter.
    pub m: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub m0: DMatrix<f64>,
    pub c0: DVector<f64>,
}

impl Regressors {
    pub fn zeros(dims: Dims, n_params: usize) -> Self {
        let m = dims.k + dims.l;
        Regressors {
            m: vec![DMatrix::zeros(m, dims.l); n_params],
            c: vec![DVector::zeros(m); n_params],
            m0: DMatrix::zeros(m, dims.l),
            c0: DVector::zeros(m),
        }
    }

    /// Drift of z at hidden state y.
    pub fn drift(&self, theta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.m0 * y + &self.c0;
        for p in 0..self.m.len() {
            out += (&self.m[p] * y + &self.c[p]) * theta[p];
        }
        out
    }
}

/// A model family whose drift is linear in θ and whose noise is known.
pub trait LinearInTheta: Send + Sync {
    type Model: ModelSpec<f64>;

    fn dims(&self) -> Dims;

    fn param_names(&self) -> Vec<String>;

    fn regressors(&self, t: f64, x: &DVector<f64>) -> Regressors;

    /// Gramian of the stacked noise of (x, y).
    fn noise_gramian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;

    fn model_at(&self, theta: &DVector<f64>) -> Result<Self::Model>;

    /// Observed increment, matching the model's.
    fn increment(&self, x_prev: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
        x_next - x_prev
    }
}

/// Posterior moments of consecutive hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments<T: Scalar> {
    pub first_step: usize,
    /// E[y_j]
    pub mean: Vec<DVector<T>>,
    /// E[y_j y_j†]
    pub second: Vec<DMatrix<T>>,
    /// E[y_j y_{j+1}†], one shorter than `mean`.
    pub cross: Vec<DMatrix<T>>,
}

/// Moments of one consecutive pair in central form.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMoments<T: Scalar> {
    pub mean0: DVector<T>,
    pub cov0: DMatrix<T>,
    pub mean1: DVector<T>,
    /// Cov(y_j, y_{j+1})
    pub cross_cov: DMatrix<T>,
}

impl<T: Scalar> PairMoments<T> {
    fn from_entries(a: &WindowEntry<T>, b: &WindowEntry<T>) -> Result<Self> {
        let e = a.e.as_ref().ok_or_else(|| CgnsError::Parameter(format!("step {} has no successor yet", a.j)))?;
        Ok(PairMoments {
            mean0: a.smooth.mean.clone(),
            cov0: a.smooth.cov.clone(),
            mean1: b.smooth.mean.clone(),
            cross_cov: e * &b.smooth.cov,
        })
    }
}

impl<T: Scalar> PosteriorMoments<T> {
    fn from_parts(first_step: usize, states: &[&GaussianState<T>], es: &[&DMatrix<T>]) -> Self {
        let mean = states.iter().map(|s| s.mean.clone()).collect();
        let second = states.iter().map(|s| &s.cov + &s.mean * s.mean.adjoint()).collect();
        let cross = es
            .iter()
            .enumerate()
            .map(|(i, e)| *e * &states[i + 1].cov + &states[i].mean * states[i + 1].mean.adjoint())
            .collect();
        PosteriorMoments { first_step, mean, second, cross }
    }

    /// Moments over the live window.
    pub fn from_window(window: &SmootherWindow<T>) -> Self {
        let entries: Vec<&WindowEntry<T>> = window.entries().collect();
        let states: Vec<_> = entries.iter().map(|e| &e.smooth).collect();
        let es: Vec<_> = entries.iter().filter_map(|e| e.e.as_ref()).collect();
        Self::from_parts(window.oldest(), &states, &es)
    }

    /// Moments of the whole path from the backward smoother.
    pub fn from_smoother(run: &SmootherRun<T>) -> Self {
        let states: Vec<_> = run.states.iter().collect();
        let es: Vec<_> = run.coeffs.iter().map(|c| &c.e).collect();
        Self::from_parts(0, &states, &es)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Central moments of pair (j, j+1) with j = first_step + i.
    pub fn pair(&self, i: usize) -> PairMoments<T> {
        let (m0, m1) = (&self.mean[i], &self.mean[i + 1]);
        PairMoments {
            mean0: m0.clone(),
            cov0: &self.second[i] - m0 * m0.adjoint(),
            mean1: m1.clone(),
            cross_cov: &self.cross[i] - m0 * m1.adjoint(),
        }
    }
}

/// Assimilates `x_new` and returns the moments over the live window.
pub fn e_step<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    window: &mut SmootherWindow<T>,
    x_new: &DVector<T>,
) -> Result<(IngestOutcome<T>, PosteriorMoments<T>)> {
    let out = window.ingest(model, x_new)?;
    Ok((out, PosteriorMoments::from_window(window)))
}

/// Accumulated normal equations N θ = rhs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub normal: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl NormalEquations {
    pub fn zeros(n_params: usize) -> Self {
        NormalEquations { normal: DMatrix::zeros(n_params, n_params), rhs: DVector::zeros(n_params) }
    }

    pub fn add(&mut self, other: &NormalEquations) {
        self.normal += &other.normal;
        self.rhs += &other.rhs;
    }

    /// Contribution of one step pair.
    ///
    /// `w` is the inverse stacked noise Gramian at step j and `dx` the
    /// observed increment.
    pub fn pair(reg: &Regressors, w: &DMatrix<f64>, dx: &DVector<f64>, dt: f64, pm: &PairMoments<f64>) -> Self {
        let n_p = reg.m.len();
        let k = dx.len();
        let l = pm.mean0.len();
        // residual r = B1 y_j + B2 y_{j+1} + β with the offset drift removed
        let mut b1 = &reg.m0 * -dt;
        for i in 0..l {
            b1[(k + i, i)] -= 1.0;
        }
        let mut beta = &reg.c0 * -dt;
        {
            let mut top = beta.rows_mut(0, k);
            top += dx;
        }
        let mut rho = &b1 * &pm.mean0 + beta;
        {
            let mut bottom = rho.rows_mut(k, l);
            bottom += &pm.mean1;
        }
        // Cov(r, y_j) = B1 R_j + B2 C†
        let mut cov_r = &b1 * &pm.cov0;
        {
            let mut bottom = cov_r.rows_mut(k, l);
            bottom += pm.cross_cov.transpose();
        }
        let v = w * cov_r;
        let w_rho = w * rho;

        let phi: Vec<DVector<f64>> = (0..n_p).map(|p| &reg.m[p] * &pm.mean0 + &reg.c[p]).collect();
        let w_phi: Vec<DVector<f64>> = phi.iter().map(|f| w * f).collect();
        let g: Vec<DMatrix<f64>> = reg.m.iter().map(|m| w * m * &pm.cov0).collect();

        let mut out = NormalEquations::zeros(n_p);
        for p in 0..n_p {
            out.rhs[p] = reg.m[p].dot(&v) + phi[p].dot(&w_rho);
            for q in p..n_p {
                let val = dt * (reg.m[p].dot(&g[q]) + phi[p].dot(&w_phi[q]));
                out.normal[(p, q)] = val;
                out.normal[(q, p)] = val;
            }
        }
        out
    }

    /// Solves for θ, naming the columns that cannot be identified when the
    /// normal matrix is singular.
    pub fn solve(&self) -> Result<DVector<f64>> {
        let n = self.rhs.len();
        let diag: Vec<f64> = (0..n).map(|i| self.normal[(i, i)]).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dead: Vec<usize> = (0..n).filter(|&i| !(diag[i] > 1e-300 && diag[i] > 1e-14 * dmax)).collect();
        if !dead.is_empty() {
            return Err(CgnsError::Identifiability(dead));
        }
        let scale = DVector::from_iterator(n, diag.iter().map(|d| 1.0 / d.sqrt()));
        let scaled = DMatrix::from_fn(n, n, |i, j| self.normal[(i, j)] * scale[i] * scale[j]);
        let eig = scaled.clone().symmetric_eigen();
        let emax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut deficient = Vec::new();
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev <= 1e-10 * emax {
                let v = eig.eigenvectors.column(i);
                deficient.extend((0..n).filter(|&c| v[c].abs() > 0.1));
            }
        }
        if !deficient.is_empty() {
            deficient.sort_unstable();
            deficient.dedup();
            return Err(CgnsError::Identifiability(deficient));
        }
        let rhs = self.rhs.component_mul(&scale);
        let chol = scaled.cholesky().ok_or_else(|| CgnsError::Identifiability((0..n).collect()))?;
        Ok(chol.solve(&rhs).component_mul(&scale))
    }
}

/// Inverse of the stacked noise Gramian.
pub fn noise_weight(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    q.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| CgnsError::Conditioning {
        step: 0,
        what: "stacked noise Gramian is singular; every component needs noise".into(),
    })
}

/// M-step over a block of moments. `x` holds the observations of steps
/// `first_step ..= first_step + moments.len() − 1`.
pub fn m_step<F: LinearInTheta + ?Sized>(
    family: &F,
    moments: &PosteriorMoments<f64>,
    times: &[f64],
    x: &[DVector<f64>],
    dt: f64,
) -> Result<DVector<f64>> {
    normal_equations(family, moments, times, x, dt)?.solve()
}

pub fn normal_equations<F: LinearInTheta + ?Sized>(
    family: &F,
    moments: &PosteriorMoments<f64>,
    times: &[f64],
    x: &[DVector<f64>],
    dt: f64,
) -> Result<NormalEquations> {
    let len = moments.len();
    if x.len() != len || times.len() != len {
        return Err(CgnsError::Shape(format!("{} moments but {} observations", len, x.len())));
    }
    let mut acc = NormalEquations::zeros(family.param_names().len());
    for i in 0..len.saturating_sub(1) {
        let reg = family.regressors(times[i], &x[i]);
        let w = noise_weight(&family.noise_gramian(times[i], &x[i]))?;
        let dx = family.increment(&x[i], &x[i + 1]);
        acc.add(&NormalEquations::pair(&reg, &w, &dx, dt, &moments.pair(i)));
    }
    Ok(acc)
}

/// θ_prev + α (θ_next − θ_prev), α ∈ (0, 1].
pub fn accelerate(theta_prev: &DVector<f64>, theta_next: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(CgnsError::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(theta_next.clone());
    }
    Ok(theta_prev + (theta_next - theta_prev) * alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub theta0: Vec<f64>,
    /// Burn-in length in time units, run with θ0.
    pub t_ini: f64,
    /// Prior variance of every hidden component at t = 0; the prior mean is zero.
    pub init_var: f64,
    pub policy: LagPolicy,
    pub alpha: f64,
    /// Fraction of the updates during which `alpha` applies.
    pub accel_fraction: f64,
    /// Observations between M-steps.
    pub cadence: usize,
    /// Iteration cap of batch EM.
    pub max_iterations: usize,
    /// Relative tolerance on ‖Δθ‖ for batch EM.
    pub tol: f64,
    /// ‖θ‖ above this is treated as divergence.
    pub divergence_bound: f64,
    /// Observations averaged by the likelihood proxy.
    pub loglik_window: usize,
    /// Every how many updates the trace keeps a row.
    pub trace_every: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            theta0: vec![2.0, 6.0, 2.0, 0.5, 6.0, 0.4],
            t_ini: 10.0,
            init_var: 1.0,
            policy: LagPolicy::Adaptive { b: 1000, delta: 1e-4, w: 3, criterion: LagCriterion::Entropy },
            alpha: 1.0,
            accel_fraction: 0.1,
            cadence: 1,
            max_iterations: 200,
            tol: 1e-6,
            divergence_bound: 1e6,
            loglik_window: 1000,
            trace_every: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_ini > 0.0) {
            return Err(CgnsError::Parameter(format!("t_ini must be positive, got {}", self.t_ini)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CgnsError::Parameter(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.init_var > 0.0 && self.init_var.is_finite()) {
            return Err(CgnsError::Parameter(format!("init_var must be positive, got {}", self.init_var)));
        }
        if !(0.0..=1.0).contains(&self.accel_fraction) {
            return Err(CgnsError::Parameter("accel_fraction must lie in [0, 1]".into()));
        }
        if self.cadence == 0 || self.loglik_window == 0 || self.trace_every == 0 {
            return Err(CgnsError::Parameter("cadence, loglik_window and trace_every must be positive".into()));
        }
        self.policy.validate()
    }

    fn prior(&self, l: usize, t: f64) -> GaussianState<f64> {
        GaussianState { mean: DVector::zeros(l), cov: DMatrix::identity(l, l) * self.init_var, t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmTraceRow {
    pub update_idx: usize,
    pub t: f64,
    pub theta: Vec<f64>,
    pub lag: usize,
    pub loglik_proxy: f64,
}

#[derive(Debug, Clone)]
pub struct EmRun {
    pub names: Vec<String>,
    pub theta: DVector<f64>,
    pub trace: Vec<EmTraceRow>,
    /// Lag chosen at each observation after the first.
    pub lags: Vec<usize>,
    /// Moments over the window left at the end.
    pub final_moments: PosteriorMoments<f64>,
    pub updates: usize,
}

impl EmRun {
    pub fn theta_vector(&self) -> ThetaVector {
        ThetaVector { names: self.names.clone(), values: self.theta.clone() }
    }

    /// Writes `update_idx, t, theta_*, lag, loglik_proxy`.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        use crate::io::{fmt_f64, write_row};
        let mut header = vec!["update_idx".to_string(), "t".into()];
        header.extend((0..self.names.len()).map(|i| format!("theta_{i}")));
        header.extend(["lag".to_string(), "loglik_proxy".into()]);
        write_row(w, &header)?;
        for row in &self.trace {
            let mut cells = vec![row.update_idx.to_string(), fmt_f64(row.t)];
            cells.extend(row.theta.iter().map(|v| fmt_f64(*v)));
            cells.push(row.lag.to_string());
            cells.push(fmt_f64(row.loglik_proxy));
            write_row(w, &cells)?;
        }
        Ok(())
    }
}

fn check_theta(theta: &DVector<f64>, bound: f64, step: usize) -> Result<()> {
    if !theta.iter().all(|v| v.is_finite()) || theta.norm() > bound {
        return Err(CgnsError::Divergence { step, what: format!("parameter estimate left the bound {bound}") });
    }
    Ok(())
}

/// Per-pair data that does not depend on θ or on the posterior.
struct PairInputs {
    reg: Regressors,
    w: DMatrix<f64>,
    dx: DVector<f64>,
}

/// Online EM: burn-in with θ0, then an M-step after every `cadence`
/// observations using all pairs seen so far. Pairs that left the window
/// are folded into fixed sums; pairs still in the window are recomputed
/// whenever their posterior moves.
pub fn run_online_em<F: LinearInTheta>(family: &F, traj: &Trajectory<f64>, config: &EmConfig) -> Result<EmRun> {
    config.validate()?;
    let names = family.param_names();
    let n_p = names.len();
    if config.theta0.len() != n_p {
        return Err(CgnsError::Shape(format!("theta0 has {} entries, family has {n_p}", config.theta0.len())));
    }
    let dt = traj.dt;
    let n_ini = (config.t_ini / dt).round() as usize;
    let n_total = traj.n_steps();
    if n_total <= n_ini {
        return Err(CgnsError::Parameter(format!(
            "trajectory has {n_total} steps, burn-in needs more than {n_ini}"
        )));
    }
    let n_updates = (n_total - n_ini) / config.cadence;
    let accel_updates = (config.accel_fraction * n_updates as f64).ceil() as usize;

    let mut theta = DVector::from_vec(config.theta0.clone());
    let mut model = family.model_at(&theta)?;
    let l = family.dims().l;
    let init = config.prior(l, traj.times[0]);
    let mut window = SmootherWindow::new(init, traj.x_path[0].clone(), dt, config.policy, WindowOptions::default())?;

    let mut finalized = NormalEquations::zeros(n_p);
    // pair inputs and cached contributions of pairs not yet finalized, keyed from `first_open`
    let mut inputs: VecDeque<PairInputs> = VecDeque::new();
    let mut cached: VecDeque<Option<NormalEquations>> = VecDeque::new();
    let mut first_open = 0usize;
    let mut pending: Option<WindowEntry<f64>> = None;
    let mut logliks: VecDeque<f64> = VecDeque::with_capacity(config.loglik_window);
    let mut loglik_sum = 0.0;
    let mut lags = Vec::with_capacity(n_total);
    let mut trace = Vec::new();
    let mut updates = 0usize;

    for n in 1..=n_total {
        let x_prev = &traj.x_path[n - 1];
        let out = window.ingest(&model, &traj.x_path[n])?;
        lags.push(out.lag);
        inputs.push_back(PairInputs {
            reg: family.regressors(traj.times[n - 1], x_prev),
            w: noise_weight(&family.noise_gramian(traj.times[n - 1], x_prev)).map_err(|e| e.at_step(n))?,
            dx: family.increment(x_prev, &traj.x_path[n]),
        });
        cached.push_back(None);
        // pairs touching an updated entry need recomputing
        let dirty_from = (n - out.lag).saturating_sub(1).max(first_open);
        for slot in cached.iter_mut().skip(dirty_from - first_open) {
            *slot = None;
        }

        for entry in out.flushed {
            if let Some(prev) = pending.take() {
                debug_assert_eq!(prev.j, first_open);
                let pm = PairMoments::from_entries(&prev, &entry)?;
                let inp = inputs.pop_front().expect("pair inputs present");
                cached.pop_front();
                finalized.add(&NormalEquations::pair(&inp.reg, &inp.w, &inp.dx, dt, &pm));
                first_open += 1;
            }
            pending = Some(entry);
        }

        if logliks.len() == config.loglik_window {
            loglik_sum -= logliks.pop_front().unwrap_or(0.0);
        }
        logliks.push_back(out.innovation_loglik);
        loglik_sum += out.innovation_loglik;

        if n <= n_ini || (n - n_ini) % config.cadence != 0 {
            continue;
        }

        let mut total = finalized.clone();
        for (i, slot) in cached.iter_mut().enumerate() {
            let j = first_open + i;
            if slot.is_none() {
                let a = match &pending {
                    Some(p) if p.j == j => p,
                    _ => window.entry(j)?,
                };
                let pm = PairMoments::from_entries(a, window.entry(j + 1)?)?;
                let inp = &inputs[i];
                *slot = Some(NormalEquations::pair(&inp.reg, &inp.w, &inp.dx, dt, &pm));
            }
            if let Some(c) = slot {
                total.add(c);
            }
        }
        let next = total.solve().map_err(|e| e.at_step(n))?;
        let alpha = if updates < accel_updates { config.alpha } else { 1.0 };
        theta = accelerate(&theta, &next, alpha)?;
        check_theta(&theta, config.divergence_bound, n)?;
        model = family.model_at(&theta).map_err(|e| e.at_step(n))?;
        if updates % config.trace_every == 0 || n + config.cadence > n_total {
            trace.push(EmTraceRow {
                update_idx: updates,
                t: traj.times[n],
                theta: theta.iter().cloned().collect(),
                lag: out.lag,
                loglik_proxy: loglik_sum / logliks.len() as f64,
            });
        }
        updates += 1;
    }

    Ok(EmRun { names, theta, trace, lags, final_moments: PosteriorMoments::from_window(&window), updates })
}

/// Batch EM with the backward smoother as E-step, iterated until the
/// relative change of θ drops below `tol`. The trace rows carry the total
/// innovation log-likelihood of the observations under each iterate.
pub fn run_batch_em<F: LinearInTheta>(family: &F, traj: &Trajectory<f64>, config: &EmConfig) -> Result<EmRun> {
    config.validate()?;
    let names = family.param_names();
    if config.theta0.len() != names.len() {
        return Err(CgnsError::Shape(format!("theta0 has {} entries, family has {}", config.theta0.len(), names.len())));
    }
    let l = family.dims().l;
    let mut theta = DVector::from_vec(config.theta0.clone());
    let mut trace = Vec::new();
    let mut last_run = None;
    for it in 0..config.max_iterations {
        let model = family.model_at(&theta)?;
        let run = run_smoother(&model, traj, config.prior(l, traj.times[0]))?;
        let moments = PosteriorMoments::from_smoother(&run);
        let next = m_step(family, &moments, &traj.times, &traj.x_path, traj.dt)?;
        let next = accelerate(&theta, &next, config.alpha)?;
        check_theta(&next, config.divergence_bound, 0)?;
        trace.push(EmTraceRow {
            update_idx: it,
            t: traj.times[traj.n_steps()],
            theta: theta.iter().cloned().collect(),
            lag: traj.n_steps(),
            loglik_proxy: run.filter.total_loglik(),
        });
        let change = (&next - &theta).norm() / (1.0 + theta.norm());
        theta = next;
        last_run = Some(run);
        if change < config.tol {
            break;
        }
    }
    let final_moments = match last_run {
        Some(run) => PosteriorMoments::from_smoother(&run),
        None => PosteriorMoments { first_step: 0, mean: vec![], second: vec![], cross: vec![] },
    };
    let updates = trace.len();
    Ok(EmRun { names, theta, trace, lags: vec![], final_moments, updates })
}

/// Total innovation log-likelihood of the observations under θ.
pub fn marginal_loglik<F: LinearInTheta>(family: &F, traj: &Trajectory<f64>, theta: &DVector<f64>) -> Result<f64> {
    let model = family.model_at(theta)?;
    let run = run_filter(&model, traj, GaussianState::standard(family.dims().l, traj.times[0]))?;
    Ok(run.total_loglik())
}
