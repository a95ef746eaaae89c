//! Online forward-in-time smoother.
//!
//! A [`SmootherWindow`] keeps, for every recent step j, the filter and
//! current smoother posteriors plus the update tensor `D` that carries a
//! new correction back to j. When observation n arrives:
//!
//! 1. the filter produces the posterior at n;
//! 2. the backward coefficients of step n−1 give the smoother state at n−1,
//!    `μs(n−1) = E μf(n) + b`, `Rs(n−1) = E Rf(n) E† + P`;
//! 3. the correction `Δμ = μs(n−1) − μf(n−1)`, `ΔR = Rs(n−1) − Rf(n−1)` is
//!    pushed back to every step j inside the chosen lag as
//!    `μs(j) += D_j Δμ`, `Rs(j) += D_j ΔR D_j†`;
//! 4. every live tensor is right-multiplied by `E`, so D_j is always the
//!    ordered product E_j E_{j+1} ⋯ E_{n−1};
//! 5. entries that can no longer be updated are flushed.
//!
//! A lag of zero reproduces the filter and an unbounded lag reproduces the
//! backward smoother.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CgnsError, Result};
use crate::filter::{filter_update, innovation_loglik, GaussianState, StepInputs};
use crate::info::{moving_std, update_gain};
use crate::linalg::symmetrize;
use crate::model::ModelSpec;
use crate::scalar::Scalar;
use crate::simulate::Trajectory;
use crate::smoother::{step_coeffs_from, CoeffOptions};

/// Which sequence the adaptive lag thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagCriterion {
    /// Moving standard deviation of the information gains.
    Lsdf,
    /// The information gains themselves.
    Entropy,
}

/// How far back each new observation is allowed to reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LagPolicy {
    Fixed {
        lag: usize,
    },
    Adaptive {
        /// Upper bound on the lag.
        b: usize,
        /// Threshold in (0, 1).
        delta: f64,
        /// Odd LSDF window, at least 3. Ignored by the entropy criterion.
        #[serde(default = "default_w")]
        w: usize,
        criterion: LagCriterion,
    },
}

fn default_w() -> usize {
    3
}

impl LagPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LagPolicy::Fixed { .. } => Ok(()),
            LagPolicy::Adaptive { b, delta, w, .. } => {
                if b < 1 {
                    return Err(CgnsError::Parameter("adaptive bound b must be at least 1".into()));
                }
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(CgnsError::Parameter(format!("delta must lie in (0, 1), got {delta}")));
                }
                if w < 3 || w % 2 == 0 {
                    return Err(CgnsError::Parameter(format!("w must be odd and at least 3, got {w}")));
                }
                Ok(())
            }
        }
    }

    /// Number of entries the window keeps after each ingest.
    pub fn capacity(&self) -> usize {
        match *self {
            LagPolicy::Fixed { lag } => lag.saturating_add(1),
            LagPolicy::Adaptive { b, .. } => b.saturating_add(1),
        }
    }
}

impl fmt::Display for LagPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LagPolicy::Fixed { lag } => write!(f, "fixed:{lag}"),
            LagPolicy::Adaptive { b, delta, w, criterion } => {
                let c = match criterion {
                    LagCriterion::Lsdf => "lsdf",
                    LagCriterion::Entropy => "entropy",
                };
                write!(f, "adaptive:{b}:{delta}:{w}:{c}")
            }
        }
    }
}

/// Parses `fixed:L` or `adaptive:b:delta[:w[:lsdf|entropy]]`.
impl FromStr for LagPolicy {
    type Err = CgnsError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || CgnsError::Parameter(format!("cannot parse lag policy '{s}'"));
        let policy = match parts.as_slice() {
            ["fixed", lag] => LagPolicy::Fixed { lag: lag.parse().map_err(|_| bad())? },
            ["adaptive", b, delta, rest @ ..] if rest.len() <= 2 => {
                let w = match rest.first() {
                    Some(w) => w.parse().map_err(|_| bad())?,
                    None => default_w(),
                };
                let criterion = match rest.get(1).copied() {
                    None | Some("lsdf") => LagCriterion::Lsdf,
                    Some("entropy") => LagCriterion::Entropy,
                    Some(_) => return Err(bad()),
                };
                LagPolicy::Adaptive {
                    b: b.parse().map_err(|_| bad())?,
                    delta: delta.parse().map_err(|_| bad())?,
                    w,
                    criterion,
                }
            }
            _ => return Err(bad()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Picks the adaptive lag at observation `n` from the information gains
/// of steps `n − series.len() .. n − 1` (oldest first).
///
/// The lag is `n − 1 − j*` for the newest step j* whose (optionally
/// LSDF-filtered) gain is strictly below δ. When there is none, every
/// live step is updated, up to the bound `b`. Fixed policies return their
/// lag capped at `n`.
pub fn choose_lag(series: &[f64], n: usize, policy: &LagPolicy) -> usize {
    match *policy {
        LagPolicy::Fixed { lag } => lag.min(n),
        LagPolicy::Adaptive { b, delta, w, criterion } => {
            if series.is_empty() || n == 0 {
                return 0;
            }
            let filtered;
            let sigma = match criterion {
                LagCriterion::Lsdf => {
                    filtered = moving_std(series, w);
                    &filtered
                }
                LagCriterion::Entropy => series,
            };
            let first_j = n.saturating_sub(series.len());
            let lag = match sigma.iter().rposition(|&s| s < delta) {
                Some(i) => n - 1 - (first_j + i),
                None => n.min(b),
            };
            lag.min(b)
        }
    }
}

/// Per-step record kept by the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEntry<T: Scalar> {
    pub j: usize,
    pub filt: GaussianState<T>,
    pub smooth: GaussianState<T>,
    /// E of the step from j to j+1, known once observation j+1 arrived.
    pub e: Option<DMatrix<T>>,
    /// Tensor applied to this entry at the next ingest.
    pub d: DMatrix<T>,
}

/// Whether to evaluate the spectral radius of every live update tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralCheck {
    #[default]
    Off,
    /// Track the maximum.
    Record,
    /// Track the maximum and fail when it reaches 1.
    Assert,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowOptions {
    pub coeff: CoeffOptions,
    pub spectral: SpectralCheck,
    /// Fault injection for negative tests of the checking harness: leaves
    /// the update tensors at the identity.
    #[doc(hidden)]
    pub skip_tensor_update: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StorageReport {
    /// Largest number of resident entries after any ingest.
    pub peak_entries: usize,
    /// `peak_entries` times the size of one entry.
    pub peak_bytes: usize,
    pub current_entries: usize,
}

/// Result of one ingest.
#[derive(Debug, Clone)]
pub struct IngestOutcome<T: Scalar> {
    pub n: usize,
    pub lag: usize,
    /// Entries that left the window, oldest first. Their smoother states
    /// are final.
    pub flushed: Vec<WindowEntry<T>>,
    pub innovation: DVector<T>,
    /// Log density of the innovation under its one-step predictive law.
    pub innovation_loglik: f64,
}

/// Sliding window of the online smoother.
#[derive(Debug, Clone)]
pub struct SmootherWindow<T: Scalar> {
    policy: LagPolicy,
    opts: WindowOptions,
    capacity: usize,
    entries: VecDeque<WindowEntry<T>>,
    x_last: DVector<T>,
    t0: f64,
    dt: f64,
    peak_entries: usize,
    entry_bytes: usize,
    max_rho: f64,
}

impl<T: Scalar> SmootherWindow<T> {
    /// Window holding only the initial filter state at step 0.
    pub fn new(
        init: GaussianState<T>,
        x0: DVector<T>,
        dt: f64,
        policy: LagPolicy,
        opts: WindowOptions,
    ) -> Result<Self> {
        policy.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CgnsError::Parameter(format!("dt must be positive, got {dt}")));
        }
        let l = init.dim();
        let t0 = init.t;
        let entry = WindowEntry { j: 0, filt: init.clone(), smooth: init, e: None, d: DMatrix::identity(l, l) };
        let scalar = std::mem::size_of::<T>();
        let entry_bytes = scalar * (2 * l + 4 * l * l) + std::mem::size_of::<usize>() + 2 * std::mem::size_of::<f64>();
        Ok(SmootherWindow {
            policy,
            opts,
            capacity: policy.capacity(),
            entries: VecDeque::from([entry]),
            x_last: x0,
            t0,
            dt,
            peak_entries: 1,
            entry_bytes,
            max_rho: 0.0,
        })
    }

    pub fn policy(&self) -> &LagPolicy {
        &self.policy
    }

    /// Index of the latest observation.
    pub fn n(&self) -> usize {
        self.entries.back().map_or(0, |e| e.j)
    }

    pub fn oldest(&self) -> usize {
        self.entries.front().map_or(0, |e| e.j)
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry<T>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, j: usize) -> Result<&WindowEntry<T>> {
        let oldest = self.oldest();
        let newest = self.n();
        if j < oldest || j > newest {
            return Err(CgnsError::OutOfWindow { j, oldest, newest });
        }
        Ok(&self.entries[j - oldest])
    }

    /// Update tensor of entry j: after observation n it is
    /// D = E_j E_{j+1} ⋯ E_{n−1}, the matrix the next ingest applies to j
    /// (identity for j = n).
    pub fn update_tensor(&self, j: usize) -> Result<DMatrix<T>> {
        Ok(self.entry(j)?.d.clone())
    }

    pub fn storage_report(&self) -> StorageReport {
        StorageReport {
            peak_entries: self.peak_entries,
            peak_bytes: self.peak_entries * self.entry_bytes,
            current_entries: self.entries.len(),
        }
    }

    /// Largest spectral radius seen among non-identity update tensors, when
    /// spectral checking is enabled.
    pub fn max_spectral_radius(&self) -> f64 {
        self.max_rho
    }

    /// Assimilates the next observation.
    pub fn ingest<M: ModelSpec<T> + ?Sized>(&mut self, model: &M, x_new: &DVector<T>) -> Result<IngestOutcome<T>> {
        let n = self.n() + 1;
        self.ingest_inner(model, x_new, n).map_err(|e| e.at_step(n))
    }

    fn ingest_inner<M: ModelSpec<T> + ?Sized>(
        &mut self,
        model: &M,
        x_new: &DVector<T>,
        n: usize,
    ) -> Result<IngestOutcome<T>> {
        let newest = self.entries.back().expect("window is never empty");
        let inp = StepInputs::evaluate(model, newest.filt.t, &self.x_last, x_new, self.dt)?;
        let (mut filt_n, innovation) = filter_update(&inp, &newest.filt)?;
        filt_n.t = self.t0 + n as f64 * self.dt;
        let innovation_loglik = innovation_loglik(&inp, &newest.filt.cov, &innovation)?;
        let coeffs = step_coeffs_from(&inp, &newest.filt, self.opts.coeff)?;

        let mu_prev = &coeffs.e * &filt_n.mean + &coeffs.b;
        let mut r_prev = &coeffs.e * &filt_n.cov * coeffs.e.adjoint() + &coeffs.p;
        symmetrize(&mut r_prev);
        let d_mu = &mu_prev - &newest.filt.mean;
        let d_r = &r_prev - &newest.filt.cov;

        if self.opts.spectral != SpectralCheck::Off {
            for entry in self.entries.iter().filter(|e| e.j + 1 < n) {
                let rho = T::spectral_radius(&entry.d)?;
                self.max_rho = self.max_rho.max(rho);
                if self.opts.spectral == SpectralCheck::Assert && rho >= 1.0 {
                    return Err(CgnsError::UnstableTensor { j: entry.j, n: n - 2, rho });
                }
            }
        }

        let lag = match self.policy {
            LagPolicy::Fixed { .. } => choose_lag(&[], n, &self.policy),
            LagPolicy::Adaptive { b, .. } => {
                let first = (n - 1).saturating_sub(b);
                let mut series = Vec::with_capacity(self.entries.len());
                for entry in self.entries.iter().filter(|e| e.j >= first) {
                    series.push(update_gain(&entry.smooth.cov, &entry.d, &d_mu, &d_r)?.total);
                }
                choose_lag(&series, n, &self.policy)
            }
        };

        let first_updated = n - lag;
        let len = self.entries.len();
        for entry in self.entries.iter_mut() {
            if entry.j + 1 == n {
                if lag > 0 {
                    entry.smooth.mean = mu_prev.clone();
                    entry.smooth.cov = r_prev.clone();
                }
            } else if entry.j >= first_updated {
                entry.smooth.mean += &entry.d * &d_mu;
                entry.smooth.cov += &entry.d * &d_r * entry.d.adjoint();
                symmetrize(&mut entry.smooth.cov);
            }
        }
        debug_assert!(len == self.entries.len());

        if !self.opts.skip_tensor_update {
            for entry in self.entries.iter_mut() {
                entry.d = if entry.j + 1 == n { coeffs.e.clone() } else { &entry.d * &coeffs.e };
            }
        }
        if let Some(last) = self.entries.back_mut() {
            last.e = Some(coeffs.e);
        }

        let mut flushed = Vec::new();
        while let Some(front) = self.entries.front() {
            if front.j + self.capacity < n + 1 {
                flushed.push(self.entries.pop_front().expect("front exists"));
            } else {
                break;
            }
        }
        let l = filt_n.dim();
        self.entries.push_back(WindowEntry {
            j: n,
            smooth: filt_n.clone(),
            filt: filt_n,
            e: None,
            d: DMatrix::identity(l, l),
        });
        self.peak_entries = self.peak_entries.max(self.entries.len());
        self.x_last = x_new.clone();
        Ok(IngestOutcome { n, lag, flushed, innovation, innovation_loglik })
    }

    /// Drains the remaining entries, oldest first.
    pub fn finish(self) -> Vec<WindowEntry<T>> {
        self.entries.into_iter().collect()
    }
}

/// Output of a whole online pass.
#[derive(Debug, Clone)]
pub struct OnlineRun<T: Scalar> {
    /// Final smoother estimate of every step.
    pub states: Vec<GaussianState<T>>,
    pub filter_states: Vec<GaussianState<T>>,
    /// Lag chosen at observation n, for n = 1..; index 0 holds 0.
    pub lags: Vec<usize>,
    /// Lag in force when each step was finalized.
    pub lag_at_flush: Vec<usize>,
    pub storage: StorageReport,
    pub max_spectral_radius: f64,
}

/// Runs the online smoother over a whole trajectory.
pub fn run_online<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    traj: &Trajectory<T>,
    init: GaussianState<T>,
    policy: LagPolicy,
    opts: WindowOptions,
) -> Result<OnlineRun<T>> {
    if traj.is_empty() {
        return Err(CgnsError::Parameter("empty trajectory".into()));
    }
    let init = GaussianState { t: traj.times[0], ..init };
    let mut window = SmootherWindow::new(init, traj.x_path[0].clone(), traj.dt, policy, opts)?;
    let len = traj.len();
    let mut states = Vec::with_capacity(len);
    let mut filter_states = Vec::with_capacity(len);
    let mut lag_at_flush = Vec::with_capacity(len);
    let mut lags = vec![0; len];
    for n in 1..len {
        let out = window.ingest(model, &traj.x_path[n])?;
        lags[n] = out.lag;
        for e in out.flushed {
            states.push(e.smooth);
            filter_states.push(e.filt);
            lag_at_flush.push(out.lag);
        }
    }
    let storage = window.storage_report();
    let max_spectral_radius = window.max_spectral_radius();
    let last_lag = lags[len - 1];
    for e in window.finish() {
        states.push(e.smooth);
        filter_states.push(e.filt);
        lag_at_flush.push(last_lag);
    }
    Ok(OnlineRun { states, filter_states, lags, lag_at_flush, storage, max_spectral_radius })
}

/// Writes `j, t, lag_L_n_at_flush, mu_s_*, diagRs_*` rows.
pub fn write_online_csv<T: Scalar, W: std::io::Write>(w: &mut W, run: &OnlineRun<T>) -> std::io::Result<()> {
    use crate::io::{fmt_f64, push_header, push_values, write_row};
    let l = run.states.first().map_or(0, |s| s.dim());
    let mut header = vec!["j".to_string(), "t".into(), "lag_L_n_at_flush".into()];
    push_header::<T>(&mut header, "mu_s", l);
    for i in 0..l {
        header.push(format!("diagRs_{i}"));
    }
    write_row(w, &header)?;
    for (j, (s, lag)) in run.states.iter().zip(&run.lag_at_flush).enumerate() {
        let mut row = vec![j.to_string(), fmt_f64(s.t), lag.to_string()];
        push_values(&mut row, &s.mean);
        row.extend(s.variances().into_iter().map(fmt_f64));
        write_row(w, &row)?;
    }
    Ok(())
}
