//! End-to-end experiment pipelines and their artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cgnsda_core::em::EmConfig;
use cgnsda_core::filter::write_states_csv;
use cgnsda_core::info::{acf, kde, std_dev};
use cgnsda_core::io::{fmt_f64, write_row};
use cgnsda_core::linalg::min_eigenvalue;
use cgnsda_core::models::{
    dyad_model, em_dyad_model, lda_model, linear2d_model, DyadModel, EmDyadFamily, EmDyadModel, EmDyadParams, LdaModel,
    Linear2dModel,
};
use cgnsda_core::online::{write_online_csv, StorageReport};
use cgnsda_core::simulate::rng_from_seed;
use cgnsda_core::{
    kl_gaussian, nrmse, run_filter, run_online_em, run_smoother, simulate, spectral_radius, GaussianState, InfoGain,
    LagPolicy, ModelSpec, SmootherWindow, Trajectory, WindowOptions,
};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Da, Experiment, ExperimentConfig, ModelParams, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::svg::{line_plot, Series};

pub enum AnyModel {
    Dyad(DyadModel),
    Linear2d(Linear2dModel),
    Lda(LdaModel),
    EmDyad(EmDyadModel),
}

impl AnyModel {
    pub fn build(params: &ModelParams) -> CliResult<Self> {
        Ok(match params {
            ModelParams::Dyad(p) => AnyModel::Dyad(dyad_model(*p)?),
            ModelParams::Linear2d(p) => AnyModel::Linear2d(linear2d_model(*p)?),
            ModelParams::Lda(p) => AnyModel::Lda(lda_model(*p)?),
            ModelParams::EmDyad(p) => AnyModel::EmDyad(em_dyad_model(*p)?),
        })
    }

    pub fn spec(&self) -> &dyn ModelSpec<f64> {
        match self {
            AnyModel::Dyad(m) => m,
            AnyModel::Linear2d(m) => m,
            AnyModel::Lda(m) => m,
            AnyModel::EmDyad(m) => m,
        }
    }

    /// Truth state at t = 0 when the config gives none.
    pub fn default_initial(&self, seed: u64) -> (DVector<f64>, DVector<f64>) {
        match self {
            AnyModel::Lda(m) => lda_initial_state(m, seed),
            other => {
                let d = other.spec().dims();
                (DVector::zeros(d.k), DVector::zeros(d.l))
            }
        }
    }

    /// Prior covariance when the config sets none: unit variance, except for
    /// LDA. Its tracer observations are so precise that an explicit Riccati
    /// step from unit variance overshoots into an indefinite matrix, so the
    /// prior is the model's own stationary spread: σ²/(4d) per mode
    /// component and σ_v²/(2β) for the tracer velocities around the flow.
    pub fn default_prior_cov(&self) -> DMatrix<f64> {
        let l = self.spec().dims().l;
        match self {
            AnyModel::Lda(m) => {
                let off = m.mode_offset();
                let mut diag = DVector::from_element(l, m.params.sigma_v.powi(2) / (2.0 * m.params.beta));
                for (i, mode) in m.modes.iter().enumerate() {
                    let var = mode.noise.powi(2) / (4.0 * mode.damping);
                    diag[off + 2 * i] = var;
                    diag[off + 2 * i + 1] = var;
                }
                DMatrix::from_diagonal(&diag)
            }
            _ => DMatrix::identity(l, l),
        }
    }

    /// Hidden components scored by NRMSE: the flow modes for LDA, every
    /// component otherwise.
    pub fn target_indices(&self) -> Vec<usize> {
        let l = self.spec().dims().l;
        match self {
            AnyModel::Lda(m) => (m.mode_offset()..l).collect(),
            _ => (0..l).collect(),
        }
    }

    pub fn hidden_names(&self) -> Vec<String> {
        match self {
            AnyModel::Lda(m) => {
                let mut names: Vec<String> = (0..m.params.n_tracers)
                    .flat_map(|i| [format!("vx_{i}"), format!("vy_{i}")])
                    .collect();
                for mode in &m.modes {
                    names.push(format!("re_u({},{})", mode.k[0], mode.k[1]));
                    names.push(format!("im_u({},{})", mode.k[0], mode.k[1]));
                }
                names
            }
            AnyModel::Dyad(_) | AnyModel::EmDyad(_) => vec!["v".into()],
            AnyModel::Linear2d(_) => vec!["y".into()],
        }
    }
}

/// Tracers uniform over the torus, modes drawn from their stationary
/// law, and tracer velocities equal to the flow at the tracer.
pub fn lda_initial_state(model: &LdaModel, seed: u64) -> (DVector<f64>, DVector<f64>) {
    let x0 = model.initial_positions(seed);
    let mut rng = rng_from_seed(seed.wrapping_add(0x5eed));
    let mut y0 = model.zero_hidden();
    let off = model.mode_offset();
    for (m, mode) in model.modes.iter().enumerate() {
        // each real component: dz = −d z dt + (σ/√2) dW, variance σ²/(4d)
        let sd = mode.noise / (2.0 * mode.damping.sqrt());
        let normal = Normal::new(0.0, sd).expect("positive standard deviation");
        y0[off + 2 * m] = normal.sample(&mut rng);
        y0[off + 2 * m + 1] = normal.sample(&mut rng);
    }
    for ell in 0..model.params.n_tracers {
        let v = model.velocity(&y0, [x0[2 * ell], x0[2 * ell + 1]]);
        y0[2 * ell] = v[0];
        y0[2 * ell + 1] = v[1];
    }
    (x0, y0)
}

/// Model and simulated truth for one run, with the prior.
pub struct Prepared {
    pub model: AnyModel,
    pub traj: Trajectory<f64>,
    pub prior: GaussianState<f64>,
}

impl Prepared {
    pub fn spec(&self) -> &dyn ModelSpec<f64> {
        self.model.spec()
    }

    pub fn truth(&self) -> &[DVector<f64>] {
        self.traj.y_path.as_deref().expect("simulated trajectories carry the hidden path")
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> CliResult<Prepared> {
    let model = AnyModel::build(&cfg.model_params()?)?;
    let dims = model.spec().dims();
    let (mut x0, mut y0) = model.default_initial(seed);
    if let Some(x) = &cfg.init.x0 {
        if x.len() != dims.k {
            return Err(CliError::Config(format!("init.x0 has {} entries, expected {}", x.len(), dims.k)));
        }
        x0 = DVector::from_column_slice(x);
    }
    if let Some(y) = &cfg.init.y0 {
        if y.len() != dims.l {
            return Err(CliError::Config(format!("init.y0 has {} entries, expected {}", y.len(), dims.l)));
        }
        y0 = DVector::from_column_slice(y);
    }
    let traj = simulate(model.spec(), x0, y0, cfg.n_steps(), cfg.dt, seed)?;
    let prior = GaussianState {
        mean: DVector::zeros(dims.l),
        cov: match cfg.init.prior_var {
            Some(v) => DMatrix::identity(dims.l, dims.l) * v,
            None => model.default_prior_cov(),
        },
        t: 0.0,
    };
    Ok(Prepared { model, traj, prior })
}

/// Online smoother bookkeeping exported with a run.
#[derive(Debug, Clone)]
pub struct OnlineTrace {
    pub policy: LagPolicy,
    /// Lag chosen at each observation; entry 0 is unused.
    pub lags: Vec<usize>,
    pub lag_at_flush: Vec<usize>,
    /// Largest spectral radius among the live update tensors after each
    /// observation, when recorded.
    pub max_rho: Option<Vec<f64>>,
    pub storage: StorageReport,
}

#[derive(Debug, Clone)]
pub struct Assimilation {
    pub filter: Vec<GaussianState<f64>>,
    pub posterior: Vec<GaussianState<f64>>,
    pub online: Option<OnlineTrace>,
    /// Time spent in the assimilation itself, diagnostics excluded.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssimilationOptions {
    pub window: WindowOptions,
    pub record_spectra: bool,
}

pub fn assimilate<M: ModelSpec<f64> + ?Sized>(
    model: &M,
    traj: &Trajectory<f64>,
    prior: &GaussianState<f64>,
    da: &Da,
    opts: AssimilationOptions,
) -> CliResult<Assimilation> {
    let prior = GaussianState { t: traj.times[0], ..prior.clone() };
    match da {
        Da::Filter => {
            let start = Instant::now();
            let run = run_filter(model, traj, prior)?;
            let wall_time_s = start.elapsed().as_secs_f64();
            Ok(Assimilation { filter: run.states.clone(), posterior: run.states, online: None, wall_time_s })
        }
        Da::Smoother => {
            let start = Instant::now();
            let run = run_smoother(model, traj, prior)?;
            let wall_time_s = start.elapsed().as_secs_f64();
            Ok(Assimilation { filter: run.filter.states, posterior: run.states, online: None, wall_time_s })
        }
        Da::Online { policy } => online(model, traj, prior, *policy, opts),
    }
}

fn online<M: ModelSpec<f64> + ?Sized>(
    model: &M,
    traj: &Trajectory<f64>,
    prior: GaussianState<f64>,
    policy: LagPolicy,
    opts: AssimilationOptions,
) -> CliResult<Assimilation> {
    let len = traj.len();
    let mut elapsed = std::time::Duration::ZERO;
    let start = Instant::now();
    let mut window = SmootherWindow::new(prior, traj.x_path[0].clone(), traj.dt, policy, opts.window)?;
    elapsed += start.elapsed();

    let mut posterior = Vec::with_capacity(len);
    let mut filter = Vec::with_capacity(len);
    let mut lag_at_flush = Vec::with_capacity(len);
    let mut lags = vec![0; len];
    let mut max_rho = opts.record_spectra.then(|| vec![0.0; len]);
    for n in 1..len {
        let start = Instant::now();
        let out = window.ingest(model, &traj.x_path[n])?;
        elapsed += start.elapsed();
        lags[n] = out.lag;
        for e in out.flushed {
            posterior.push(e.smooth);
            filter.push(e.filt);
            lag_at_flush.push(out.lag);
        }
        if let Some(rho) = max_rho.as_mut() {
            let mut m: f64 = 0.0;
            for e in window.entries().filter(|e| e.j < n) {
                m = m.max(spectral_radius(&e.d)?);
            }
            rho[n] = m;
        }
    }
    let storage = window.storage_report();
    let last = lags[len - 1];
    for e in window.finish() {
        posterior.push(e.smooth);
        filter.push(e.filt);
        lag_at_flush.push(last);
    }
    Ok(Assimilation {
        filter,
        posterior,
        online: Some(OnlineTrace { policy, lags, lag_at_flush, max_rho, storage }),
        wall_time_s: elapsed.as_secs_f64(),
    })
}

/// Component `i` of every posterior mean.
pub fn mean_series(states: &[GaussianState<f64>], i: usize) -> Vec<f64> {
    states.iter().map(|s| s.mean[i]).collect()
}

pub fn component(path: &[DVector<f64>], i: usize) -> Vec<f64> {
    path.iter().map(|y| y[i]).collect()
}

/// NRMSE averaged over the target components.
pub fn mean_nrmse(states: &[GaussianState<f64>], truth: &[DVector<f64>], targets: &[usize]) -> CliResult<f64> {
    let mut total = 0.0;
    for &i in targets {
        total += nrmse(&mean_series(states, i), &component(truth, i))?;
    }
    Ok(total / targets.len() as f64)
}

/// Time-averaged KL(a_j ‖ b_j).
pub fn mean_gain(a: &[GaussianState<f64>], b: &[GaussianState<f64>]) -> CliResult<InfoGain> {
    let mut acc = InfoGain::default();
    for (p, q) in a.iter().zip(b) {
        let g = kl_gaussian(p, q)?;
        acc.signal += g.signal;
        acc.dispersion += g.dispersion;
        acc.total += g.total;
    }
    let n = a.len().max(1) as f64;
    Ok(InfoGain { signal: acc.signal / n, dispersion: acc.dispersion / n, total: acc.total / n })
}

pub fn min_eig(states: &[GaussianState<f64>]) -> f64 {
    states.iter().map(|s| min_eigenvalue(&s.cov)).fold(f64::INFINITY, f64::min)
}

/// Gaussian fitted to the hidden state over an ensemble of long runs.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub state: GaussianState<f64>,
    /// Relative disagreement between the fits of the two ensemble halves.
    pub convergence: f64,
    pub samples: usize,
}

/// Fits the equilibrium from `members` runs of `length` time units, each
/// started from `(x0, y0)` and with its first tenth discarded.
#[allow(clippy::too_many_arguments)]
pub fn equilibrium<M: ModelSpec<f64> + ?Sized>(
    model: &M,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    members: usize,
    length: f64,
    dt: f64,
    seed: u64,
) -> CliResult<Equilibrium> {
    if members < 2 {
        return Err(CliError::Config("the equilibrium ensemble needs at least two members".into()));
    }
    let steps = (length / dt).round() as usize;
    let skip = steps / 10;
    let l = y0.len();
    let moments: Vec<CliResult<(usize, DVector<f64>, DMatrix<f64>)>> = (0..members)
        .into_par_iter()
        .map(|m| {
            let tr = simulate(model, x0.clone(), y0.clone(), steps, dt, seed.wrapping_add(m as u64))?;
            let ys = tr.y_path.expect("simulated");
            let mut sum = DVector::zeros(l);
            let mut outer = DMatrix::zeros(l, l);
            for y in &ys[skip..] {
                sum += y;
                outer.ger(1.0, y, y, 1.0);
            }
            Ok((ys.len() - skip, sum, outer))
        })
        .collect();
    let moments = moments.into_iter().collect::<CliResult<Vec<_>>>()?;
    let fit = |part: &[(usize, DVector<f64>, DMatrix<f64>)]| {
        let n: usize = part.iter().map(|p| p.0).sum();
        let sum = part.iter().fold(DVector::zeros(l), |a, p| a + &p.1);
        let outer = part.iter().fold(DMatrix::zeros(l, l), |a, p| a + &p.2);
        let mean = sum / n as f64;
        let cov = (outer - &mean * mean.transpose() * n as f64) / (n as f64 - 1.0);
        (n, mean, cov)
    };
    let (n, mean, cov) = fit(&moments);
    let half = members / 2;
    let (_, m1, c1) = fit(&moments[..half]);
    let (_, m2, c2) = fit(&moments[half..]);
    let scale = cov.diagonal().map(f64::sqrt);
    let dm = (m1 - m2).component_div(&scale).amax();
    let dc = (c1 - c2).norm() / cov.norm();
    let state = GaussianState::new(mean, cov, 0.0)?;
    Ok(Equilibrium { state, convergence: dm.max(dc), samples: n })
}

/// Sample statistics of two long runs from the same noise, one under the
/// truth and one under an estimate.
#[derive(Debug, Clone)]
pub struct StatsComparison {
    pub lags: Vec<f64>,
    /// Per state component (observed first): ACF under the truth and the estimate.
    pub acf: Vec<(Vec<f64>, Vec<f64>)>,
    pub acf_nrmse: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    pub pdf: Vec<(Vec<f64>, Vec<f64>)>,
    /// ∫|p̂ − p| over the grid.
    pub pdf_l1: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn compare_statistics<M: ModelSpec<f64> + ?Sized>(
    truth: &M,
    estimate: &M,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    length: f64,
    dt: f64,
    max_lag: f64,
    seed: u64,
) -> CliResult<StatsComparison> {
    let steps = (length / dt).round() as usize;
    // thin to about 100 samples per ACF time unit
    let stride = ((0.01 / dt).round() as usize).max(1);
    let run = |m: &M| -> CliResult<Vec<Vec<f64>>> {
        let tr = simulate(m, x0.clone(), y0.clone(), steps, dt, seed)?;
        let ys = tr.y_path.as_ref().expect("simulated");
        let skip = steps / 10;
        let k = x0.len();
        let mut cols = vec![Vec::new(); k + y0.len()];
        for j in (skip..tr.len()).step_by(stride) {
            for (i, c) in cols.iter_mut().enumerate() {
                c.push(if i < k { tr.x_path[j][i] } else { ys[j][i - k] });
            }
        }
        Ok(cols)
    };
    let a = run(truth)?;
    let b = run(estimate)?;
    let h = dt * stride as f64;
    let max_k = (max_lag / h).round() as usize;
    let lags = (0..=max_k).map(|k| k as f64 * h).collect();
    let mut out = StatsComparison { lags, acf: vec![], acf_nrmse: vec![], grid: vec![], pdf: vec![], pdf_l1: vec![] };
    for (ta, tb) in a.iter().zip(&b) {
        let ra = acf(ta, max_k)?;
        let rb = acf(tb, max_k)?;
        out.acf_nrmse.push(nrmse(&rb, &ra)?);
        out.acf.push((ra, rb));
        let (lo, hi) = ta.iter().chain(tb).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let pad = 0.1 * (hi - lo) + 1e-9;
        let grid: Vec<f64> = (0..200).map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 199.0).collect();
        let thin = |v: &[f64]| v.iter().step_by((v.len() / 20_000).max(1)).copied().collect::<Vec<_>>();
        let pa = kde(&thin(ta), &grid)?;
        let pb = kde(&thin(tb), &grid)?;
        let dg = grid[1] - grid[0];
        out.pdf_l1.push(pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() * dg);
        out.grid.push(grid);
        out.pdf.push((pa, pb));
    }
    Ok(out)
}

/// In-memory artifacts written in one go after the computation.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
    columns: BTreeMap<String, Vec<String>>,
}

impl Artifacts {
    pub fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<()> {
        let mut buf = Vec::new();
        write(&mut buf).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        let header = buf.split(|&b| b == b'\n').next().unwrap_or_default();
        let cols = String::from_utf8_lossy(header).split(',').map(str::to_string).collect();
        self.columns.insert(name.into(), cols);
        self.files.insert(name.into(), buf);
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.files.insert(name.into(), text.into_bytes());
    }

    pub fn columns(&self) -> serde_json::Value {
        json!(self.columns)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.files.keys()
    }

    pub fn write_all(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }
}

fn write_gain_csv(
    w: &mut Vec<u8>,
    a: &[GaussianState<f64>],
    b: &[GaussianState<f64>],
    skip_b_time: bool,
) -> std::io::Result<()> {
    write_row(w, &["t".into(), "gain_total".into(), "gain_signal".into(), "gain_dispersion".into()])?;
    for (i, p) in a.iter().enumerate() {
        let q = if skip_b_time { &b[0] } else { &b[i] };
        let g = kl_gaussian(p, q).map_err(std::io::Error::other)?;
        write_row(w, &[fmt_f64(p.t), fmt_f64(g.total), fmt_f64(g.signal), fmt_f64(g.dispersion)])?;
    }
    Ok(())
}

pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: serde_json::Value,
}

/// Runs the configured pipeline and writes its artifacts to `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<RunReport> {
    if cfg.experiment == Experiment::EmDyad {
        return run_em(cfg, out_dir);
    }
    let prepared = prepare(cfg, cfg.seed)?;
    let diag = &cfg.diagnostics;
    let opts = AssimilationOptions { record_spectra: diag.spectral_radii, ..Default::default() };
    let a = assimilate(prepared.spec(), &prepared.traj, &prepared.prior, &cfg.da, opts)?;
    let truth = prepared.truth();
    let targets = prepared.model.target_indices();
    let times = &prepared.traj.times;

    let mut art = Artifacts::default();
    art.csv("trajectory.csv", |w| prepared.traj.write_csv(w))?;
    match &cfg.da {
        Da::Filter => art.csv("filter.csv", |w| write_states_csv(w, &a.filter, None))?,
        Da::Smoother => art.csv("smoother.csv", |w| {
            write_states_csv(w, &a.filter, Some("filter"))?;
            let mut rest = Vec::new();
            write_states_csv(&mut rest, &a.posterior, Some("smoother"))?;
            let body = rest.iter().position(|&b| b == b'\n').map_or(rest.len(), |p| p + 1);
            w.extend_from_slice(&rest[body..]);
            Ok(())
        })?,
        Da::Online { .. } => {
            art.csv("filter.csv", |w| write_states_csv(w, &a.filter, None))?;
        }
    }

    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "dt": cfg.dt,
        "T": cfg.t_end,
        "n_steps": cfg.n_steps(),
        "da": cfg.da.label(),
        "wall_time_s": a.wall_time_s,
        "min_posterior_eigenvalue": min_eig(&a.posterior).min(min_eig(&a.filter)),
    });

    let posterior_nrmse = mean_nrmse(&a.posterior, truth, &targets)?;
    if diag.nrmse {
        summary["nrmse"] = json!({
            "targets": targets.iter().map(|&i| prepared.model.hidden_names()[i].clone()).collect::<Vec<_>>(),
            "filter": mean_nrmse(&a.filter, truth, &targets)?,
            "posterior": posterior_nrmse,
        });
    }
    if cfg.da != Da::Filter {
        let g = mean_gain(&a.posterior, &a.filter)?;
        summary["mean_info_gain"] = json!(g);
        art.csv("gain_over_filter.csv", |w| write_gain_csv(w, &a.posterior, &a.filter, false))?;
    }

    if let Some(on) = &a.online {
        let tr = assimilation_online_view(&a, on);
        art.csv("online.csv", |w| write_online_csv(w, &tr))?;
        let (b, delta, w) = match on.policy {
            LagPolicy::Fixed { lag } => (lag, None, None),
            LagPolicy::Adaptive { b, delta, w, .. } => (b, Some(delta), Some(w)),
        };
        summary["online"] = json!({
            "policy": on.policy.to_string(),
            "b": b,
            "delta": delta,
            "w": w,
            "peak_entries": on.storage.peak_entries,
            "peak_bytes": on.storage.peak_bytes,
            "wall_time_s": a.wall_time_s,
            "nrmse": posterior_nrmse,
        });
        if diag.lag_trace {
            art.csv("lags.csv", |w| {
                write_row(w, &["n".into(), "t".into(), "lag".into()])?;
                for n in 1..on.lags.len() {
                    write_row(w, &[n.to_string(), fmt_f64(times[n]), on.lags[n].to_string()])?;
                }
                Ok(())
            })?;
        }
        if let Some(rho) = &on.max_rho {
            summary["online"]["max_spectral_radius"] = json!(rho.iter().copied().fold(0.0, f64::max));
            art.csv("spectral.csv", |w| {
                write_row(w, &["n".into(), "t".into(), "max_rho".into()])?;
                for n in 1..rho.len() {
                    write_row(w, &[n.to_string(), fmt_f64(times[n]), fmt_f64(rho[n])])?;
                }
                Ok(())
            })?;
        }
    }

    if diag.kl_vs_equilibrium {
        let (x0, y0) = (&prepared.traj.x_path[0], &truth[0]);
        let eq = equilibrium(prepared.spec(), x0, y0, diag.equilibrium_members, diag.equilibrium_length, cfg.dt, cfg.seed ^ 0xe9)?;
        let eqs = [eq.state.clone()];
        art.csv("gain_filter_vs_equilibrium.csv", |w| write_gain_csv(w, &a.filter, &eqs, true))?;
        if cfg.da != Da::Filter {
            art.csv("gain_posterior_vs_equilibrium.csv", |w| write_gain_csv(w, &a.posterior, &eqs, true))?;
        }
        summary["equilibrium"] = json!({
            "members": diag.equilibrium_members,
            "length": diag.equilibrium_length,
            "samples": eq.samples,
            "half_ensemble_disagreement": eq.convergence,
            "mean": eq.state.mean.as_slice(),
            "mean_gain_filter": mean_gain(&a.filter, &vec![eq.state.clone(); a.filter.len()])?,
            "mean_gain_posterior": mean_gain(&a.posterior, &vec![eq.state; a.posterior.len()])?,
        });
    }

    let names = prepared.model.hidden_names();
    if diag.acf {
        let max_k = ((diag.acf_max_lag / cfg.dt).round() as usize).min(times.len() - 1);
        let mut cols = Vec::new();
        for &i in &targets {
            cols.push(acf(&component(truth, i), max_k)?);
            cols.push(acf(&mean_series(&a.posterior, i), max_k)?);
        }
        art.csv("acf.csv", |w| {
            let mut header = vec!["lag".to_string(), "t_lag".into()];
            for &i in &targets {
                header.push(format!("truth_{}", names[i]));
                header.push(format!("estimate_{}", names[i]));
            }
            write_row(w, &header)?;
            for k in 0..=max_k {
                let mut row = vec![k.to_string(), fmt_f64(k as f64 * cfg.dt)];
                row.extend(cols.iter().map(|c| fmt_f64(c[k])));
                write_row(w, &row)?;
            }
            Ok(())
        })?;
    }
    if diag.kde {
        let mut rows = Vec::new();
        for &i in &targets {
            let t = component(truth, i);
            let e = mean_series(&a.posterior, i);
            let (lo, hi) = t.iter().chain(&e).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let pad = 0.1 * (hi - lo) + 0.1 * std_dev(&t);
            let grid: Vec<f64> = (0..200).map(|g| lo - pad + (hi - lo + 2.0 * pad) * g as f64 / 199.0).collect();
            rows.push((i, grid.clone(), kde(&t, &grid)?, kde(&e, &grid)?));
        }
        art.csv("kde.csv", |w| {
            write_row(w, &["component".into(), "y".into(), "pdf_truth".into(), "pdf_estimate".into()])?;
            for (i, grid, pt, pe) in &rows {
                for g in 0..grid.len() {
                    write_row(w, &[names[*i].clone(), fmt_f64(grid[g]), fmt_f64(pt[g]), fmt_f64(pe[g])])?;
                }
            }
            Ok(())
        })?;
    }

    if diag.plots {
        let i = targets[0];
        let obs = component(&prepared.traj.x_path, 0);
        let tru = component(truth, i);
        let fil = mean_series(&a.filter, i);
        let post = mean_series(&a.posterior, i);
        let mut series = vec![
            Series { label: "truth", x: times, y: &tru },
            Series { label: "filter mean", x: times, y: &fil },
        ];
        if cfg.da != Da::Filter {
            series.push(Series { label: "posterior mean", x: times, y: &post });
        }
        art.text("hidden.svg", line_plot(&format!("hidden component {}", names[i]), "t", &series));
        art.text("observed.svg", line_plot("observed x_0", "t", &[Series { label: "x_0", x: times, y: &obs }]));
        if let Some(on) = &a.online {
            let lag_t: Vec<f64> = on.lags.iter().map(|&l| l as f64 * cfg.dt).collect();
            art.text(
                "lags.svg",
                line_plot("lag in time units", "t", &[Series { label: "L_n dt", x: &times[1..], y: &lag_t[1..] }]),
            );
        }
    }

    finish(cfg, out_dir, art, summary)
}

fn assimilation_online_view(a: &Assimilation, on: &OnlineTrace) -> cgnsda_core::OnlineRun<f64> {
    cgnsda_core::OnlineRun {
        states: a.posterior.clone(),
        filter_states: a.filter.clone(),
        lags: on.lags.clone(),
        lag_at_flush: on.lag_at_flush.clone(),
        storage: on.storage,
        max_spectral_radius: on.max_rho.as_ref().map_or(0.0, |r| r.iter().copied().fold(0.0, f64::max)),
    }
}

fn finish(cfg: &ExperimentConfig, out_dir: &Path, mut art: Artifacts, mut summary: serde_json::Value) -> CliResult<RunReport> {
    summary["files"] = art.columns();
    summary["config"] = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    art.text("summary.json", text + "\n");
    art.write_all(out_dir)?;
    Ok(RunReport { out_dir: out_dir.to_path_buf(), summary })
}

/// Online EM on the parameter-estimation dyad.
fn run_em(cfg: &ExperimentConfig, out_dir: &Path) -> CliResult<RunReport> {
    let ModelParams::EmDyad(truth) = cfg.model_params()? else {
        unreachable!("experiment and params agree after validation")
    };
    let em = cfg.em_config();
    let prepared = prepare(cfg, cfg.seed)?;
    let family = EmDyadFamily { sigma_u: truth.sigma_u, sigma_v: truth.sigma_v };
    let start = Instant::now();
    let run = run_online_em(&family, &prepared.traj, &em)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let report = em_report(&truth, &em, &run.theta);

    let mut art = Artifacts::default();
    art.csv("trajectory.csv", |w| prepared.traj.write_csv(w))?;
    art.csv("em_trace.csv", |w| run.write_trace_csv(w))?;
    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "dt": cfg.dt,
        "T": cfg.t_end,
        "n_steps": cfg.n_steps(),
        "wall_time_s": wall_time_s,
        "updates": run.updates,
        "estimate": report,
    });
    let diag = &cfg.diagnostics;
    if diag.acf || diag.kde {
        let est = em_dyad_model(truth.with_theta(&run.theta)?)?;
        let tru = em_dyad_model(truth)?;
        let (x0, y0) = (&prepared.traj.x_path[0], &prepared.truth()[0]);
        let stats = compare_statistics(&tru, &est, x0, y0, diag.equilibrium_length, cfg.dt, diag.acf_max_lag, cfg.seed ^ 0xac)?;
        summary["statistics"] = json!({ "acf_nrmse": stats.acf_nrmse, "pdf_l1": stats.pdf_l1 });
        if diag.acf {
            art.csv("acf.csv", |w| {
                write_row(w, &["t_lag".into(), "truth_u".into(), "estimate_u".into(), "truth_v".into(), "estimate_v".into()])?;
                for (k, lag) in stats.lags.iter().enumerate() {
                    let mut row = vec![fmt_f64(*lag)];
                    for (a, b) in &stats.acf {
                        row.push(fmt_f64(a[k]));
                        row.push(fmt_f64(b[k]));
                    }
                    write_row(w, &row)?;
                }
                Ok(())
            })?;
        }
        if diag.kde {
            art.csv("kde.csv", |w| {
                write_row(w, &["component".into(), "y".into(), "pdf_truth".into(), "pdf_estimate".into()])?;
                for (c, name) in ["u", "v"].iter().enumerate() {
                    for (g, y) in stats.grid[c].iter().enumerate() {
                        write_row(w, &[name.to_string(), fmt_f64(*y), fmt_f64(stats.pdf[c].0[g]), fmt_f64(stats.pdf[c].1[g])])?;
                    }
                }
                Ok(())
            })?;
        }
    }
    if diag.plots {
        let names = family_names();
        let xs: Vec<f64> = run.trace.iter().map(|r| r.t).collect();
        let cols: Vec<Vec<f64>> = (0..names.len()).map(|p| run.trace.iter().map(|r| r.theta[p]).collect()).collect();
        let series: Vec<Series> = names.iter().zip(&cols).map(|(n, c)| Series { label: n, x: &xs, y: c }).collect();
        art.text("theta.svg", line_plot("parameter estimates", "t", &series));
    }
    finish(cfg, out_dir, art, summary)
}

fn family_names() -> Vec<&'static str> {
    cgnsda_core::models::em_dyad::EM_DYAD_NAMES.to_vec()
}

/// Parameter table against the truth.
pub fn em_report(truth: &EmDyadParams, em: &EmConfig, theta: &DVector<f64>) -> serde_json::Value {
    let t = truth.theta();
    let rows: Vec<_> = family_names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "theta0": em.theta0.get(i),
                "estimate": theta[i],
                "truth": t[i],
                "rel_error": (theta[i] - t[i]).abs() / t[i].abs(),
            })
        })
        .collect();
    json!({
        "parameters": rows,
        "anti_damping_threshold": { "estimate": theta[0] / theta[1], "truth": truth.anti_damping_threshold() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgnsda_core::models::LdaParams;

    #[test]
    fn lda_initial_velocities_follow_the_flow() {
        let m = lda_model(LdaParams { k_max: 1, n_tracers: 4, ..Default::default() }).unwrap();
        let (x0, y0) = lda_initial_state(&m, 3);
        for ell in 0..4 {
            let v = m.velocity(&y0, [x0[2 * ell], x0[2 * ell + 1]]);
            assert_eq!(v, [y0[2 * ell], y0[2 * ell + 1]]);
        }
        assert!(y0.iter().skip(m.mode_offset()).any(|v| *v != 0.0));
    }

    #[test]
    fn equilibrium_of_an_ou_process() {
        // dy = −y dt + dW has stationary variance 1/2; x just integrates y
        use cgnsda_core::model::{Dims, LinearGaussianModel};
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 1, d: 1, r: 1 });
        m.lambda_x[(0, 0)] = 1.0;
        m.sigma_x1[(0, 0)] = 1.0;
        m.lambda_y[(0, 0)] = -1.0;
        m.sigma_y2[(0, 0)] = 1.0;
        let eq = equilibrium(&m, &DVector::zeros(1), &DVector::zeros(1), 8, 400.0, 0.01, 1).unwrap();
        assert!((eq.state.cov[(0, 0)] - 0.5).abs() < 0.05, "{}", eq.state.cov[(0, 0)]);
        assert!(eq.state.mean[0].abs() < 0.05);
        assert!(eq.convergence < 0.2);
    }
}
