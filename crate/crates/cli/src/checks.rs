//! Scaled acceptance suite.
//!
//! Every criterion reports its measured value next to its tolerance. Runs
//! made by criteria 1 to 7 also feed the positive-semidefiniteness check of
//! criterion 9.

use std::sync::OnceLock;
use std::time::Instant;

use cgnsda_core::em::EmConfig;
use cgnsda_core::models::{dyad_model, em_dyad_model, lda_model, DyadParams, EmDyadFamily, EmDyadParams, LdaParams, Linear2dParams};
use cgnsda_core::models::linear2d_model;
use cgnsda_core::model::{Dims, LinearGaussianModel};
use cgnsda_core::simulate::rng_from_seed;
use cgnsda_core::{
    e_step, equilibrium_variance_2d, kl_gaussian, kl_gaussian_raw, run_filter, run_online, run_online_em, run_smoother, simulate,
    GaussianState, LagCriterion, LagPolicy, PosteriorMoments, SmootherWindow, Trajectory, WindowOptions,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::Da;
use crate::error::CliResult;
use crate::oracles::{backward_joint_covariance, bitwise_equal, cross_block, expansion_smoother, max_rel_error, mc_kl};
use crate::pipeline::{assimilate, AnyModel, compare_statistics, equilibrium, lda_initial_state, mean_nrmse, min_eig, AssimilationOptions};

pub const ALL: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

/// Criteria exercised by each registered experiment.
pub fn criteria_for(experiment: &str) -> Option<Vec<u8>> {
    Some(match experiment {
        "all" => ALL.to_vec(),
        "dyad" => vec![1, 2, 4, 5, 9],
        "linear2d" => vec![3, 11, 9],
        "lda" => vec![6, 7, 9],
        "kl" => vec![8],
        "em-dyad" => vec![10],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
    pub elapsed_s: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} (tolerance: {}) [{:.1} s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.tolerance,
            self.elapsed_s
        )
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Freezes the update tensors at the identity. Only for proving that
    /// the suite notices broken bookkeeping.
    pub break_tensor_update: bool,
}

struct Outcome {
    passed: bool,
    measured: String,
    tolerance: String,
}

pub struct Suite {
    opts: SuiteOptions,
    min_eig: f64,
    tracked: usize,
}

const DYAD_DT: f64 = 0.005;
const REL_EQUIV: f64 = 1e-8;
const REL_EXPANSION: f64 = 1e-9;
const BAND: f64 = 0.02;

impl Suite {
    pub fn new(opts: SuiteOptions) -> Self {
        Suite { opts, min_eig: f64::INFINITY, tracked: 0 }
    }

    /// Runs the requested criteria in order; criterion 9 is evaluated last.
    pub fn run_all(&mut self, ids: &[u8]) -> Vec<CriterionReport> {
        let mut out: Vec<CriterionReport> = ids.iter().filter(|&&i| i != 9).map(|&i| self.run(i)).collect();
        if ids.contains(&9) {
            out.push(self.run(9));
        }
        out.sort_by_key(|r| r.id);
        out
    }

    pub fn run(&mut self, id: u8) -> CriterionReport {
        let (name, limit): (&'static str, Option<f64>) = match id {
            1 => ("edge-case equivalence", Some(10.0)),
            2 => ("online vs offline oracle", None),
            3 => ("linear 2-D equilibrium", Some(5.0)),
            4 => ("update-tensor stability", Some(60.0)),
            5 => ("information-gain ordering", None),
            6 => ("fixed-lag trade-off", Some(120.0)),
            7 => ("adaptive-lag storage constancy", None),
            8 => ("KL correctness", Some(60.0)),
            9 => ("PSD invariance", None),
            10 => ("EM recovery", Some(600.0)),
            11 => ("lag-one cross-covariance oracle", None),
            _ => ("unknown criterion", None),
        };
        let start = Instant::now();
        let result = match id {
            1 => self.c1(),
            2 => self.c2(),
            3 => self.c3(),
            4 => self.c4(),
            5 => self.c5(),
            6 => self.c6(),
            7 => self.c7(),
            8 => self.c8(),
            9 => Ok(self.c9()),
            10 => self.c10(),
            11 => self.c11(),
            _ => Ok(Outcome { passed: false, measured: "not defined".into(), tolerance: "-".into() }),
        };
        let elapsed_s = start.elapsed().as_secs_f64();
        let mut o = result.unwrap_or_else(|e| Outcome { passed: false, measured: format!("error: {e}"), tolerance: "-".into() });
        if let Some(limit) = limit {
            o.tolerance = format!("{}; runtime < {limit} s", o.tolerance);
            if elapsed_s >= limit {
                o.passed = false;
                o.measured = format!("{}; runtime {elapsed_s:.1} s", o.measured);
            }
        }
        CriterionReport { id, name, passed: o.passed, measured: o.measured, tolerance: o.tolerance, elapsed_s }
    }

    fn window(&self) -> WindowOptions {
        WindowOptions { skip_tensor_update: self.opts.break_tensor_update, ..Default::default() }
    }

    fn track(&mut self, states: &[GaussianState<f64>]) {
        self.min_eig = self.min_eig.min(min_eig(states));
        self.tracked += states.len();
    }

    /// fixed(0) is the filter bitwise; fixed(n) is the offline smoother.
    fn c1(&mut self) -> CliResult<Outcome> {
        let n = 2000;
        let m = dyad_model(DyadParams::default())?;
        let tr = simulate(&m, DVector::zeros(1), DVector::zeros(1), n, DYAD_DT, 11)?;
        let init = GaussianState::standard(1, 0.0);
        let filt = run_filter(&m, &tr, init.clone())?;
        let off = run_smoother(&m, &tr, init.clone())?;
        let zero = run_online(&m, &tr, init.clone(), LagPolicy::Fixed { lag: 0 }, self.window())?;
        let full = run_online(&m, &tr, init, LagPolicy::Fixed { lag: n }, self.window())?;
        let bitwise = bitwise_equal(&zero.states, &filt.states);
        let err = max_rel_error(&full.states, &off.states);
        for s in [&filt.states, &off.states, &zero.states, &full.states] {
            self.track(s);
        }
        Ok(Outcome {
            passed: bitwise && err <= REL_EQUIV,
            measured: format!("n = {n}; fixed(0) bitwise equal to filter: {bitwise}; fixed(n) max rel error {err:.2e}"),
            tolerance: format!("bitwise; <= {REL_EQUIV:.0e}"),
        })
    }

    fn c2(&mut self) -> CliResult<Outcome> {
        let n = 2000;
        let m = dyad_model(DyadParams::default())?;
        let tr = simulate(&m, DVector::zeros(1), DVector::zeros(1), n, DYAD_DT, 12)?;
        let init = GaussianState::standard(1, 0.0);
        let always = |b: usize| LagPolicy::Adaptive { b, delta: 1e-300, w: 3, criterion: LagCriterion::Entropy };
        let off = run_smoother(&m, &tr, init.clone())?;
        let on = run_online(&m, &tr, init.clone(), always(n), self.window())?;
        let err = max_rel_error(&on.states, &off.states);
        let full_lag = on.lags.iter().enumerate().skip(1).all(|(k, &l)| l == k);

        let short = tr.prefix(201);
        let off_s = run_smoother(&m, &short, init.clone())?;
        let on_s = run_online(&m, &short, init, always(200), self.window())?;
        let expansion = expansion_smoother(&off_s);
        let e_off = max_rel_error(&expansion, &off_s.states);
        let e_on = max_rel_error(&expansion, &on_s.states);
        for s in [&off.states, &on.states, &off_s.states, &on_s.states] {
            self.track(s);
        }
        Ok(Outcome {
            passed: err <= REL_EQUIV && e_off <= REL_EXPANSION && e_on <= REL_EXPANSION,
            measured: format!(
                "adaptive(b = n = {n}, delta = 1e-300) vs offline {err:.2e} (every lag = n: {full_lag}); \
                 expansion n = 200 vs offline {e_off:.2e}, vs online {e_on:.2e}"
            ),
            tolerance: format!("<= {REL_EQUIV:.0e}; expansion <= {REL_EXPANSION:.0e}"),
        })
    }

    fn c3(&mut self) -> CliResult<Outcome> {
        let mut rng = rng_from_seed(3);
        let (dt, steps) = (0.005, 10_000);
        let (mut worst_rel, mut worst_e, mut unit_prior_e) = (0.0f64, 0.0f64, 0.0f64);
        for set in 0..5 {
            let p = Linear2dParams {
                a11: rng.random_range(-1.0..0.0),
                a12: rng.random_range(0.5..2.0),
                a21: rng.random_range(-0.5..0.5),
                a22: rng.random_range(-2.0..-0.3),
                s1: rng.random_range(0.3..1.2),
                s2: rng.random_range(0.3..1.2),
            };
            let m = linear2d_model(p)?;
            let tr = simulate(&m, DVector::zeros(1), DVector::zeros(1), steps, dt, 30 + set)?;
            // Prior: stationary variance of the hidden dynamics alone. It lies
            // above the filter equilibrium but below s2²/|a22|, so G^y > 0
            // throughout. A unit prior can start with G^y < 0 and |E| > 1.
            let r0 = p.s2 * p.s2 / (2.0 * p.a22.abs());
            let prior = GaussianState::new(DVector::zeros(1), DMatrix::from_element(1, 1, r0), 0.0)?;
            let run = run_smoother(&m, &tr, prior)?;
            let r_eq = equilibrium_variance_2d(p.a12, p.a22, p.s1, p.s2)?;
            let r_end = run.filter.states[steps].cov[(0, 0)];
            worst_rel = worst_rel.max((r_end - r_eq).abs() / r_eq);
            worst_e = run.coeffs.iter().map(|c| c.e[(0, 0)].abs()).fold(worst_e, f64::max);
            self.track(&run.filter.states);
            self.track(&run.states);
            let unit = run_smoother(&m, &tr, GaussianState::standard(1, 0.0))?;
            unit_prior_e = unit.coeffs.iter().map(|c| c.e[(0, 0)].abs()).fold(unit_prior_e, f64::max);
        }
        Ok(Outcome {
            passed: worst_rel <= 1e-3 && worst_e < 1.0,
            measured: format!(
                "5 parameter sets: worst rel variance error {worst_rel:.2e}; max |E| {worst_e:.6} \
                 (unit prior, not scored: {unit_prior_e:.6})"
            ),
            tolerance: "<= 1e-3; |E| < 1 at every step".into(),
        })
    }

    fn c4(&mut self) -> CliResult<Outcome> {
        let m = dyad_model(DyadParams::default())?;
        let tr = simulate(&m, DVector::zeros(1), DVector::zeros(1), 12_000, DYAD_DT, 1)?;
        let policy = LagPolicy::Adaptive { b: 400, delta: 1e-6, w: 3, criterion: LagCriterion::Lsdf };
        let opts = AssimilationOptions { window: self.window(), record_spectra: true };
        let prior = GaussianState::standard(1, 0.0);
        let a = assimilate(&m, &tr, &prior, &Da::Online { policy }, opts)?;
        self.track(&a.posterior);
        self.track(&a.filter);
        let trace = a.online.expect("online run");
        let rho = trace.max_rho.expect("recorded");
        let worst = rho.iter().copied().fold(0.0, f64::max);
        let worst_at = rho.iter().position(|&r| r == worst).unwrap_or(0);
        // reported only: windows that no longer reach back to the prior
        let settled = rho.iter().skip(1 + 2 * 400).copied().fold(0.0, f64::max);
        let exceed = rho.iter().filter(|&&r| r >= 1.0).count();
        Ok(Outcome {
            passed: worst < 1.0,
            measured: format!(
                "T = 60, {policy}: max spectral radius over live update tensors {worst:.6} at t = {:.3}; \
                 {exceed} of {} observations with a radius >= 1; max once the window is clear of the start {settled:.6}",
                worst_at as f64 * DYAD_DT,
                rho.len() - 1
            ),
            tolerance: "< 1 for every live (j, n)".into(),
        })
    }

    fn c5(&mut self) -> CliResult<Outcome> {
        let m = dyad_model(DyadParams::default())?;
        let eq = dyad_equilibrium()?;
        let burn_in = (5.0 / DYAD_DT) as usize;
        let mut parts = Vec::new();
        let mut passed = true;
        for seed in [1, 2, 3] {
            let tr = simulate(&m, DVector::zeros(1), DVector::zeros(1), 12_000, DYAD_DT, seed)?;
            let run = run_smoother(&m, &tr, GaussianState::standard(1, 0.0))?;
            self.track(&run.filter.states);
            self.track(&run.states);
            let (mut wins, mut total, mut sum_s, mut sum_f) = (0usize, 0usize, 0.0, 0.0);
            for j in burn_in..run.states.len() {
                let ks = kl_gaussian(&run.states[j], &eq.state)?.total;
                let kf = kl_gaussian(&run.filter.states[j], &eq.state)?.total;
                wins += usize::from(ks > kf);
                total += 1;
                sum_s += ks;
                sum_f += kf;
            }
            let frac = wins as f64 / total as f64;
            let (avg_s, avg_f) = (sum_s / total as f64, sum_f / total as f64);
            passed &= frac >= 0.95 && avg_s > avg_f;
            parts.push(format!("seed {seed}: {:.1}% of steps, mean {avg_s:.3} vs {avg_f:.3}", 100.0 * frac));
        }
        Ok(Outcome {
            passed,
            measured: format!(
                "{} (equilibrium from {} samples, half-ensemble disagreement {:.3})",
                parts.join("; "),
                eq.samples,
                eq.convergence
            ),
            tolerance: "smoother > filter on >= 95% of steps after t = 5 and on average, every seed".into(),
        })
    }

    fn c6(&mut self) -> CliResult<Outcome> {
        let desk = LdaDesk::new()?;
        let lags = [0, 5, 10, 20, 40, 80, desk.n];
        let mut nrmses = Vec::new();
        let mut peaks = Vec::new();
        for &lag in &lags {
            let (nr, peak, bytes) = desk.run(self, LagPolicy::Fixed { lag })?;
            nrmses.push(nr);
            peaks.push((peak, bytes));
        }
        let monotone = nrmses.windows(2).all(|w| w[1] <= w[0] * (1.0 + BAND));
        let improves = nrmses[lags.len() - 1] < nrmses[0];
        let per_entry = peaks[0].1;
        let exact = lags.iter().zip(&peaks).all(|(&l, &(p, b))| p == l + 1 && b == (l + 1) * per_entry);
        let table: Vec<String> = lags.iter().zip(&nrmses).zip(&peaks).map(|((l, r), (p, _))| format!("{l}:{r:.4}/{p}")).collect();
        Ok(Outcome {
            passed: monotone && improves && exact,
            measured: format!(
                "lag:nrmse/peak_entries {}; non-increasing {monotone}; full < filter {improves}; storage = (L+1) x {per_entry} B {exact}",
                table.join(" ")
            ),
            tolerance: "non-increasing within 2%; NRMSE(full) < NRMSE(0); peak entries = L + 1".into(),
        })
    }

    fn c7(&mut self) -> CliResult<Outcome> {
        let desk = LdaDesk::new()?;
        let b = 100;
        let deltas = [0.5, 0.05, 0.005];
        let mut nrmses = Vec::new();
        let mut peaks = Vec::new();
        for &delta in &deltas {
            let policy = LagPolicy::Adaptive { b, delta, w: 3, criterion: LagCriterion::Entropy };
            let (nr, peak, _) = desk.run(self, policy)?;
            nrmses.push(nr);
            peaks.push(peak);
        }
        let bounded = peaks.iter().all(|&p| p <= b + 1);
        let monotone = nrmses.windows(2).all(|w| w[1] <= w[0] * (1.0 + BAND));
        let table: Vec<String> =
            deltas.iter().zip(&nrmses).zip(&peaks).map(|((d, r), p)| format!("{d}:{r:.4}/{p}")).collect();
        Ok(Outcome {
            passed: bounded && monotone,
            measured: format!("delta:nrmse/peak_entries {}; bounded {bounded}; non-increasing as delta shrinks {monotone}", table.join(" ")),
            tolerance: format!("peak entries <= b + 1 = {}; NRMSE non-increasing within 2%", b + 1),
        })
    }

    fn c8(&mut self) -> CliResult<Outcome> {
        let mut rng = rng_from_seed(8);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let (mp, rp) = random_gaussian3(&mut rng);
            let (mq, rq) = random_gaussian3(&mut rng);
            let exact = kl_gaussian(&to_state(&mp, &rp), &to_state(&mq, &rq))?.total;
            let mc = mc_kl(&mp, &rp, &mq, &rq, 1_000_000, &mut rng);
            worst = worst.max((mc - exact).abs() / exact);
        }
        let mut min_part = f64::INFINITY;
        for i in 0..10_000 {
            let l = 1 + i % 4;
            let a = DMatrix::from_fn(l, l, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rp = &a * a.transpose() + DMatrix::identity(l, l) * 0.1;
            let mp = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
            // every third pair is a tiny perturbation, where rounding dominates
            let (mq, rq) = if i % 3 == 0 {
                let eps = 1e-9 * rng.random_range(0.0..1.0);
                (mp.add_scalar(eps), &rp * (1.0 + eps))
            } else {
                let b = DMatrix::from_fn(l, l, |_, _| rng.sample::<f64, _>(StandardNormal));
                (DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal)), &b * b.transpose() + DMatrix::identity(l, l) * 0.1)
            };
            let (signal, dispersion) = kl_gaussian_raw(&GaussianState::new(mp, rp, 0.0)?, &GaussianState::new(mq, rq, 0.0)?)?;
            min_part = min_part.min(signal).min(dispersion);
        }
        Ok(Outcome {
            passed: worst <= 0.02 && min_part >= -1e-12,
            measured: format!("worst Monte-Carlo rel error {worst:.4} over 20 pairs x 1e6 samples; min unclamped part {min_part:.2e} over 1e4 pairs"),
            tolerance: "<= 0.02; parts >= -1e-12".into(),
        })
    }

    fn c9(&self) -> Outcome {
        if self.tracked == 0 {
            return Outcome {
                passed: false,
                measured: "no covariances recorded; run criteria 1-7 in the same invocation".into(),
                tolerance: ">= -1e-10".into(),
            };
        }
        Outcome {
            passed: self.min_eig >= -1e-10,
            measured: format!("min eigenvalue {:.3e} over {} posterior covariances", self.min_eig, self.tracked),
            tolerance: ">= -1e-10".into(),
        }
    }

    fn c10(&mut self) -> CliResult<Outcome> {
        let truth = EmDyadParams::default();
        let model = em_dyad_model(truth)?;
        let dt = 0.001;
        let tr = simulate(&model, DVector::zeros(1), DVector::zeros(1), 50_000, dt, 1)?;
        let family = EmDyadFamily { sigma_u: truth.sigma_u, sigma_v: truth.sigma_v };
        let em = EmConfig::default();
        let run = run_online_em(&family, &tr, &em)?;
        let est = truth.with_theta(&run.theta)?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let checks = [
            ("gamma1", est.gamma1, truth.gamma1),
            ("F_u", est.f_u, truth.f_u),
            ("d_u", est.d_u, truth.d_u),
            ("d_u/gamma1", est.anti_damping_threshold(), 1.0 / 3.0),
        ];
        let mut passed = true;
        let mut parts = Vec::new();
        for (name, e, t) in checks {
            let r = rel(e, t);
            passed &= r <= 0.15;
            parts.push(format!("{name} {e:.3} ({:.1}%)", 100.0 * r));
        }
        parts.push(format!("d_v {:.3} (exempt)", est.d_v));
        parts.push(format!("gamma2 {:.3}, F_v {:.3}", est.gamma2, est.f_v));
        let est_model = em_dyad_model(est);
        let stats = match est_model {
            Ok(em_model) => compare_statistics(&model, &em_model, &DVector::zeros(1), &DVector::zeros(1), 500.0, dt, 5.0, 77),
            Err(e) => Err(e.into()),
        };
        match stats {
            Ok(s) => {
                passed &= s.acf_nrmse.iter().all(|&v| v < 0.15);
                parts.push(format!("ACF NRMSE u {:.3}, v {:.3}; PDF L1 u {:.3}, v {:.3}", s.acf_nrmse[0], s.acf_nrmse[1], s.pdf_l1[0], s.pdf_l1[1]));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("simulation under the estimate failed: {e}"));
            }
        }
        Ok(Outcome {
            passed,
            measured: format!("T = 50: {}", parts.join(", ")),
            tolerance: "each within 15%; d_v exempt; ACF NRMSE < 0.15 for u and v".into(),
        })
    }

    fn c11(&mut self) -> CliResult<Outcome> {
        let mut worst = 0.0f64;
        let mut cases = 0;
        for case in 0..12u64 {
            let l = 1 + (case % 3) as usize;
            let k = 1 + (case % 2) as usize;
            let n = 2 + (case % 4) as usize;
            let m = random_linear_model(k, l, 100 + case);
            let tr = simulate(&m, DVector::zeros(k), DVector::zeros(l), n, 0.01, case)?;
            let init = GaussianState::standard(l, 0.0);
            let off = run_smoother(&m, &tr, init.clone())?;
            let joint = backward_joint_covariance(&off);
            let moments = online_moments(&m, &tr, init, self.window())?;
            for i in 0..n {
                let oracle = cross_block(&joint, l, i);
                let got = moments.pair(i).cross_cov;
                worst = worst.max((&got - &oracle).norm() / oracle.norm().max(1.0));
                let mean_err = (&moments.mean[i] - &off.states[i].mean).norm() / off.states[i].mean.norm().max(1.0);
                worst = worst.max(mean_err);
            }
            cases += 1;
        }
        Ok(Outcome {
            passed: worst <= 1e-9,
            measured: format!("{cases} linear instances (n <= 5, l <= 3): max error {worst:.2e}"),
            tolerance: "<= 1e-9".into(),
        })
    }
}

/// Moments of the full window after feeding the whole path through e_step.
fn online_moments(
    m: &LinearGaussianModel<f64>,
    tr: &Trajectory<f64>,
    init: GaussianState<f64>,
    opts: WindowOptions,
) -> CliResult<PosteriorMoments<f64>> {
    let n = tr.n_steps();
    let mut window = SmootherWindow::new(init, tr.x_path[0].clone(), tr.dt, LagPolicy::Fixed { lag: n }, opts)?;
    let mut moments = None;
    for x in &tr.x_path[1..] {
        moments = Some(e_step(m, &mut window, x)?.1);
    }
    Ok(moments.expect("at least one step"))
}

fn random_linear_model(k: usize, l: usize, seed: u64) -> LinearGaussianModel<f64> {
    let mut rng = rng_from_seed(seed);
    let mut g = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let mut m = LinearGaussianModel::<f64>::zeros(Dims { k, l, d: k, r: l });
    m.lambda_x = DMatrix::from_fn(k, l, |_, _| g(1.0));
    m.a_xx = DMatrix::from_fn(k, k, |_, _| g(0.2));
    m.c_x = DVector::from_fn(k, |_, _| g(0.5));
    m.lambda_y = DMatrix::from_fn(l, l, |i, j| if i == j { -0.8 + g(0.2) } else { g(0.3) });
    m.a_yx = DMatrix::from_fn(l, k, |_, _| g(0.3));
    m.c_y = DVector::from_fn(l, |_, _| g(0.5));
    m.sigma_x1 = DMatrix::from_fn(k, k, |i, j| if i == j { 0.5 + g(0.1).abs() } else if i > j { g(0.1) } else { 0.0 });
    m.sigma_y1 = DMatrix::from_fn(l, k, |_, _| g(0.1));
    m.sigma_y2 = DMatrix::from_fn(l, l, |i, j| if i == j { 0.4 + g(0.1).abs() } else { 0.0 });
    m
}

fn random_gaussian3<R: Rng + ?Sized>(rng: &mut R) -> (Vector3<f64>, Matrix3<f64>) {
    let mean = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let a = Matrix3::from_fn(|_, _| 0.7 * rng.sample::<f64, _>(StandardNormal));
    (mean, a * a.transpose() + Matrix3::identity() * 0.3)
}

fn to_state(m: &Vector3<f64>, r: &Matrix3<f64>) -> GaussianState<f64> {
    GaussianState { mean: DVector::from_column_slice(m.as_slice()), cov: DMatrix::from_column_slice(3, 3, r.as_slice()), t: 0.0 }
}

/// Equilibrium of the hidden dyad variable: 100 runs of 500 time units.
fn dyad_equilibrium() -> CliResult<crate::pipeline::Equilibrium> {
    static EQ: OnceLock<crate::pipeline::Equilibrium> = OnceLock::new();
    if let Some(eq) = EQ.get() {
        return Ok(eq.clone());
    }
    let m = dyad_model(DyadParams::default())?;
    let eq = equilibrium(&m, &DVector::zeros(1), &DVector::zeros(1), 100, 500.0, DYAD_DT, 1000)?;
    Ok(EQ.get_or_init(|| eq).clone())
}

/// Desk-scale Lagrangian run: K = 1 (8 modes), 6 tracers, T = 2.
struct LdaDesk {
    model: cgnsda_core::models::LdaModel,
    traj: Trajectory<f64>,
    prior: GaussianState<f64>,
    targets: Vec<usize>,
    n: usize,
}

impl LdaDesk {
    fn new() -> CliResult<Self> {
        let model = lda_model(LdaParams { k_max: 1, n_tracers: 6, ..Default::default() })?;
        let (x0, y0) = lda_initial_state(&model, 1);
        let n = 400;
        let traj = simulate(&model, x0, y0, n, 0.005, 1)?;
        let any = AnyModel::Lda(model);
        let targets = any.target_indices();
        let prior = GaussianState::new(DVector::zeros(targets.len() + targets[0]), any.default_prior_cov(), 0.0)?;
        let AnyModel::Lda(model) = any else { unreachable!() };
        Ok(LdaDesk { model, traj, prior, targets, n })
    }

    /// Mode NRMSE with the peak window size in entries and bytes.
    fn run(&self, suite: &mut Suite, policy: LagPolicy) -> CliResult<(f64, usize, usize)> {
        let opts = AssimilationOptions { window: suite.window(), record_spectra: false };
        let a = assimilate(&self.model, &self.traj, &self.prior, &Da::Online { policy }, opts)?;
        suite.track(&a.posterior);
        suite.track(&a.filter);
        let truth = self.traj.y_path.as_ref().expect("simulated");
        let nr = mean_nrmse(&a.posterior, truth, &self.targets)?;
        let storage = a.online.expect("online run").storage;
        Ok((nr, storage.peak_entries, storage.peak_bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiments_map_to_criteria() {
        assert_eq!(criteria_for("all").unwrap().len(), 11);
        assert!(criteria_for("dyad").unwrap().contains(&1));
        assert!(criteria_for("nope").is_none());
    }

    #[test]
    fn kl_check_passes() {
        let r = Suite::new(SuiteOptions::default()).run(8);
        assert!(r.passed, "{}", r.line());
    }

    #[test]
    fn cross_covariance_check_passes_and_catches_broken_tensors() {
        let r = Suite::new(SuiteOptions::default()).run(11);
        assert!(r.passed, "{}", r.line());
        let broken = Suite::new(SuiteOptions { break_tensor_update: true }).run(11);
        assert!(!broken.passed, "{}", broken.line());
    }

    #[test]
    fn psd_check_needs_runs() {
        let r = Suite::new(SuiteOptions::default()).run(9);
        assert!(!r.passed);
    }

    #[test]
    fn report_line_has_status_values_and_tolerance() {
        let r = CriterionReport {
            id: 3,
            name: "x",
            passed: true,
            measured: "1.0".into(),
            tolerance: "< 2".into(),
            elapsed_s: 0.25,
        };
        assert_eq!(r.line(), "PASS [ 3] x: 1.0 (tolerance: < 2) [0.2 s]");
    }
}
