//! Relative entropy between Gaussians and time-series diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CgnsError, Result};
use crate::filter::GaussianState;
use crate::linalg::{factor_hpd, log_det, symmetrize, trace_re};
use crate::scalar::Scalar;

/// Relative entropy split into its signal (mean) and dispersion
/// (covariance) parts, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct InfoGain {
    pub signal: f64,
    pub dispersion: f64,
    pub total: f64,
}

impl InfoGain {
    fn new(signal: f64, dispersion: f64) -> Self {
        // both parts are nonnegative; drop rounding residue below zero
        let (signal, dispersion) = (signal.max(0.0), dispersion.max(0.0));
        InfoGain { signal, dispersion, total: signal + dispersion }
    }
}

/// KL(p ‖ q) for Gaussians p and q.
pub fn kl_gaussian<T: Scalar>(p: &GaussianState<T>, q: &GaussianState<T>) -> Result<InfoGain> {
    let (signal, dispersion) = kl_parts(&p.mean, &p.cov, &q.mean, &q.cov)?;
    Ok(InfoGain::new(signal, dispersion))
}

/// `(signal, dispersion)` of KL(p ‖ q) before rounding residue below zero
/// is dropped.
pub fn kl_gaussian_raw<T: Scalar>(p: &GaussianState<T>, q: &GaussianState<T>) -> Result<(f64, f64)> {
    kl_parts(&p.mean, &p.cov, &q.mean, &q.cov)
}

fn kl_parts<T: Scalar>(
    mu_p: &DVector<T>,
    r_p: &DMatrix<T>,
    mu_q: &DVector<T>,
    r_q: &DMatrix<T>,
) -> Result<(f64, f64)> {
    let n = mu_p.len();
    if mu_q.len() != n || r_p.shape() != (n, n) || r_q.shape() != (n, n) {
        return Err(CgnsError::Shape("Gaussians have different dimensions".into()));
    }
    let q_chol = factor_hpd(r_q, "reference covariance")?;
    let p_chol = factor_hpd(r_p, "covariance")?;
    let dm = mu_p - mu_q;
    let signal = 0.5 * dm.dotc(&q_chol.solve(&dm)).real();
    // tr(Rp Rq⁻¹) = tr(Rq⁻¹ Rp); det(Rp Rq⁻¹) = det Rp / det Rq
    let tr = trace_re(&q_chol.solve(r_p));
    let ld = log_det(&p_chol) - log_det(&q_chol);
    let dispersion = 0.5 * (tr - n as f64 - ld);
    Ok((signal, dispersion))
}

/// Information gained at a lagged step j by applying the newest online
/// update instead of keeping the previous estimate.
///
/// `r_lagged` is the current covariance at j, `d` the update tensor that
/// carries the newest correction back to j, and `(d_mean, d_cov)` the
/// correction at the previous step (smoother minus filter).
pub fn update_gain<T: Scalar>(
    r_lagged: &DMatrix<T>,
    d: &DMatrix<T>,
    d_mean: &DVector<T>,
    d_cov: &DMatrix<T>,
) -> Result<InfoGain> {
    let l = r_lagged.nrows();
    let lag_chol = factor_hpd(r_lagged, "lagged smoother covariance")?;
    let shift = d * d_mean;
    let signal = 0.5 * shift.dotc(&lag_chol.solve(&shift)).real();

    let mut r_new = r_lagged + d * d_cov * d.adjoint();
    symmetrize(&mut r_new);
    // Q = R_new R_lagged⁻¹ is similar to a Hermitian positive matrix exactly
    // when R_new is positive definite; anything else is a conditioning error.
    let new_chol = r_new.clone().cholesky().ok_or_else(|| CgnsError::Conditioning {
        step: 0,
        what: "covariance ratio has a non-positive eigenvalue".into(),
    })?;
    let tr_q = trace_re(&lag_chol.solve(&r_new));
    let ld_q = log_det(&new_chol) - log_det(&lag_chol);
    let dispersion = 0.5 * (tr_q - l as f64 - ld_q);
    Ok(InfoGain::new(signal, dispersion))
}

/// Moving sample standard deviation over an odd window `w ≥ 3` with
/// replicate padding at both ends.
pub fn lsdf(series: &[f64], w: usize) -> Result<Vec<f64>> {
    if w < 3 || w % 2 == 0 {
        return Err(CgnsError::Parameter(format!("window must be odd and at least 3, got {w}")));
    }
    Ok(moving_std(series, w))
}

/// `lsdf` without the window check.
pub(crate) fn moving_std(series: &[f64], w: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (w / 2) as isize;
    let at = |i: isize| series[i.clamp(0, n as isize - 1) as usize];
    let mut win = Vec::with_capacity(w);
    (0..n as isize)
        .map(|i| {
            win.clear();
            win.extend((i - half..=i + half).map(at));
            let mean = win.iter().sum::<f64>() / w as f64;
            let ss: f64 = win.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (w - 1) as f64).sqrt()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// RMSE(estimate, truth) / std(truth).
pub fn nrmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.len() < 2 {
        return Err(CgnsError::Shape(format!(
            "nrmse needs equal lengths of at least 2, got {} and {}",
            estimate.len(),
            truth.len()
        )));
    }
    let s = std_dev(truth);
    if !(s > 0.0) {
        return Err(CgnsError::Degenerate("truth series is constant".into()));
    }
    let mse = estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / s)
}

/// Normalized sample autocorrelation for lags 0..=max_lag.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(CgnsError::Shape(format!("series of length {n} is too short for lag {max_lag}")));
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|x| (x - m).powi(2)).sum();
    if !(c0 > 0.0) {
        return Err(CgnsError::Degenerate("series is constant".into()));
    }
    Ok((0..=max_lag)
        .map(|k| (0..n - k).map(|i| (series[i] - m) * (series[i + k] - m)).sum::<f64>() / c0)
        .collect())
}

/// Gaussian kernel density estimate with Silverman's bandwidth
/// 1.06·σ̂·n^(−1/5), evaluated on `grid`.
pub fn kde(series: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 30 {
        return Err(CgnsError::Shape(format!("kde needs at least 30 samples, got {n}")));
    }
    let s = std_dev(series);
    if !(s > 0.0) {
        return Err(CgnsError::Degenerate("series is constant".into()));
    }
    let bw = 1.06 * s * (n as f64).powf(-0.2);
    let norm = 1.0 / (n as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            series.iter().map(|&x| (-0.5 * ((g - x) / bw).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect())
}

/// Sample mean and variance of a scalar sample (denominator n − 1).
pub fn gaussian_fit(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (m, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn g1(m: f64, v: f64) -> GaussianState<f64> {
        GaussianState::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v), 0.0).unwrap()
    }

    #[test]
    fn raw_parts_agree_with_the_clamped_gain() {
        let (s, d) = kl_gaussian_raw(&g1(1.0, 2.0), &g1(0.0, 1.0)).unwrap();
        let k = kl_gaussian(&g1(1.0, 2.0), &g1(0.0, 1.0)).unwrap();
        assert_eq!((s, d), (k.signal, k.dispersion));
        let (s, d) = kl_gaussian_raw(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap();
        assert!(s == 0.0 && d.abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gaussian(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap().total, 0.0);
        let k = kl_gaussian(&g1(1.0, 1.0), &g1(0.0, 1.0)).unwrap();
        assert!((k.signal - 0.5).abs() < 1e-15 && k.dispersion.abs() < 1e-15);
        let k = kl_gaussian(&g1(0.0, 2.0), &g1(0.0, 1.0)).unwrap();
        assert!((k.dispersion - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((k.dispersion - 0.15343).abs() < 1e-5);
        assert!(kl_gaussian(&g1(0.0, 1.0), &g1(0.0, 0.0)).is_err());
    }

    #[test]
    fn update_gain_trivial_cases() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let dm = DVector::from_vec(vec![0.3, -0.1]);
        let dr = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, -0.05]);
        let g = update_gain(&r, &DMatrix::zeros(2, 2), &dm, &dr).unwrap();
        assert!(g.total.abs() < 1e-15);
        let g = update_gain(&r, &DMatrix::identity(2, 2), &DVector::zeros(2), &DMatrix::zeros(2, 2)).unwrap();
        assert!(g.total.abs() < 1e-15);
        // an update that would make the covariance indefinite
        let bad = DMatrix::identity(2, 2) * -2.0;
        assert!(update_gain(&r, &DMatrix::identity(2, 2), &dm, &bad).is_err());
    }

    #[test]
    fn lsdf_examples() {
        assert_eq!(lsdf(&[2.0; 5], 3).unwrap(), vec![0.0; 5]);
        let v = lsdf(&[0.0, 1.0, 0.0], 3).unwrap();
        assert!((v[1] - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let v = lsdf(&[0.0, 1.0, 2.0, 3.0], 3).unwrap();
        assert!((v[1] - 1.0).abs() < 1e-15 && (v[2] - 1.0).abs() < 1e-15);
        // replicate padding at the edges: window [0, 0, 1]
        assert!((v[0] - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(lsdf(&[1.0], 4).is_err());
        assert!(lsdf(&[1.0], 1).is_err());
    }

    #[test]
    fn nrmse_examples() {
        let truth: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(nrmse(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|v| v + 0.25).collect();
        assert!((nrmse(&shifted, &truth).unwrap() - 0.25 / std_dev(&truth)).abs() < 1e-12);
        assert!(nrmse(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn acf_white_noise_and_ar1() {
        let mut rng = rng_from_seed(4);
        let white: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let a = acf(&white, 10).unwrap();
        assert_eq!(a[0], 1.0);
        assert!(a[1..].iter().all(|v| v.abs() < 0.05));
        let phi = 0.8;
        let mut x = 0.0;
        let ar: Vec<f64> = (0..50_000)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let a = acf(&ar, 5).unwrap();
        for (k, v) in a.iter().enumerate() {
            assert!((v - phi.powi(k as i32)).abs() < 0.05);
        }
    }

    #[test]
    fn kde_of_standard_normal() {
        let mut rng = rng_from_seed(5);
        let s: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let grid: Vec<f64> = (0..=800).map(|i| -8.0 + i as f64 * 0.02).collect();
        let d = kde(&s, &grid).unwrap();
        let peak = d.iter().cloned().fold(0.0, f64::max);
        assert!((peak / 0.398_942_28 - 1.0).abs() < 0.05);
        let integral: f64 = d.iter().sum::<f64>() * 0.02;
        assert!((integral - 1.0).abs() < 0.01);
        assert!(d.iter().all(|v| *v >= 0.0));
        // a nearly degenerate sample concentrates at its mean
        let tight: Vec<f64> = (0..100).map(|i| 3.0 + 1e-6 * (i as f64 - 50.0)).collect();
        let d = kde(&tight, &[2.9, 3.0, 3.1]).unwrap();
        assert!(d[1] > 1e3 && d[0] < 1e-10 && d[2] < 1e-10);
        assert!(kde(&s[..10], &grid).is_err());
    }

    fn spd(vals: &[f64], n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(n, n, &vals[..n * n]);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_split_consistent(vals in prop::collection::vec(-1.5f64..1.5, 24)) {
            let p = GaussianState::new(DVector::from_row_slice(&vals[18..21]), spd(&vals[0..9], 3), 0.0).unwrap();
            let q = GaussianState::new(DVector::from_row_slice(&vals[21..24]), spd(&vals[9..18], 3), 0.0).unwrap();
            let k = kl_gaussian(&p, &q).unwrap();
            prop_assert!(k.signal >= -1e-12);
            prop_assert!(k.dispersion >= -1e-12);
            prop_assert!((k.total - k.signal - k.dispersion).abs() <= 1e-12);
        }

        #[test]
        fn update_gain_equals_kl_of_updated_vs_lagged(vals in prop::collection::vec(-1.0f64..1.0, 14)) {
            let r = spd(&vals[0..4], 2);
            let d = DMatrix::from_row_slice(2, 2, &vals[4..8]);
            let dm = DVector::from_row_slice(&vals[8..10]);
            // a correction that shrinks the covariance, as smoothing does
            let a = DMatrix::from_row_slice(2, 2, &vals[10..14]) * 0.2;
            let dr = -(&a * a.transpose());
            prop_assume!(crate::linalg::min_eigenvalue(&(&r + &d * &dr * d.transpose())) > 1e-3);
            let g = update_gain(&r, &d, &dm, &dr).unwrap();
            let lagged = GaussianState::new(DVector::from_vec(vec![0.4, -0.2]), r.clone(), 0.0).unwrap();
            let updated = GaussianState::new(&lagged.mean + &d * &dm, &r + &d * &dr * d.transpose(), 0.0).unwrap();
            let k = kl_gaussian(&updated, &lagged).unwrap();
            prop_assert!((g.signal - k.signal).abs() <= 1e-10);
            prop_assert!((g.dispersion - k.dispersion).abs() <= 1e-10);
        }

        #[test]
        fn lsdf_shift_and_scale(vals in prop::collection::vec(-5.0f64..5.0, 3..40), c in -10.0f64..10.0, s in 0.1f64..10.0) {
            let base = lsdf(&vals, 5).unwrap();
            let shifted: Vec<f64> = vals.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = vals.iter().map(|v| v * s).collect();
            for ((b, sh), sc) in base.iter().zip(lsdf(&shifted, 5).unwrap()).zip(lsdf(&scaled, 5).unwrap()) {
                prop_assert!((b - sh).abs() <= 1e-9);
                prop_assert!((b * s - sc).abs() <= 1e-9 * (1.0 + sc.abs()));
            }
        }

        #[test]
        fn nrmse_matches_two_pass_oracle(vals in prop::collection::vec(-3.0f64..3.0, 8)) {
            let truth = &vals[0..4];
            let est = &vals[4..8];
            prop_assume!(std_dev(truth) > 1e-3);
            let mt = truth.iter().sum::<f64>() / 4.0;
            let mut var = 0.0;
            let mut se = 0.0;
            for i in 0..4 {
                var += (truth[i] - mt) * (truth[i] - mt);
                se += (est[i] - truth[i]) * (est[i] - truth[i]);
            }
            let oracle = (se / 4.0).sqrt() / (var / 4.0).sqrt();
            prop_assert!((nrmse(est, truth).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
        }
    }
}
