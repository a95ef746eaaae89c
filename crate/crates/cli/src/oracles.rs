//! Independent reference computations used by the acceptance checks.

use cgnsda_core::linalg::{rel_frobenius, rel_norm_vec};
use cgnsda_core::{GaussianState, SmootherRun};
use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// Smoother posteriors from the closed-form full-history sums
///
/// ```text
/// μs_j = D_{j,n−1} μf_n + Σ_{r=j}^{n−1} D_{j,r−1} b_r
/// Rs_j = D_{j,n−1} Rf_n D_{j,n−1}† + Σ_{r=j}^{n−1} D_{j,r−1} P_r D_{j,r−1}†
/// ```
///
/// with D_{j,r} = E_j ⋯ E_r and D_{j,j−1} = I, built from the offline
/// coefficients by explicit products.
pub fn expansion_smoother(run: &SmootherRun<f64>) -> Vec<GaussianState<f64>> {
    let n = run.states.len() - 1;
    let l = run.states[0].dim();
    let last = &run.filter.states[n];
    (0..=n)
        .map(|j| {
            let mut d = DMatrix::<f64>::identity(l, l);
            let mut mean = DVector::zeros(l);
            let mut cov = DMatrix::zeros(l, l);
            for r in j..n {
                let c = &run.coeffs[r];
                mean += &d * &c.b;
                cov += &d * &c.p * d.transpose();
                d = &d * &c.e;
            }
            mean += &d * &last.mean;
            cov += &d * &last.cov * d.transpose();
            GaussianState { mean, cov, t: run.states[j].t }
        })
        .collect()
}

/// Joint covariance of (y_0, …, y_n) under the backward Markov chain
/// y_n ~ N(μf_n, Rf_n), y_j = E_j y_{j+1} + b_j + η_j with Cov(η_j) = P_j.
/// Block (i, k) is Cov(y_i, y_k).
pub fn backward_joint_covariance(run: &SmootherRun<f64>) -> DMatrix<f64> {
    let n = run.states.len() - 1;
    let l = run.states[0].dim();
    let size = (n + 1) * l;
    let mut s = DMatrix::zeros(size, size);
    s.view_mut((n * l, n * l), (l, l)).copy_from(&run.filter.states[n].cov);
    for j in (0..n).rev() {
        let e = &run.coeffs[j].e;
        // Cov(y_j, y_k) = E_j Cov(y_{j+1}, y_k) for k > j
        for k in j + 1..=n {
            let block = e * s.view(((j + 1) * l, k * l), (l, l));
            s.view_mut((j * l, k * l), (l, l)).copy_from(&block);
            s.view_mut((k * l, j * l), (l, l)).copy_from(&block.transpose());
        }
        let diag = e * s.view(((j + 1) * l, (j + 1) * l), (l, l)) * e.transpose() + &run.coeffs[j].p;
        s.view_mut((j * l, j * l), (l, l)).copy_from(&diag);
    }
    s
}

/// Cov(y_j, y_{j+1}) read off the joint covariance.
pub fn cross_block(joint: &DMatrix<f64>, l: usize, j: usize) -> DMatrix<f64> {
    joint.view((j * l, (j + 1) * l), (l, l)).into_owned()
}

/// Monte-Carlo estimate of KL(p ‖ q) = E_p[log p − log q] in nats.
pub fn mc_kl<R: Rng + ?Sized>(
    mp: &Vector3<f64>,
    rp: &Matrix3<f64>,
    mq: &Vector3<f64>,
    rq: &Matrix3<f64>,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let lp = Cholesky::new(*rp).expect("positive definite").l();
    let cq = Cholesky::new(*rq).expect("positive definite");
    let log_det = |l: Matrix3<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let half_ld = 0.5 * (log_det(cq.l()) - log_det(lp));
    let mut acc = 0.0;
    for _ in 0..samples {
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let x = mp + lp * z;
        let dq = x - mq;
        acc += -0.5 * z.norm_squared() + 0.5 * dq.dot(&cq.solve(&dq)) + half_ld;
    }
    acc / samples as f64
}

/// True when every mean and covariance entry is bitwise equal.
pub fn bitwise_equal(a: &[GaussianState<f64>], b: &[GaussianState<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.mean.iter().zip(y.mean.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
                && x.cov.iter().zip(y.cov.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

/// Largest per-step relative error of means and covariances of `a`
/// against the reference `b`.
pub fn max_rel_error(a: &[GaussianState<f64>], b: &[GaussianState<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_norm_vec(&x.mean, &y.mean).max(rel_frobenius(&x.cov, &y.cov)))
        .fold(0.0, f64::max)
}
