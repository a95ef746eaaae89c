//! Lagrangian tracers advected by a random incompressible flow.
//!
//! ```text
//! dx_ℓ = v_ℓ dt + Σx dW_x
//! dv_ℓ = β (u(t, x_ℓ) − v_ℓ) dt + Σv dW_v
//! dû_k = (−d_k û_k + f_k(t)) dt + σ_k dW_k
//! u(t, x) = Σ_k û_k e^{i k·x} r_k,   r_k = (−k₂, k₁) / |k|
//! ```
//!
//! Tracer positions are observed. The hidden state stacks the tracer
//! velocities and one (Re, Im) pair per half-lattice representative k.
//! The partner −k carries the conjugate of û_k r_k, so the field is real
//! by construction.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgnsError, Result};
use crate::model::{Coefficients, Dims, ModelSpec};
use crate::scalar::C64;
use crate::simulate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaParams {
    /// Wavenumber bound K of the lattice [−K, K]².
    pub k_max: usize,
    /// Number of tracers L.
    pub n_tracers: usize,
    pub beta: f64,
    pub f_amp: f64,
    /// Angular frequency of the forcing.
    pub f_freq: f64,
    pub sigma_x: f64,
    pub sigma_v: f64,
    pub damping_range: [f64; 2],
    pub noise_range: [f64; 2],
    pub mode_seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams {
            k_max: 2,
            n_tracers: 18,
            beta: 1.0,
            f_amp: 0.15,
            f_freq: 5.0 * PI,
            sigma_x: 0.005 * PI,
            sigma_v: 0.1,
            damping_range: [0.5, 1.5],
            noise_range: [0.15, 0.25],
            mode_seed: 0,
        }
    }
}

impl LdaParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(CgnsError::Parameter("wavenumber bound K must be at least 1".into()));
        }
        if self.n_tracers < 1 {
            return Err(CgnsError::Parameter("at least one tracer is required".into()));
        }
        if !(self.sigma_x > 0.0) || !(self.sigma_v > 0.0) {
            return Err(CgnsError::Parameter("tracer noise amplitudes must be positive".into()));
        }
        for (name, [lo, hi]) in [("damping_range", self.damping_range), ("noise_range", self.noise_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0) {
                return Err(CgnsError::Parameter(format!("{name} must be a positive interval, got [{lo}, {hi}]")));
            }
        }
        if !(self.beta > 0.0) {
            return Err(CgnsError::Parameter(format!("drag beta must be positive, got {}", self.beta)));
        }
        if ![self.beta, self.f_amp, self.f_freq].iter().all(|v| v.is_finite()) {
            return Err(CgnsError::Parameter("LDA parameters must be finite".into()));
        }
        Ok(())
    }
}

/// One half-lattice representative with its damping and noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: [i32; 2],
    /// Unit eigenvector (−k₂, k₁) / |k|.
    pub r: [f64; 2],
    pub damping: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub params: LdaParams,
    pub modes: Vec<Mode>,
}

/// Half of the non-zero lattice: k₂ > 0, or k₂ = 0 and k₁ > 0.
pub fn half_lattice(k_max: usize) -> Vec<[i32; 2]> {
    let k = k_max as i32;
    let mut out = Vec::new();
    for k2 in 0..=k {
        for k1 in -k..=k {
            if k2 > 0 || k1 > 0 {
                out.push([k1, k2]);
            }
        }
    }
    out
}

pub fn lda_model(params: LdaParams) -> Result<LdaModel> {
    params.validate()?;
    let mut rng = rng_from_seed(params.mode_seed);
    let [d_lo, d_hi] = params.damping_range;
    let [s_lo, s_hi] = params.noise_range;
    let modes = half_lattice(params.k_max)
        .into_iter()
        .map(|k| {
            let norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
            let damping = if d_hi > d_lo { rng.random_range(d_lo..d_hi) } else { d_lo };
            let noise = if s_hi > s_lo { rng.random_range(s_lo..s_hi) } else { s_lo };
            Mode { k, r: [-(k[1] as f64) / norm, k[0] as f64 / norm], damping, noise }
        })
        .collect();
    Ok(LdaModel { params, modes })
}

/// Wraps an angle into [−π, π).
pub fn wrap_angle(a: f64) -> f64 {
    a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor()
}

impl LdaModel {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Offset of the first mode component in the hidden state.
    pub fn mode_offset(&self) -> usize {
        2 * self.params.n_tracers
    }

    /// Damping and noise over the full non-zero lattice, partners included.
    pub fn full_lattice(&self) -> Vec<([i32; 2], f64, f64)> {
        let mut out = Vec::with_capacity(2 * self.modes.len());
        for m in &self.modes {
            out.push((m.k, m.damping, m.noise));
            out.push(([-m.k[0], -m.k[1]], m.damping, m.noise));
        }
        out
    }

    /// Complex amplitudes over the full lattice recovered from the hidden
    /// state. The partner of k gets û_{−k} = −conj(û_k) because r_{−k} = −r_k.
    pub fn full_amplitudes(&self, y: &DVector<f64>) -> Vec<([i32; 2], [f64; 2], C64)> {
        let off = self.mode_offset();
        let mut out = Vec::with_capacity(2 * self.modes.len());
        for (m, mode) in self.modes.iter().enumerate() {
            let u = C64::new(y[off + 2 * m], y[off + 2 * m + 1]);
            out.push((mode.k, mode.r, u));
            out.push(([-mode.k[0], -mode.k[1]], [-mode.r[0], -mode.r[1]], -u.conj()));
        }
        out
    }

    /// Velocity field at `pos` from the hidden state, by direct summation
    /// over the full lattice. The imaginary parts vanish up to rounding.
    pub fn velocity_complex(&self, y: &DVector<f64>, pos: [f64; 2]) -> [C64; 2] {
        let mut u = [C64::new(0.0, 0.0); 2];
        for (k, r, amp) in self.full_amplitudes(y) {
            let phase = C64::from_polar(1.0, k[0] as f64 * pos[0] + k[1] as f64 * pos[1]);
            let z = amp * phase;
            u[0] += z * r[0];
            u[1] += z * r[1];
        }
        u
    }

    /// Real velocity field at `pos`.
    pub fn velocity(&self, y: &DVector<f64>, pos: [f64; 2]) -> [f64; 2] {
        let off = self.mode_offset();
        let mut u = [0.0; 2];
        for (m, mode) in self.modes.iter().enumerate() {
            let (s, c) = (mode.k[0] as f64 * pos[0] + mode.k[1] as f64 * pos[1]).sin_cos();
            let w = 2.0 * (y[off + 2 * m] * c - y[off + 2 * m + 1] * s);
            u[0] += w * mode.r[0];
            u[1] += w * mode.r[1];
        }
        u
    }

    /// Tracers at rest and all modes at zero.
    pub fn zero_hidden(&self) -> DVector<f64> {
        DVector::zeros(self.dims().l)
    }

    /// Tracer positions drawn uniformly over the domain.
    pub fn initial_positions(&self, seed: u64) -> DVector<f64> {
        let mut rng = rng_from_seed(seed);
        DVector::from_fn(2 * self.params.n_tracers, |_, _| rng.random_range(-PI..PI))
    }
}

impl ModelSpec<f64> for LdaModel {
    fn dims(&self) -> Dims {
        let k = 2 * self.params.n_tracers;
        let l = k + 2 * self.modes.len();
        Dims { k, l, d: k, r: l }
    }

    fn coefficients(&self, t: f64, x: &DVector<f64>) -> Coefficients<f64> {
        let p = &self.params;
        let dims = self.dims();
        let (k, l) = (dims.k, dims.l);
        let off = self.mode_offset();
        let mut c = Coefficients::zeros(dims);
        for i in 0..k {
            c.lambda_x[(i, i)] = 1.0;
            c.sigma_x1[(i, i)] = p.sigma_x;
            c.lambda_y[(i, i)] = -p.beta;
            c.sigma_y2[(i, i)] = p.sigma_v;
        }
        let (fs, fc) = (p.f_freq * t).sin_cos();
        for (m, mode) in self.modes.iter().enumerate() {
            let (re, im) = (off + 2 * m, off + 2 * m + 1);
            for ell in 0..p.n_tracers {
                let theta = mode.k[0] as f64 * x[2 * ell] + mode.k[1] as f64 * x[2 * ell + 1];
                let (s, co) = theta.sin_cos();
                for dim in 0..2 {
                    let row = 2 * ell + dim;
                    c.lambda_y[(row, re)] = 2.0 * p.beta * co * mode.r[dim];
                    c.lambda_y[(row, im)] = -2.0 * p.beta * s * mode.r[dim];
                }
            }
            c.lambda_y[(re, re)] = -mode.damping;
            c.lambda_y[(im, im)] = -mode.damping;
            c.f_y[re] = p.f_amp * fc;
            c.f_y[im] = p.f_amp * fs;
            // complex white noise: each real component carries half the variance
            c.sigma_y2[(re, re)] = mode.noise * std::f64::consts::FRAC_1_SQRT_2;
            c.sigma_y2[(im, im)] = mode.noise * std::f64::consts::FRAC_1_SQRT_2;
        }
        debug_assert_eq!(c.sigma_y2.shape(), (l, l));
        c
    }

    fn wrap_observed(&self, x: &mut DVector<f64>) {
        x.apply(|v| *v = wrap_angle(*v));
    }

    fn increment(&self, x_prev: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
        (x_next - x_prev).map(wrap_angle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;

    fn small() -> LdaModel {
        lda_model(LdaParams { k_max: 2, n_tracers: 3, mode_seed: 5, ..Default::default() }).unwrap()
    }

    fn random_state(model: &LdaModel, seed: u64) -> DVector<f64> {
        let mut rng = rng_from_seed(seed);
        DVector::from_fn(model.dims().l, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(half_lattice(1).len(), 4);
        assert_eq!(half_lattice(2).len(), 12);
        let m = lda_model(LdaParams::default()).unwrap();
        assert_eq!(m.dims().l, 36 + 24);
        assert!(lda_model(LdaParams { k_max: 0, ..Default::default() }).is_err());
        assert!(lda_model(LdaParams { n_tracers: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn conjugate_pairs_share_parameters() {
        let m = small();
        let full = m.full_lattice();
        assert_eq!(full.len(), 24);
        for (k, d, s) in &full {
            let partner = full.iter().find(|(q, _, _)| q[0] == -k[0] && q[1] == -k[1]).unwrap();
            assert_eq!(*d, partner.1);
            assert_eq!(*s, partner.2);
            assert!((0.5..1.5).contains(d) && (0.15..0.25).contains(s));
        }
    }

    #[test]
    fn field_is_real() {
        let m = small();
        let y = random_state(&m, 3);
        for pos in [[0.1, -2.0], [3.0, 1.0], [-3.1, 0.0]] {
            let z = m.velocity_complex(&y, pos);
            let u = m.velocity(&y, pos);
            for i in 0..2 {
                assert!(z[i].im.abs() < 1e-12);
                assert!((z[i].re - u[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn field_is_divergence_free() {
        let m = small();
        let y = random_state(&m, 4);
        let h = 1e-5;
        let n = 64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [-PI + 2.0 * PI * i as f64 / n as f64, -PI + 2.0 * PI * j as f64 / n as f64];
                let dudx = (m.velocity(&y, [p[0] + h, p[1]])[0] - m.velocity(&y, [p[0] - h, p[1]])[0]) / (2.0 * h);
                let dvdy = (m.velocity(&y, [p[0], p[1] + h])[1] - m.velocity(&y, [p[0], p[1] - h])[1]) / (2.0 * h);
                worst = worst.max((dudx + dvdy).abs());
            }
        }
        assert!(worst < 1e-6, "divergence {worst}");
    }

    #[test]
    fn single_mode_is_orthogonal_to_k() {
        let m = lda_model(LdaParams { k_max: 1, n_tracers: 1, ..Default::default() }).unwrap();
        let idx = m.modes.iter().position(|md| md.k == [1, 0]).unwrap();
        let mut y = m.zero_hidden();
        y[m.mode_offset() + 2 * idx] = 1.0;
        for pos in [[0.3, 0.2], [-1.0, 2.5]] {
            let u = m.velocity(&y, pos);
            assert!(u[0].abs() < 1e-15);
            assert!((u[1] - 2.0 * (pos[0]).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_matches_field() {
        let m = small();
        let y = random_state(&m, 8);
        let x = m.initial_positions(1);
        let c = m.coefficients(0.3, &x);
        let dy = c.drift_y(&y);
        for ell in 0..3 {
            let u = m.velocity(&y, [x[2 * ell], x[2 * ell + 1]]);
            for dim in 0..2 {
                let want = m.params.beta * (u[dim] - y[2 * ell + dim]);
                assert!((dy[2 * ell + dim] - want).abs() < 1e-12);
            }
        }
        let dx = c.drift_x(&y);
        assert_eq!(dx.rows(0, 6), y.rows(0, 6));
    }

    #[test]
    fn positions_stay_wrapped() {
        let m = lda_model(LdaParams { k_max: 1, n_tracers: 4, ..Default::default() }).unwrap();
        let tr = simulate(&m, m.initial_positions(2), m.zero_hidden(), 400, 0.005, 2).unwrap();
        for x in &tr.x_path {
            assert!(x.iter().all(|v| (-PI..PI).contains(v)));
        }
        let a = DVector::from_vec(vec![PI - 0.01]);
        let b = DVector::from_vec(vec![-PI + 0.01]);
        assert!((m.increment(&a, &b)[0] - 0.02).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), -PI);
    }
}
