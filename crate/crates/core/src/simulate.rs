//! Euler–Maruyama simulation of a model and the trajectory container.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CgnsError, Result};
use crate::io::{fmt_f64, push_header, push_values, write_row};
use crate::linalg::is_finite_vec;
use crate::model::{evaluate, ModelSpec};
use crate::scalar::Scalar;

/// The generator behind every seeded draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Observed path on a uniform grid, with the hidden path when it is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x_path: Vec<DVector<T>>,
    pub y_path: Option<Vec<DVector<T>>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(
        dt: f64,
        times: Vec<f64>,
        x_path: Vec<DVector<T>>,
        y_path: Option<Vec<DVector<T>>>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CgnsError::Parameter(format!("dt must be positive, got {dt}")));
        }
        if times.len() != x_path.len() {
            return Err(CgnsError::Shape(format!(
                "{} times but {} observations",
                times.len(),
                x_path.len()
            )));
        }
        if let Some(y) = &y_path {
            if y.len() != x_path.len() {
                return Err(CgnsError::Shape(format!(
                    "{} hidden states but {} observations",
                    y.len(),
                    x_path.len()
                )));
            }
        }
        if let Some(&t0) = times.first() {
            for (j, &t) in times.iter().enumerate() {
                let want = t0 + j as f64 * dt;
                if (t - want).abs() > 1e-9 * want.abs().max(1.0) {
                    return Err(CgnsError::Parameter(format!(
                        "time grid is not uniform at index {j}: {t} vs {want}"
                    )));
                }
            }
        }
        Ok(Trajectory { dt, times, x_path, y_path })
    }

    /// Observations on the grid t_j = j·dt.
    pub fn from_observations(dt: f64, x_path: Vec<DVector<T>>) -> Result<Self> {
        let times = (0..x_path.len()).map(|j| j as f64 * dt).collect();
        Self::new(dt, times, x_path, None)
    }

    pub fn len(&self) -> usize {
        self.x_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_path.is_empty()
    }

    /// Number of transitions, len − 1.
    pub fn n_steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// First `len` samples.
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Trajectory {
            dt: self.dt,
            times: self.times[..len].to_vec(),
            x_path: self.x_path[..len].to_vec(),
            y_path: self.y_path.as_ref().map(|y| y[..len].to_vec()),
        }
    }

    /// Writes `t, x_0.., [y_0..]` (complex entries as `re_`/`im_` pairs).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        let k = self.x_path.first().map_or(0, |x| x.len());
        push_header::<T>(&mut header, "x", k);
        if let Some(y) = &self.y_path {
            push_header::<T>(&mut header, "y", y.first().map_or(0, |v| v.len()));
        }
        write_row(w, &header)?;
        for j in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[j])];
            push_values(&mut row, &self.x_path[j]);
            if let Some(y) = &self.y_path {
                push_values(&mut row, &y[j]);
            }
            write_row(w, &row)?;
        }
        Ok(())
    }
}

/// Simulates `n_steps` Euler–Maruyama steps from `(x0, y0)` at t = 0.
///
/// Each step draws the `d` components of the first noise and then the `r`
/// components of the second, in that order, from a generator seeded with
/// `seed`.
pub fn simulate<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    x0: DVector<T>,
    y0: DVector<T>,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Trajectory<T>> {
    let mut rng = rng_from_seed(seed);
    simulate_with(model, x0, y0, n_steps, dt, 0.0, &mut rng)
}

pub fn simulate_with<T: Scalar, M: ModelSpec<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x0: DVector<T>,
    y0: DVector<T>,
    n_steps: usize,
    dt: f64,
    t0: f64,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CgnsError::Parameter(format!("dt must be positive, got {dt}")));
    }
    if n_steps == 0 {
        return Err(CgnsError::Parameter("n_steps must be at least 1".into()));
    }
    let dims = model.dims();
    if x0.len() != dims.k || y0.len() != dims.l {
        return Err(CgnsError::Shape(format!(
            "initial state has lengths ({}, {}), expected ({}, {})",
            x0.len(),
            y0.len(),
            dims.k,
            dims.l
        )));
    }
    let h = T::from_real(dt);
    let sq = T::from_real(dt.sqrt());
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut ys = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    model.wrap_observed(&mut x);
    let mut y = y0;
    xs.push(x.clone());
    ys.push(y.clone());
    for j in 0..n_steps {
        let t = t0 + j as f64 * dt;
        let c = evaluate(model, t, &x)?;
        let e1 = DVector::<T>::from_fn(dims.d, |_, _| T::standard_normal(rng));
        let e2 = DVector::<T>::from_fn(dims.r, |_, _| T::standard_normal(rng));
        let mut x_next =
            &x + c.drift_x(&y) * h + (&c.sigma_x1 * &e1 + &c.sigma_x2 * &e2) * sq;
        let y_next = &y + c.drift_y(&y) * h + (&c.sigma_y1 * &e1 + &c.sigma_y2 * &e2) * sq;
        if !is_finite_vec(&x_next) || !is_finite_vec(&y_next) {
            return Err(CgnsError::BlowUp { step: j + 1 });
        }
        model.wrap_observed(&mut x_next);
        xs.push(x_next.clone());
        ys.push(y_next.clone());
        x = x_next;
        y = y_next;
    }
    let times = (0..=n_steps).map(|j| t0 + j as f64 * dt).collect();
    Trajectory::new(dt, times, xs, Some(ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, LinearGaussianModel};
    use nalgebra::DMatrix;

    #[test]
    fn deterministic_decay_matches_explicit_euler() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 2, d: 1, r: 1 });
        m.lambda_y = DMatrix::identity(2, 2) * -0.7;
        let y0 = DVector::from_vec(vec![1.5, -2.0]);
        let traj = simulate(&m, DVector::zeros(1), y0.clone(), 50, 0.01, 1).unwrap();
        let y = traj.y_path.as_ref().unwrap();
        for (n, yn) in y.iter().enumerate() {
            let want = &y0 * (1.0 - 0.7 * 0.01f64).powi(n as i32);
            assert!((yn - want).norm() < 1e-14);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 1, d: 1, r: 1 });
        m.lambda_x[(0, 0)] = 1.0;
        m.lambda_y[(0, 0)] = -1.0;
        m.sigma_x1[(0, 0)] = 0.5;
        m.sigma_y2[(0, 0)] = 0.5;
        let a = simulate(&m, DVector::zeros(1), DVector::zeros(1), 200, 0.01, 9).unwrap();
        let b = simulate(&m, DVector::zeros(1), DVector::zeros(1), 200, 0.01, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, DVector::zeros(1), DVector::zeros(1), 200, 0.01, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blow_up_reports_step() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 1, d: 1, r: 1 });
        m.lambda_y[(0, 0)] = 1e200;
        let err = simulate(&m, DVector::zeros(1), DVector::from_element(1, 1e200), 10, 1.0, 0)
            .unwrap_err();
        assert_eq!(err, CgnsError::BlowUp { step: 1 });
    }

    #[test]
    fn ou_equilibrium_variance() {
        // dy = -a y dt + s dW; the equilibrium variance is s^2 / (2a)
        let (a, s, dt) = (1.0, 0.8, 0.01);
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 1, d: 1, r: 1 });
        m.lambda_y[(0, 0)] = -a;
        m.sigma_y2[(0, 0)] = s;
        let mut rng = rng_from_seed(77);
        let n_paths = 10_000;
        let mut acc = 0.0;
        for _ in 0..n_paths {
            let tr = simulate_with(&m, DVector::zeros(1), DVector::zeros(1), 500, dt, 0.0, &mut rng)
                .unwrap();
            let v = tr.y_path.unwrap()[500][0];
            acc += v * v;
        }
        let var = acc / n_paths as f64;
        let target = s * s / (2.0 * a);
        assert!((var / target - 1.0).abs() < 0.05, "var {var} target {target}");
    }

    #[test]
    fn csv_header_and_rows() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 2, l: 1, d: 1, r: 1 });
        m.lambda_y[(0, 0)] = -1.0;
        let tr = simulate(&m, DVector::zeros(2), DVector::zeros(1), 3, 0.5, 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x_0,x_1,y_0");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("0.5,"));
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let x = vec![DVector::<f64>::zeros(1); 3];
        assert!(Trajectory::new(0.1, vec![0.0, 0.1, 0.25], x.clone(), None).is_err());
        assert!(Trajectory::new(0.0, vec![0.0, 0.1, 0.2], x, None).is_err());
    }
}
