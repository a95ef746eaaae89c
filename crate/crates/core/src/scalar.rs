//! Scalar field abstraction.
//!
//! Every estimator in the crate is generic over [`Scalar`], implemented for
//! `f64` and [`C64`]. Transposes are always Hermitian (`adjoint`), so the
//! real instantiation reduces to the usual transpose.

use nalgebra::{Complex, ComplexField, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CgnsError, Result};

pub type C64 = Complex<f64>;

/// Whether a model evolves over the reals or the complex numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Real,
    Complex,
}

pub trait Scalar: ComplexField<RealField = f64> + Copy {
    const KIND: FieldKind;

    /// Draws a standard normal. Complex draws have independent real and
    /// imaginary parts, each with variance 1/2.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Largest eigenvalue modulus of a square matrix.
    fn spectral_radius(m: &DMatrix<Self>) -> Result<f64>;

    fn from_parts(re: f64, im: f64) -> Self;
}

const SCHUR_MAX_ITER: usize = 10_000;

fn check_square<T: Scalar>(m: &DMatrix<T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(CgnsError::Shape(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl Scalar for f64 {
    const KIND: FieldKind = FieldKind::Real;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
        check_square(m)?;
        match m.nrows() {
            0 => Ok(0.0),
            1 => Ok(m[(0, 0)].abs()),
            _ => {
                let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
                    .ok_or_else(|| CgnsError::Conditioning {
                        step: 0,
                        what: "Schur decomposition did not converge".into(),
                    })?;
                Ok(schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max))
            }
        }
    }

    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for C64 {
    const KIND: FieldKind = FieldKind::Complex;

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn spectral_radius(m: &DMatrix<C64>) -> Result<f64> {
        check_square(m)?;
        match m.nrows() {
            0 => Ok(0.0),
            1 => Ok(m[(0, 0)].norm()),
            _ => {
                let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER)
                    .ok_or_else(|| CgnsError::Conditioning {
                        step: 0,
                        what: "Schur decomposition did not converge".into(),
                    })?;
                let (_, t) = schur.unpack();
                Ok(t.diagonal().iter().map(|z| z.norm()).fold(0.0, f64::max))
            }
        }
    }

    fn from_parts(re: f64, im: f64) -> Self {
        C64::new(re, im)
    }
}

/// Spectral radius of a square matrix.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> Result<f64> {
    T::spectral_radius(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complex_normal_has_half_variance_per_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let (mut sr, mut si, mut sri) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = C64::standard_normal(&mut rng);
            sr += z.re * z.re;
            si += z.im * z.im;
            sri += z.re * z.im;
        }
        let n = n as f64;
        assert!((sr / n - 0.5).abs() < 0.01);
        assert!((si / n - 0.5).abs() < 0.01);
        assert!((sri / n).abs() < 0.01);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&DMatrix::<f64>::identity(3, 3)).unwrap(), 1.0);
        assert_eq!(spectral_radius(&DMatrix::<f64>::zeros(3, 3)).unwrap(), 0.0);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nil).unwrap() < 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -0.25]));
        assert!((spectral_radius(&d).unwrap() - 0.5).abs() < 1e-14);
        // rotation by 90 degrees scaled by 0.9 has complex eigenvalues
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 0.9).abs() < 1e-12);
        assert!(spectral_radius(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn complex_spectral_radius() {
        let i = C64::new(0.0, 1.0);
        let m = DMatrix::from_row_slice(2, 2, &[i * 0.3, C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(-0.6, 0.0)]);
        assert!((spectral_radius(&m).unwrap() - 0.6).abs() < 1e-12);
    }
}
