//! Conditional Gaussian nonlinear system definition and noise Gramians.
//!
//! A model couples an observed state `x` (dimension `k`) and an unobserved
//! state `y` (dimension `l`) through
//!
//! ```text
//! dx = (Λx(t,x) y + fx(t,x)) dt + Σx1(t,x) dW1 + Σx2(t,x) dW2
//! dy = (Λy(t,x) y + fy(t,x)) dt + Σy1(t,x) dW1 + Σy2(t,x) dW2
//! ```
//!
//! with `W1` of dimension `d` and `W2` of dimension `r`. Given the observed
//! path the unobserved state is Gaussian, which is what every estimator in
//! this crate exploits.

use nalgebra::{DMatrix, DVector};

use crate::error::{CgnsError, Result};
use crate::scalar::{FieldKind, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// observed dimension
    pub k: usize,
    /// unobserved dimension
    pub l: usize,
    /// dimension of W1
    pub d: usize,
    /// dimension of W2
    pub r: usize,
}

/// All coefficient functionals evaluated at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients<T: Scalar> {
    pub lambda_x: DMatrix<T>,
    pub f_x: DVector<T>,
    pub sigma_x1: DMatrix<T>,
    pub sigma_x2: DMatrix<T>,
    pub lambda_y: DMatrix<T>,
    pub f_y: DVector<T>,
    pub sigma_y1: DMatrix<T>,
    pub sigma_y2: DMatrix<T>,
}

impl<T: Scalar> Coefficients<T> {
    /// All-zero coefficients of the given shape.
    pub fn zeros(dims: Dims) -> Self {
        let Dims { k, l, d, r } = dims;
        Coefficients {
            lambda_x: DMatrix::zeros(k, l),
            f_x: DVector::zeros(k),
            sigma_x1: DMatrix::zeros(k, d),
            sigma_x2: DMatrix::zeros(k, r),
            lambda_y: DMatrix::zeros(l, l),
            f_y: DVector::zeros(l),
            sigma_y1: DMatrix::zeros(l, d),
            sigma_y2: DMatrix::zeros(l, r),
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        let Dims { k, l, d, r } = dims;
        let checks: [(&str, (usize, usize), (usize, usize)); 8] = [
            ("Λx", self.lambda_x.shape(), (k, l)),
            ("fx", self.f_x.shape(), (k, 1)),
            ("Σx1", self.sigma_x1.shape(), (k, d)),
            ("Σx2", self.sigma_x2.shape(), (k, r)),
            ("Λy", self.lambda_y.shape(), (l, l)),
            ("fy", self.f_y.shape(), (l, 1)),
            ("Σy1", self.sigma_y1.shape(), (l, d)),
            ("Σy2", self.sigma_y2.shape(), (l, r)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(CgnsError::ModelDefinition(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }

    /// Drift of the observed component, Λx·y + fx.
    pub fn drift_x(&self, y: &DVector<T>) -> DVector<T> {
        &self.lambda_x * y + &self.f_x
    }

    /// Drift of the unobserved component, Λy·y + fy.
    pub fn drift_y(&self, y: &DVector<T>) -> DVector<T> {
        &self.lambda_y * y + &self.f_y
    }
}

/// A conditional Gaussian nonlinear system.
///
/// Implementations must be pure: the same `(t, x)` always yields the same
/// coefficients.
pub trait ModelSpec<T: Scalar>: Send + Sync {
    fn dims(&self) -> Dims;

    fn coefficients(&self, t: f64, x: &DVector<T>) -> Coefficients<T>;

    fn field(&self) -> FieldKind {
        T::KIND
    }

    /// Maps a simulated observed state back into its domain. Periodic
    /// models wrap here; the default does nothing.
    fn wrap_observed(&self, _x: &mut DVector<T>) {}

    /// Observed increment between consecutive samples. Periodic models
    /// return the minimal image so that wrapping never shows up as a jump.
    fn increment(&self, x_prev: &DVector<T>, x_next: &DVector<T>) -> DVector<T> {
        x_next - x_prev
    }
}

impl<T: Scalar, M: ModelSpec<T> + ?Sized> ModelSpec<T> for &M {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn coefficients(&self, t: f64, x: &DVector<T>) -> Coefficients<T> {
        (**self).coefficients(t, x)
    }
    fn wrap_observed(&self, x: &mut DVector<T>) {
        (**self).wrap_observed(x)
    }
    fn increment(&self, x_prev: &DVector<T>, x_next: &DVector<T>) -> DVector<T> {
        (**self).increment(x_prev, x_next)
    }
}

impl<T: Scalar, M: ModelSpec<T> + ?Sized> ModelSpec<T> for Box<M> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn coefficients(&self, t: f64, x: &DVector<T>) -> Coefficients<T> {
        (**self).coefficients(t, x)
    }
    fn wrap_observed(&self, x: &mut DVector<T>) {
        (**self).wrap_observed(x)
    }
    fn increment(&self, x_prev: &DVector<T>, x_next: &DVector<T>) -> DVector<T> {
        (**self).increment(x_prev, x_next)
    }
}

/// Evaluates the model and checks every output shape.
pub fn evaluate<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    t: f64,
    x: &DVector<T>,
) -> Result<Coefficients<T>> {
    let dims = model.dims();
    if x.len() != dims.k {
        return Err(CgnsError::Shape(format!("x has length {}, expected {}", x.len(), dims.k)));
    }
    let c = model.coefficients(t, x);
    c.validate(dims)?;
    Ok(c)
}

/// Noise interaction matrices of a model at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGramians<T: Scalar> {
    pub sxx: DMatrix<T>,
    pub syy: DMatrix<T>,
    pub syx: DMatrix<T>,
    pub sxy: DMatrix<T>,
}

impl<T: Scalar> NoiseGramians<T> {
    pub fn from_coefficients(c: &Coefficients<T>) -> Self {
        let sxx = &c.sigma_x1 * c.sigma_x1.adjoint() + &c.sigma_x2 * c.sigma_x2.adjoint();
        let syy = &c.sigma_y1 * c.sigma_y1.adjoint() + &c.sigma_y2 * c.sigma_y2.adjoint();
        let sxy = &c.sigma_x1 * c.sigma_y1.adjoint() + &c.sigma_x2 * c.sigma_y2.adjoint();
        let syx = sxy.adjoint();
        NoiseGramians { sxx, syy, syx, sxy }
    }

    /// True when the observed and unobserved noises do not interact.
    pub fn no_cross_noise(&self) -> bool {
        self.sxy.iter().all(|z| *z == T::zero())
    }
}

pub fn gramians<T: Scalar, M: ModelSpec<T> + ?Sized>(
    model: &M,
    t: f64,
    x: &DVector<T>,
) -> Result<NoiseGramians<T>> {
    Ok(NoiseGramians::from_coefficients(&evaluate(model, t, x)?))
}

/// A model whose coefficients are constant except for forcings that are
/// affine in `x`: fx = Axx·x + cx and fy = Ayx·x + cy.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel<T: Scalar> {
    pub lambda_x: DMatrix<T>,
    pub a_xx: DMatrix<T>,
    pub c_x: DVector<T>,
    pub sigma_x1: DMatrix<T>,
    pub sigma_x2: DMatrix<T>,
    pub lambda_y: DMatrix<T>,
    pub a_yx: DMatrix<T>,
    pub c_y: DVector<T>,
    pub sigma_y1: DMatrix<T>,
    pub sigma_y2: DMatrix<T>,
}

impl<T: Scalar> LinearGaussianModel<T> {
    /// Zero model with the given dimensions, to be filled in field by field.
    pub fn zeros(dims: Dims) -> Self {
        let Dims { k, l, d, r } = dims;
        LinearGaussianModel {
            lambda_x: DMatrix::zeros(k, l),
            a_xx: DMatrix::zeros(k, k),
            c_x: DVector::zeros(k),
            sigma_x1: DMatrix::zeros(k, d),
            sigma_x2: DMatrix::zeros(k, r),
            lambda_y: DMatrix::zeros(l, l),
            a_yx: DMatrix::zeros(l, k),
            c_y: DVector::zeros(l),
            sigma_y1: DMatrix::zeros(l, d),
            sigma_y2: DMatrix::zeros(l, r),
        }
    }
}

impl<T: Scalar> ModelSpec<T> for LinearGaussianModel<T> {
    fn dims(&self) -> Dims {
        Dims {
            k: self.lambda_x.nrows(),
            l: self.lambda_x.ncols(),
            d: self.sigma_x1.ncols(),
            r: self.sigma_x2.ncols(),
        }
    }

    fn coefficients(&self, _t: f64, x: &DVector<T>) -> Coefficients<T> {
        Coefficients {
            lambda_x: self.lambda_x.clone(),
            f_x: &self.a_xx * x + &self.c_x,
            sigma_x1: self.sigma_x1.clone(),
            sigma_x2: self.sigma_x2.clone(),
            lambda_y: self.lambda_y.clone(),
            f_y: &self.a_yx * x + &self.c_y,
            sigma_y1: self.sigma_y1.clone(),
            sigma_y2: self.sigma_y2.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::scalar::C64;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn identity_noise_gives_identity_gramian() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 2, l: 2, d: 2, r: 2 });
        m.sigma_x1 = DMatrix::identity(2, 2);
        let g = gramians(&m, 0.0, &DVector::zeros(2)).unwrap();
        assert_eq!(g.sxx, DMatrix::identity(2, 2));
        assert_eq!(g.sxy, DMatrix::zeros(2, 2));
        assert!(g.no_cross_noise());
    }

    #[test]
    fn bad_shapes_are_a_model_error() {
        let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 1, l: 2, d: 1, r: 1 });
        m.sigma_y2 = DMatrix::zeros(3, 1);
        let err = gramians(&m, 0.0, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, CgnsError::ModelDefinition(_)));
        let err = gramians(&m, 0.0, &DVector::zeros(4)).unwrap_err();
        assert!(matches!(err, CgnsError::Shape(_)));
    }

    fn outer_sum_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        // Σ_c a[:,c] b[:,c]^T written out elementwise
        let mut out = DMatrix::zeros(a.nrows(), b.nrows());
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                let mut s = 0.0;
                for c in 0..a.ncols() {
                    s += a[(i, c)] * b[(j, c)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn gramians_match_elementwise_sums(vals in prop::collection::vec(-2.0f64..2.0, 36)) {
            let mut m = LinearGaussianModel::<f64>::zeros(Dims { k: 3, l: 3, d: 3, r: 3 });
            m.sigma_x1 = mat(3, 3, &vals[0..9]);
            m.sigma_x2 = mat(3, 3, &vals[9..18]);
            m.sigma_y1 = mat(3, 3, &vals[18..27]);
            m.sigma_y2 = mat(3, 3, &vals[27..36]);
            let g = gramians(&m, 0.3, &DVector::zeros(3)).unwrap();
            let sxx = outer_sum_oracle(&m.sigma_x1, &m.sigma_x1) + outer_sum_oracle(&m.sigma_x2, &m.sigma_x2);
            let syy = outer_sum_oracle(&m.sigma_y1, &m.sigma_y1) + outer_sum_oracle(&m.sigma_y2, &m.sigma_y2);
            let sxy = outer_sum_oracle(&m.sigma_x1, &m.sigma_y1) + outer_sum_oracle(&m.sigma_x2, &m.sigma_y2);
            prop_assert!((&g.sxx - sxx).norm() < 1e-12);
            prop_assert!((&g.syy - syy).norm() < 1e-12);
            prop_assert!((&g.sxy - &sxy).norm() < 1e-12);
            prop_assert!((&g.syx - sxy.transpose()).norm() < 1e-12);
            prop_assert!((&g.sxx - g.sxx.transpose()).norm() < 1e-14);
            prop_assert!(min_eigenvalue(&g.sxx) >= -1e-12);
            prop_assert!(min_eigenvalue(&g.syy) >= -1e-12);
        }

        #[test]
        fn complex_gramians_are_hermitian(vals in prop::collection::vec(-1.0f64..1.0, 16)) {
            let c = |i: usize| C64::new(vals[2 * i], vals[2 * i + 1]);
            let mut m = LinearGaussianModel::<C64>::zeros(Dims { k: 2, l: 2, d: 1, r: 1 });
            m.sigma_x1 = DMatrix::from_column_slice(2, 1, &[c(0), c(1)]);
            m.sigma_x2 = DMatrix::from_column_slice(2, 1, &[c(2), c(3)]);
            m.sigma_y1 = DMatrix::from_column_slice(2, 1, &[c(4), c(5)]);
            m.sigma_y2 = DMatrix::from_column_slice(2, 1, &[c(6), c(7)]);
            let g = gramians(&m, 0.0, &DVector::zeros(2)).unwrap();
            prop_assert!((&g.sxx - g.sxx.adjoint()).norm() < 1e-14);
            prop_assert!((&g.syx - g.sxy.adjoint()).norm() < 1e-14);
            prop_assert!(min_eigenvalue(&g.syy) >= -1e-12);
        }
    }
}
