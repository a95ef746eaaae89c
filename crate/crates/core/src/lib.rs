//! Filtering and adaptive-lag online smoothing for conditional Gaussian
//! nonlinear systems.

pub mod em;
pub mod error;
pub mod filter;
pub mod info;
pub mod io;
pub mod linalg;
pub mod model;
pub mod models;
pub mod online;
pub mod scalar;
pub mod simulate;
pub mod smoother;

pub use em::{accelerate, e_step, m_step, run_batch_em, run_online_em, EmConfig, EmRun, LinearInTheta, PosteriorMoments, ThetaVector};
pub use error::{CgnsError, Result};
pub use filter::{equilibrium_variance_2d, filter_step, run_filter, FilterRun, GaussianState};
pub use info::{kl_gaussian, kl_gaussian_raw, lsdf, nrmse, update_gain, InfoGain};
pub use model::{gramians, Coefficients, Dims, LinearGaussianModel, ModelSpec, NoiseGramians};
pub use online::{choose_lag, run_online, LagCriterion, LagPolicy, OnlineRun, SmootherWindow, SpectralCheck, WindowOptions};
pub use scalar::{spectral_radius, FieldKind, Scalar, C64};
pub use simulate::{simulate, Trajectory};
pub use smoother::{run_smoother, smoother_step, step_coeffs, CoeffOptions, SmootherRun, StepCoefficients};
