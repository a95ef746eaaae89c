//! Concrete systems with their published parameter sets.

pub mod dyad;
pub mod em_dyad;
pub mod lda;
pub mod linear2d;

pub use dyad::{dyad_model, DyadModel, DyadParams};
pub use em_dyad::{em_dyad_model, EmDyadFamily, EmDyadModel, EmDyadParams};
pub use lda::{lda_model, LdaModel, LdaParams};
pub use linear2d::{linear2d_model, Linear2dModel, Linear2dParams};
