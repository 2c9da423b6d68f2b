//! Dense linear algebra and seeded sampling shared by every other module.

mod matrix;
mod rng;
mod svd;

pub use matrix::{frobenius_norm, matmul, Matrix};
pub use rng::{sample_gaussian, RngSnapshot, RngState, RNG_ALGORITHM};
pub use svd::{default_pinv_tol, pinv, svd, Svd, MAX_SWEEPS};
