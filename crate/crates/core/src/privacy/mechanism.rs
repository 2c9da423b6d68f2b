use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, Matrix, RngState};
use crate::privacy::PrivacySpec;

/// Scales `delta` by `min(1, clip / ||delta||_F)`.
pub fn clip_update(delta: &Matrix, clip: f64) -> Result<Matrix> {
    if !(clip > 0.0) {
        return Err(Error::InvalidArgument(format!("clip must be > 0, got {clip}")));
    }
    let norm = delta.frobenius_norm();
    if norm <= clip {
        return Ok(delta.clone());
    }
    let clipped = delta.scale(clip / norm);
    // Rounding in the scale can overshoot by an ulp or two.
    let after = clipped.frobenius_norm();
    if after > clip {
        return Ok(clipped.scale(clip / after * (1.0 - f64::EPSILON)));
    }
    Ok(clipped)
}

/// Per-entry standard deviation `σ·C/√K`.
pub fn noise_std(spec: &PrivacySpec) -> f64 {
    spec.sigma * spec.clip / (spec.clients as f64).sqrt()
}

/// `N(0, σ²C²/K)` noise matrix.
pub fn mechanism_noise(rows: usize, cols: usize, spec: &PrivacySpec, rng: &mut RngState) -> Result<Matrix> {
    if !spec.enabled {
        return Err(Error::PrivacyDisabled);
    }
    sample_gaussian(rows, cols, noise_std(spec), rng)
}
