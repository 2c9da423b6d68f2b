//! Rényi-DP accounting for repeated Gaussian releases without subsampling.

use crate::error::{Error, Result};

/// Search bounds for [`calibrate_sigma`].
pub const SIGMA_BOUNDS: (f64, f64) = (1e-3, 1e6);
/// Relative width at which the sigma bisection stops.
pub const SIGMA_REL_TOL: f64 = 1e-4;

/// RDP orders 1.25, 1.5, ..., 512.
pub fn rdp_orders() -> impl Iterator<Item = f64> {
    (0..=2043).map(|k| 1.25 + 0.25 * k as f64)
}

fn check(delta: f64, releases: usize) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if releases == 0 {
        return Err(Error::InvalidArgument("need at least one release".into()));
    }
    Ok(())
}

/// `(epsilon, delta)` after `releases` compositions of the Gaussian mechanism
/// with noise multiplier `sigma`:
/// `min_a [ T·a / (2σ²) + ln(1/δ) / (a − 1) ]`.
///
/// `_clients` is accepted for signature symmetry; the per-client noise scale
/// `σC/√K` makes the averaged release a unit-sensitivity mechanism at `σ`.
pub fn epsilon_of(sigma: f64, delta: f64, releases: usize, _clients: usize) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be finite and > 0, got {sigma}")));
    }
    check(delta, releases)?;
    let t = releases as f64;
    let log_inv_delta = (1.0 / delta).ln();
    Ok(rdp_orders()
        .map(|a| t * a / (2.0 * sigma * sigma) + log_inv_delta / (a - 1.0))
        .fold(f64::INFINITY, f64::min))
}

/// Smallest sigma (to relative precision [`SIGMA_REL_TOL`]) whose
/// [`epsilon_of`] does not exceed `epsilon`. The returned value always
/// satisfies the budget.
pub fn calibrate_sigma(epsilon: f64, delta: f64, releases: usize, clients: usize) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    check(delta, releases)?;
    let (mut lo, mut hi) = SIGMA_BOUNDS;
    let eps = |s: f64| epsilon_of(s, delta, releases, clients);
    if eps(hi)? > epsilon {
        return Err(Error::Unattainable { epsilon, lo, hi });
    }
    if eps(lo)? <= epsilon {
        return Ok(lo);
    }
    // Invariant: eps(lo) > epsilon >= eps(hi).
    while hi / lo > 1.0 + SIGMA_REL_TOL {
        let mid = (lo * hi).sqrt();
        if eps(mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
