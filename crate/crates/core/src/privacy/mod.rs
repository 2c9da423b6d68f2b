//! Client-level differential privacy: clipping, the Gaussian mechanism, the
//! pseudo-inverse noise regulators and an RDP accountant.

mod accountant;
mod mechanism;
mod regulator;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use accountant::{calibrate_sigma, epsilon_of, rdp_orders, SIGMA_BOUNDS, SIGMA_REL_TOL};
pub use mechanism::{clip_update, mechanism_noise, noise_std};
pub use regulator::{noise_decomposition, regulate_for_a, regulate_for_b, NoiseTerms};

/// Gaussian-mechanism parameters for one federation.
///
/// `rounds` counts noisy releases per client (one per clipped factor matrix),
/// which is what the accountant composes over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub clip: f64,
    pub sigma: f64,
    pub clients: usize,
    pub rounds: usize,
}

impl PrivacySpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            epsilon: f64::INFINITY,
            delta: 0.0,
            clip: f64::INFINITY,
            sigma: 0.0,
            clients: 1,
            rounds: 0,
        }
    }

    /// Calibrates sigma so `releases` compositions stay within `epsilon`.
    /// `delta = None` defaults to `1 / clients`.
    pub fn calibrated(epsilon: f64, delta: Option<f64>, clip: f64, clients: usize, releases: usize) -> Result<Self> {
        if clients == 0 {
            return Err(Error::InvalidArgument("client count must be >= 1".into()));
        }
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(Error::InvalidArgument(format!("clip must be finite and > 0, got {clip}")));
        }
        let delta = delta.unwrap_or(1.0 / clients as f64);
        // K = 1 makes the default delta 1, which is no guarantee at all.
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        let sigma = calibrate_sigma(epsilon, delta, releases, clients)?;
        Ok(Self {
            enabled: true,
            epsilon,
            delta,
            clip,
            sigma,
            clients,
            rounds: releases,
        })
    }

    /// Epsilon spent after `releases` compositions (0 when disabled or none yet).
    pub fn epsilon_spent(&self, releases: usize) -> f64 {
        if !self.enabled || releases == 0 || self.sigma <= 0.0 {
            return 0.0;
        }
        epsilon_of(self.sigma, self.delta, releases, self.clients).unwrap_or(f64::INFINITY)
    }
}

/// Which factor received noise in a half-round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePhase {
    B,
    A,
    Both,
}

/// Noise norms for one layer in one half-round, averaged over clients.
///
/// `norm_base` is `||ξ^W||_F` for regulated noise and the raw factor-noise
/// norm `sqrt(||ξ^B||² + ||ξ^A||²)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub round: usize,
    pub layer: usize,
    pub phase: NoisePhase,
    pub norm_linear_b: f64,
    pub norm_linear_a: f64,
    pub norm_base: f64,
    pub norm_quadratic: f64,
}
