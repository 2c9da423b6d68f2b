use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Recorded in run metadata so outputs can be replayed.
pub const RNG_ALGORITHM: &str = "chacha8 (seed, stream) + box-muller";

/// Seeded, splittable random stream.
///
/// Backed by ChaCha8, whose 64-bit stream id gives independent child streams
/// for clients and the server without sharing state.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

/// Serializable snapshot of an [`RngState`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
    pub spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare: None,
        }
    }

    /// Independent child stream. Children of the same parent with different
    /// `id`s never overlap; the parent is not advanced.
    pub fn split(&self, id: u64) -> RngState {
        // Mix the parent's identity into the child seed so grandchildren differ too.
        let mixed = splitmix(self.seed ^ splitmix(self.stream.wrapping_add(0x9e37_79b9)));
        RngState::with_stream(mixed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos(),
            spare: self.spare,
        }
    }

    pub fn restore(s: &RngSnapshot) -> Self {
        let mut r = RngState::with_stream(s.seed, s.stream);
        r.inner.set_word_pos(s.word_pos);
        r.spare = s.spare;
        r
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Standard normal draw via Box-Muller; the second value of each pair is
    /// cached for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Access for `rand_distr` samplers.
    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Matrix of i.i.d. `N(0, std²)` entries, filled in row-major order.
pub fn sample_gaussian(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian std must be finite and >= 0, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_zeros() {
        let mut rng = RngState::new(1);
        assert_eq!(sample_gaussian(3, 2, 0.0, &mut rng).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = RngState::new(1);
        assert!(sample_gaussian(1, 1, -0.1, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_draws() {
        let a = sample_gaussian(2, 2, 1.0, &mut RngState::new(42)).unwrap();
        let b = sample_gaussian(2, 2, 1.0, &mut RngState::new(42)).unwrap();
        assert!(a.bit_eq(&b));
        let c = sample_gaussian(2, 2, 1.0, &mut RngState::new(43)).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn empirical_variance() {
        let mut rng = RngState::new(7);
        let m = sample_gaussian(1000, 1000, 0.5, &mut rng).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 0.25).abs() < 0.01, "variance {var}");
        assert!(mean.abs() < 0.005);
    }

    #[test]
    fn split_streams_differ_and_are_stable() {
        let root = RngState::new(5);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let mut a2 = root.split(0);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, a2.next_u64());
        let mut gc = a.split(0);
        assert_ne!(gc.next_u64(), root.split(0).split(1).next_u64());
    }

    #[test]
    fn snapshot_restores_position() {
        let mut r = RngState::new(9);
        r.standard_normal();
        let snap = r.snapshot();
        let mut restored = RngState::restore(&snap);
        for _ in 0..5 {
            assert_eq!(r.standard_normal().to_bits(), restored.standard_normal().to_bits());
        }
    }
}
