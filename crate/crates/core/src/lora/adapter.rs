use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, Matrix, RngState};

/// Default standard deviation of the Gaussian `A` initialization.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// Low-rank update `ΔW = (alpha / r) · B A` for an `m x n` base weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `m x r`, zero at initialization.
    pub b: Matrix,
    /// `r x n`, Gaussian at initialization.
    pub a: Matrix,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Zero `B`, Gaussian `A`, so the initial update is exactly zero.
    pub fn init(m: usize, n: usize, r: usize, alpha: f64, init_std: f64, rng: &mut RngState) -> Result<Self> {
        if r == 0 || r > m.min(n) {
            return Err(Error::InvalidArgument(format!(
                "rank {r} outside [1, min({m}, {n})]"
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
        }
        if !(init_std > 0.0) {
            return Err(Error::InvalidArgument(format!("init_std must be > 0, got {init_std}")));
        }
        Ok(Self {
            b: Matrix::zeros(m, r),
            a: sample_gaussian(r, n, init_std, rng)?,
            alpha,
        })
    }

    pub fn from_factors(b: Matrix, a: Matrix, alpha: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::shape(
                "adapter",
                format!("B is {}x{}, A is {}x{}", b.rows(), b.cols(), a.rows(), a.cols()),
            ));
        }
        Ok(Self { b, a, alpha })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    /// `alpha / r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn effective_update(&self) -> Matrix {
        self.b
            .matmul(&self.a)
            .expect("adapter factors are conformable")
            .scale(self.scale())
    }

    pub fn to_checkpoint(&self) -> AdapterCheckpoint {
        AdapterCheckpoint {
            m: self.out_dim(),
            n: self.in_dim(),
            r: self.rank(),
            alpha: self.alpha,
            a: self.a.as_slice().to_vec(),
            b: self.b.as_slice().to_vec(),
        }
    }

    pub fn from_checkpoint(c: &AdapterCheckpoint) -> Result<Self> {
        let a = Matrix::from_vec(c.r, c.n, c.a.clone())?;
        let b = Matrix::from_vec(c.m, c.r, c.b.clone())?;
        Self::from_factors(b, a, c.alpha)
    }
}

/// JSON checkpoint of one adapter; `a` and `b` are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub alpha: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}
