//! Pseudo-inverse noise regulators.
//!
//! Given full-size noise `ξ^W` (`m x n`) and the frozen factor of the current
//! half-round, each regulator returns the factor-space noise whose image under
//! the LoRA product is the least-squares best match to `ξ^W`:
//!
//! * `B` side: `argmin ||ξ^B A − ξ^W||_F = ξ^W · pinv(A)`, image `ξ^W · P_row(A)`
//! * `A` side: `argmin ||B ξ^A − ξ^W||_F = pinv(B) · ξ^W`, image `P_col(B) · ξ^W`
//!
//! The image norm is therefore bounded by `||ξ^W||_F` regardless of how large
//! the frozen factor has grown. Rank-deficient factors (e.g. `B = 0` before the
//! first update) get the minimum-norm solution.

use crate::error::{Error, Result};
use crate::numerics::{pinv, Matrix};

/// `ξ^W · pinv(A)`, shape `m x r`.
pub fn regulate_for_b(xi_w: &Matrix, a: &Matrix) -> Result<Matrix> {
    if xi_w.cols() != a.cols() {
        return Err(Error::shape(
            "regulate_for_b",
            format!("noise is {}x{}, A is {}x{}", xi_w.rows(), xi_w.cols(), a.rows(), a.cols()),
        ));
    }
    xi_w.matmul(&pinv(a, None)?)
}

/// `pinv(B) · ξ^W`, shape `r x n`.
pub fn regulate_for_a(xi_w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if xi_w.rows() != b.rows() {
        return Err(Error::shape(
            "regulate_for_a",
            format!("noise is {}x{}, B is {}x{}", xi_w.rows(), xi_w.cols(), b.rows(), b.cols()),
        ));
    }
    pinv(b, None)?.matmul(xi_w)
}

/// Split of `s·(B + ξ^B)(A + ξ^A) − s·BA`, with `s = alpha / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTerms {
    /// `s · ξ^B A`
    pub linear_b: Matrix,
    /// `s · B ξ^A`
    pub linear_a: Matrix,
    /// `s · ξ^B ξ^A`
    pub quadratic: Matrix,
}

pub fn noise_decomposition(b: &Matrix, a: &Matrix, xi_b: &Matrix, xi_a: &Matrix, alpha: f64, rank: usize) -> Result<NoiseTerms> {
    if b.shape() != xi_b.shape() || a.shape() != xi_a.shape() {
        return Err(Error::shape("noise_decomposition", "noise shapes differ from their factors"));
    }
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    let s = alpha / rank as f64;
    Ok(NoiseTerms {
        linear_b: xi_b.matmul(a)?.scale(s),
        linear_a: b.matmul(xi_a)?.scale(s),
        quadratic: xi_b.matmul(xi_a)?.scale(s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, RngState};

    #[test]
    fn zero_noise_gives_zero() {
        let a = sample_gaussian(2, 5, 1.0, &mut RngState::new(0)).unwrap();
        assert_eq!(regulate_for_b(&Matrix::zeros(3, 5), &a).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn identity_factors_pass_noise_through() {
        let xi = sample_gaussian(3, 4, 1.0, &mut RngState::new(1)).unwrap();
        let xb = regulate_for_b(&xi, &Matrix::identity(4)).unwrap();
        assert!(xb.sub(&xi).unwrap().max_abs() < 1e-14);
        let b = sample_gaussian(3, 4, 1.0, &mut RngState::new(2)).unwrap();
        let added = b.add(&xb).unwrap().matmul(&Matrix::identity(4)).unwrap().sub(&b).unwrap();
        assert!(added.sub(&xi).unwrap().max_abs() < 1e-14);
        let xa = regulate_for_a(&xi, &Matrix::identity(3)).unwrap();
        assert!(xa.sub(&xi).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn hand_solved_b_side() {
        // Normal equations: ξ^B (A Aᵀ) = ξ^W Aᵀ  ->  ξ^B · 2 = 1.
        let a = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let xi = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let xb = regulate_for_b(&xi, &a).unwrap();
        assert!((xb.get(0, 0) - 0.5).abs() < 1e-15);
        let img = xb.matmul(&a).unwrap();
        assert!(img.sub(&Matrix::from_rows(&[[0.5, 0.5]]).unwrap()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn hand_solved_a_side() {
        // (BᵀB) ξ^A = Bᵀ ξ^W  ->  2 ξ^A = 2.
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let xi = Matrix::from_rows(&[[2.0], [0.0]]).unwrap();
        let xa = regulate_for_a(&xi, &b).unwrap();
        assert!((xa.get(0, 0) - 1.0).abs() < 1e-15);
        let img = b.matmul(&xa).unwrap();
        assert!(img.sub(&Matrix::from_rows(&[[1.0], [1.0]]).unwrap()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zero_b_gives_zero_noise() {
        let xi = sample_gaussian(4, 6, 1.0, &mut RngState::new(3)).unwrap();
        assert_eq!(regulate_for_a(&xi, &Matrix::zeros(4, 2)).unwrap(), Matrix::zeros(2, 6));
    }

    #[test]
    fn shape_errors() {
        assert!(regulate_for_b(&Matrix::zeros(2, 3), &Matrix::zeros(1, 4)).is_err());
        assert!(regulate_for_a(&Matrix::zeros(2, 3), &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn decomposition_identity() {
        let mut rng = RngState::new(8);
        let (m, n, r) = (5, 6, 3);
        let b = sample_gaussian(m, r, 1.0, &mut rng).unwrap();
        let a = sample_gaussian(r, n, 1.0, &mut rng).unwrap();
        let xb = sample_gaussian(m, r, 0.3, &mut rng).unwrap();
        let xa = sample_gaussian(r, n, 0.3, &mut rng).unwrap();
        let alpha = 6.0;
        let t = noise_decomposition(&b, &a, &xb, &xa, alpha, r).unwrap();
        let s = alpha / r as f64;
        let lhs = b.add(&xb).unwrap().matmul(&a.add(&xa).unwrap()).unwrap().scale(s);
        let rhs = b
            .matmul(&a)
            .unwrap()
            .scale(s)
            .add(&t.linear_a)
            .unwrap()
            .add(&t.linear_b)
            .unwrap()
            .add(&t.quadratic)
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn one_sided_injection() {
        let mut rng = RngState::new(9);
        let b = sample_gaussian(3, 2, 1.0, &mut rng).unwrap();
        let a = sample_gaussian(2, 4, 1.0, &mut rng).unwrap();
        let xb = sample_gaussian(3, 2, 1.0, &mut rng).unwrap();
        let t = noise_decomposition(&b, &a, &xb, &Matrix::zeros(2, 4), 2.0, 2).unwrap();
        assert_eq!(t.linear_a, Matrix::zeros(3, 4));
        assert_eq!(t.quadratic, Matrix::zeros(3, 4));
        assert!(t.linear_b.bit_eq(&xb.matmul(&a).unwrap()));
    }
}
