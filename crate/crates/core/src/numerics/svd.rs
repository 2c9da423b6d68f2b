//! One-sided (Hestenes) Jacobi SVD and the SVD-based pseudo-inverse.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Off-diagonal threshold, relative to `||M||_F`.
const OFF_DIAG_REL: f64 = 1e-12;

/// Thin SVD `M = U diag(S) Vᵀ` with `k = min(m, n)` columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_vec(
            self.u.rows(),
            self.u.cols(),
            (0..self.u.rows())
                .flat_map(|r| (0..self.u.cols()).map(move |c| (r, c)))
                .map(|(r, c)| self.u.get(r, c) * self.s[c])
                .collect(),
        )
        .expect("same shape as U");
        us.matmul_t(&self.v).expect("conformable factors")
    }
}

/// Computes the thin SVD of `m`.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    svd_tall(m)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// m.rows() >= m.cols()
fn svd_tall(m: &Matrix) -> Result<Svd> {
    let (rows, n) = m.shape();
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| (0..rows).map(|r| m.get(r, c)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let norm = m.frobenius_norm();
    let floor = (OFF_DIAG_REL * norm).powi(2);
    let rel_tol = f64::EPSILON * rows as f64;

    let mut converged = n < 2 || norm == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNotConverged { sweeps: MAX_SWEEPS });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= rel_tol * (alpha * beta).sqrt() || alpha * beta <= floor * floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        converged = !rotated;
    }

    let mut sing: Vec<(f64, usize)> = w.iter().enumerate().map(|(i, col)| (dot(col, col).sqrt(), i)).collect();
    // Stable sort keeps ties in column order, so output is deterministic.
    sing.sort_by(|a, b| b.0.total_cmp(&a.0));
    let smax = sing.first().map_or(0.0, |s| s.0);
    let negligible = smax * f64::EPSILON * rows.max(n) as f64;

    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_out = Matrix::zeros(n, n);
    for (j, &(sv, i)) in sing.iter().enumerate() {
        if sv > negligible && sv > 0.0 {
            u_cols.push(Some(w[i].iter().map(|x| x / sv).collect()));
            s.push(sv);
        } else {
            u_cols.push(None);
            s.push(0.0);
        }
        for r in 0..n {
            v_out.set(r, j, v[i][r]);
        }
    }
    let u_cols = complete_basis(u_cols, rows);
    let mut u = Matrix::zeros(rows, n);
    for (j, col) in u_cols.iter().enumerate() {
        for r in 0..rows {
            u.set(r, j, col[r]);
        }
    }
    Ok(Svd { u, s, v: v_out })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills missing columns with unit vectors orthogonal to all others, drawn
/// from the standard basis by Gram-Schmidt with one re-orthogonalization pass.
fn complete_basis(mut cols: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    let mut candidate = 0;
    for j in 0..cols.len() {
        if cols[j].is_some() {
            continue;
        }
        loop {
            assert!(candidate < dim, "basis completion ran out of candidates");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().flatten() {
                    let proj = dot(&e, other);
                    for (x, o) in e.iter_mut().zip(other) {
                        *x -= proj * o;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > 1e-6 {
                cols[j] = Some(e.into_iter().map(|x| x / nrm).collect());
                break;
            }
        }
    }
    cols.into_iter().map(|c| c.expect("filled")).collect()
}

/// Default rank cutoff: `max(m, n) * eps * s_max`.
pub fn default_pinv_tol(m: &Matrix, s: &[f64]) -> f64 {
    let smax = s.first().copied().unwrap_or(0.0);
    m.rows().max(m.cols()) as f64 * f64::EPSILON * smax
}

/// Moore-Penrose pseudo-inverse; singular values `<= tol` are treated as zero.
/// `tol = None` uses [`default_pinv_tol`].
pub fn pinv(m: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    if let Some(t) = tol {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("pinv tolerance must be >= 0, got {t}")));
        }
    }
    let d = svd(m)?;
    let tol = tol.unwrap_or_else(|| default_pinv_tol(m, &d.s));
    let (rows, cols) = m.shape();
    let k = d.s.len();
    let mut out = Matrix::zeros(cols, rows);
    for j in 0..k {
        let sv = d.s[j];
        if sv <= tol || sv == 0.0 {
            continue;
        }
        let inv = 1.0 / sv;
        for r in 0..cols {
            let vr = d.v.get(r, j) * inv;
            if vr == 0.0 {
                continue;
            }
            let out_row = out.row_mut(r);
            for (c, o) in out_row.iter_mut().enumerate() {
                *o += vr * d.u.get(c, j);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = RngState::new(seed);
        crate::numerics::sample_gaussian(rows, cols, 1.0, &mut rng).unwrap()
    }

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    fn orthonormal_err(q: &Matrix) -> f64 {
        q.t_matmul(q).unwrap().sub(&Matrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn diagonal_input() {
        let d = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 1.0]);
        let d = svd(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        let d = svd(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(d.s, vec![0.0, 0.0]);
        assert!(orthonormal_err(&d.u) < 1e-12);
        assert!(orthonormal_err(&d.v) < 1e-12);
    }

    #[test]
    fn reconstructs_random_shapes() {
        for (i, &(r, c)) in [(4, 3), (3, 4), (1, 5), (6, 1), (7, 7), (16, 4)].iter().enumerate() {
            let m = random(r, c, 10 + i as u64);
            let d = svd(&m).unwrap();
            assert_eq!(d.s.len(), r.min(c));
            assert!(rel(&d.reconstruct(), &m) < 1e-10);
            assert!(orthonormal_err(&d.u) < 1e-10);
            assert!(orthonormal_err(&d.v) < 1e-10);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
            assert!(d.s.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_factors_stay_orthonormal() {
        let a = random(5, 2, 3);
        let b = random(2, 4, 4);
        let m = a.matmul(&b).unwrap();
        let d = svd(&m).unwrap();
        assert!(d.s[2] < 1e-12 * d.s[0]);
        assert!(rel(&d.reconstruct(), &m) < 1e-10);
        assert!(orthonormal_err(&d.u) < 1e-10);
        assert!(orthonormal_err(&d.v) < 1e-10);
    }

    #[test]
    fn deterministic_singular_values() {
        let m = random(6, 5, 99);
        let a = svd(&m).unwrap().s;
        let b = svd(&m).unwrap().s;
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pinv_examples() {
        assert!(rel(&pinv(&Matrix::identity(3), None).unwrap(), &Matrix::identity(3)) < 1e-15);
        assert_eq!(pinv(&Matrix::zeros(2, 3), None).unwrap(), Matrix::zeros(3, 2));
        // Normal equations by hand: [1 1]ᵀ ([1 1][1 1]ᵀ)⁻¹ = [0.5 0.5]ᵀ.
        let p = pinv(&Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), None).unwrap();
        let expected = Matrix::from_rows(&[[0.5], [0.5]]).unwrap();
        assert!(p.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn penrose_identities() {
        for seed in 0..5 {
            let m = random(5, 3, seed).matmul(&random(3, 6, seed + 50)).unwrap();
            let p = pinv(&m, None).unwrap();
            let mpm = m.matmul(&p).unwrap().matmul(&m).unwrap();
            let pmp = p.matmul(&m).unwrap().matmul(&p).unwrap();
            assert!(rel(&mpm, &m) < 1e-8);
            assert!(rel(&pmp, &p) < 1e-8);
            let mp = m.matmul(&p).unwrap();
            let pm = p.matmul(&m).unwrap();
            assert!(rel(&mp.transpose(), &mp) < 1e-8);
            assert!(rel(&pm.transpose(), &pm) < 1e-8);
        }
    }

    #[test]
    fn negative_tolerance_rejected() {
        assert!(pinv(&Matrix::identity(2), Some(-1.0)).is_err());
    }
}
