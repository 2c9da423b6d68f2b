use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Unweighted entrywise mean, summed in list order.
pub fn aggregate(matrices: &[Matrix]) -> Result<Matrix> {
    let (first, rest) = matrices
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate an empty list".into()))?;
    let mut sum = first.clone();
    for m in rest {
        sum.axpy(1.0, m)
            .map_err(|_| Error::shape("aggregate", format!("{:?} vs {:?}", first.shape(), m.shape())))?;
    }
    let k = matrices.len() as f64;
    Ok(sum.map(|v| v / k))
}

/// Aggregation deviation `O = |s·(mean(B)·mean(A) − mean(B_k A_k))|`
/// (entrywise absolute value, `s = alpha / r`) and its Frobenius norm.
///
/// Evaluated in the equivalent difference form
/// `1/K² Σ_j B_j Σ_k (A_k − A_j)` (or its mirror over `B` when every `B` is
/// bit-identical), so a shared factor yields exactly zero.
pub fn aggregation_deviation(bs: &[Matrix], as_: &[Matrix], alpha: f64, rank: usize) -> Result<(Matrix, f64)> {
    if bs.len() != as_.len() {
        return Err(Error::shape("aggregation_deviation", format!("{} B factors but {} A factors", bs.len(), as_.len())));
    }
    if bs.is_empty() {
        return Err(Error::InvalidArgument("aggregation_deviation needs at least one client".into()));
    }
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    for (b, a) in bs.iter().zip(as_) {
        if b.shape() != bs[0].shape() || a.shape() != as_[0].shape() || b.cols() != a.rows() {
            return Err(Error::shape(
                "aggregation_deviation",
                format!("B {:?} with A {:?} (first pair {:?}, {:?})", b.shape(), a.shape(), bs[0].shape(), as_[0].shape()),
            ));
        }
    }
    let k = bs.len();
    let (m, n) = (bs[0].rows(), as_[0].cols());
    let mut acc = Matrix::zeros(m, n);
    if bs.iter().all(|b| b.bit_eq(&bs[0])) && !as_.iter().all(|a| a.bit_eq(&as_[0])) {
        // Σ_k (Σ_j (B_j − B_k)) A_k
        for (bk, ak) in bs.iter().zip(as_) {
            let mut d = Matrix::zeros(bk.rows(), bk.cols());
            for bj in bs {
                d.axpy(1.0, &bj.sub(bk)?)?;
            }
            acc.axpy(1.0, &d.matmul(ak)?)?;
        }
    } else {
        for (bj, aj) in bs.iter().zip(as_) {
            let mut d = Matrix::zeros(aj.rows(), aj.cols());
            for ak in as_ {
                d.axpy(1.0, &ak.sub(aj)?)?;
            }
            acc.axpy(1.0, &bj.matmul(&d)?)?;
        }
    }
    let s = alpha / rank as f64 / (k * k) as f64;
    let o = acc.map(|v| (v * s).abs());
    let norm = o.frobenius_norm();
    Ok((o, norm))
}
