use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Gaussian class blobs: each class mean lies on a sphere of radius
/// `class_sep`, samples add unit-covariance noise. Labels are balanced to
/// within one and rows come out in shuffled order.
pub fn make_synthetic(classes: usize, d: usize, n: usize, class_sep: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if d < classes {
        return Err(Error::InvalidArgument(format!("dimension {d} smaller than class count {classes}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if !(class_sep >= 0.0) || !class_sep.is_finite() {
        return Err(Error::InvalidArgument(format!("class_sep must be finite and >= 0, got {class_sep}")));
    }
    let mut rng = RngState::new(seed);
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        means.push(v.into_iter().map(|x| x * class_sep / norm).collect::<Vec<_>>());
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(n * d);
    for &c in &labels {
        data.extend(means[c].iter().map(|mu| mu + rng.standard_normal()));
    }
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, classes, Split::Train)
}
