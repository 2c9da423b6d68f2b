use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lora::model::{BaseModel, LoraModel, TrainableSelector};
use crate::numerics::{Matrix, RngState};

/// Gradient for one adapter; `None` marks a frozen factor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorGrads {
    pub a: Option<Matrix>,
    pub b: Option<Matrix>,
}

/// Per-layer adapter gradients, indexed like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Option<FactorGrads>>,
}

/// Local SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

fn check_labels(y: &[usize], classes: usize, rows: usize) -> Result<()> {
    if y.is_empty() || rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if y.len() != rows {
        return Err(Error::shape("loss", format!("{rows} inputs but {} labels", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Mean cross-entropy and `dL/dlogits`.
fn softmax_xent(logits: &Matrix, y: &[usize]) -> (f64, Matrix) {
    let batch = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y[r]];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - lse).exp() / batch;
        }
        g[y[r]] -= 1.0 / batch;
    }
    (loss / batch, grad)
}

/// Loss plus `dL/dW_eff` and `dL/db` for every layer.
fn backprop(model: &LoraModel, x: &Matrix, y: &[usize]) -> Result<(f64, Vec<(Matrix, Vec<f64>)>)> {
    check_labels(y, model.classes(), x.rows())?;
    let (logits, cache) = model.forward_cached(x)?;
    let (loss, mut dz) = softmax_xent(&logits, y);
    let n = model.num_layers();
    let mut out = Vec::with_capacity(n);
    for l in (0..n).rev() {
        let dw = dz.t_matmul(&cache.inputs[l])?;
        let db: Vec<f64> = (0..dz.cols()).map(|c| (0..dz.rows()).map(|r| dz.get(r, c)).sum()).collect();
        out.push((dw, db));
        if l > 0 {
            let dh = dz.matmul(&cache.weights[l])?;
            let pre = &cache.pre[l - 1];
            dz = Matrix::from_vec(
                dh.rows(),
                dh.cols(),
                dh.as_slice()
                    .iter()
                    .zip(pre.as_slice())
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect(),
            )?;
        }
    }
    out.reverse();
    Ok((loss, out))
}

/// Mean cross-entropy and gradients of the factors `selector` marks trainable.
pub fn loss_and_grads(model: &LoraModel, x: &Matrix, y: &[usize], selector: TrainableSelector) -> Result<(f64, Grads)> {
    let (loss, full) = backprop(model, x, y)?;
    let layers = full
        .into_iter()
        .enumerate()
        .map(|(l, (dw, _))| {
            model.adapter(l).map(|ad| {
                let s = ad.scale();
                FactorGrads {
                    b: selector
                        .trains_b()
                        .then(|| dw.matmul_t(&ad.a).expect("conformable").scale(s)),
                    a: selector
                        .trains_a()
                        .then(|| ad.b.t_matmul(&dw).expect("conformable").scale(s)),
                }
            })
        })
        .collect();
    Ok((loss, Grads { layers }))
}

/// Mean cross-entropy without gradients.
pub fn loss(model: &LoraModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    check_labels(y, model.classes(), x.rows())?;
    Ok(softmax_xent(&model.forward(x)?, y).0)
}

/// `factor -= lr * grad` for every gradient present. Frozen factors and the
/// base weights are untouched.
pub fn sgd_step(model: &mut LoraModel, grads: &Grads, lr: f64) -> Result<()> {
    if grads.layers.len() != model.num_layers() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} gradient layers for {} model layers", grads.layers.len(), model.num_layers()),
        ));
    }
    // Validate before touching anything so a failed step leaves the model intact.
    for (l, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        let ad = model
            .adapter(l)
            .ok_or_else(|| Error::shape("sgd_step", format!("gradient for unadapted layer {l}")))?;
        if g.a.as_ref().is_some_and(|ga| ga.shape() != ad.a.shape())
            || g.b.as_ref().is_some_and(|gb| gb.shape() != ad.b.shape())
        {
            return Err(Error::shape("sgd_step", format!("gradient shape mismatch at layer {l}")));
        }
    }
    for (l, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        let ad = model.adapter_mut(l).expect("validated");
        if let Some(ga) = &g.a {
            ad.a.axpy(-lr, ga)?;
        }
        if let Some(gb) = &g.b {
            ad.b.axpy(-lr, gb)?;
        }
    }
    Ok(())
}

/// Mini-batch SGD over `shard` for `cfg.epochs` epochs. Each epoch reshuffles
/// with `rng`; the trailing partial batch is kept.
pub fn local_train(
    model: &mut LoraModel,
    shard: &Dataset,
    selector: TrainableSelector,
    cfg: &LocalTrainConfig,
    rng: &mut RngState,
) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty shard".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = shard.x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| shard.y[i]).collect();
            let (_, grads) = loss_and_grads(model, &xb, &yb, selector)?;
            sgd_step(model, &grads, cfg.lr)?;
        }
    }
    for ad in model.adapters().iter().flatten() {
        if !ad.a.is_finite() || !ad.b.is_finite() {
            return Err(Error::NonFinite("local_train (learning rate too large?)"));
        }
    }
    Ok(())
}

/// Full-parameter SGD on the base network; used once to build the frozen
/// "pretrained" weights.
pub fn pretrain_base(base: BaseModel, data: &Dataset, cfg: &LocalTrainConfig, rng: &mut RngState) -> Result<BaseModel> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty pretraining split".into()));
    }
    let mut base = Arc::new(base);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = data.x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.y[i]).collect();
            let model = LoraModel::new(base.clone());
            let (_, grads) = backprop(&model, &xb, &yb)?;
            drop(model);
            let layers = Arc::get_mut(&mut base).expect("sole owner").layers_mut();
            for (layer, (dw, db)) in layers.iter_mut().zip(grads) {
                let (w, b) = layer.parts_mut();
                w.axpy(-cfg.lr, &dw)?;
                for (bv, g) in b.iter_mut().zip(db) {
                    *bv -= cfg.lr * g;
                }
            }
        }
    }
    Ok(Arc::try_unwrap(base).expect("sole owner"))
}
