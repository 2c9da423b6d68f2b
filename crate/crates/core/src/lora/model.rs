use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::{sample_gaussian, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    LinearSoftmax,
    TwoLayerMlp,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::LinearSoftmax => "linear-softmax",
            Architecture::TwoLayerMlp => "two-layer-mlp",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear-softmax" => Ok(Architecture::LinearSoftmax),
            "two-layer-mlp" => Ok(Architecture::TwoLayerMlp),
            other => Err(format!("unknown architecture `{other}` (linear-softmax | two-layer-mlp)")),
        }
    }
}

/// Which LoRA factors receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainableSelector {
    OnlyA,
    OnlyB,
    Both,
}

impl TrainableSelector {
    pub fn trains_a(self) -> bool {
        matches!(self, TrainableSelector::OnlyA | TrainableSelector::Both)
    }

    pub fn trains_b(self) -> bool {
        matches!(self, TrainableSelector::OnlyB | TrainableSelector::Both)
    }
}

/// Frozen weight `W0` (`out x in`) and bias of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseLayer {
    weight: Matrix,
    bias: Vec<f64>,
}

impl BaseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "base layer",
                format!("bias of length {} for {} outputs", bias.len(), weight.rows()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Frozen base network shared read-only by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub arch: Architecture,
    pub layers: Vec<BaseLayer>,
}

impl BaseModel {
    /// Random weights `N(0, 1/fan_in)` and zero biases; `hidden` is ignored
    /// for the linear architecture.
    pub fn random(arch: Architecture, input: usize, hidden: usize, classes: usize, rng: &mut RngState) -> Result<Self> {
        let dims: Vec<(usize, usize)> = match arch {
            Architecture::LinearSoftmax => vec![(classes, input)],
            Architecture::TwoLayerMlp => vec![(hidden, input), (classes, hidden)],
        };
        let layers = dims
            .into_iter()
            .map(|(out, inp)| {
                let w = sample_gaussian(out, inp, 1.0 / (inp as f64).sqrt(), rng)?;
                BaseLayer::new(w, vec![0.0; out])
            })
            .collect::<Result<_>>()?;
        Ok(Self { arch, layers })
    }

    /// All-zero weights and biases.
    pub fn zeros(arch: Architecture, input: usize, hidden: usize, classes: usize) -> Self {
        let dims: Vec<(usize, usize)> = match arch {
            Architecture::LinearSoftmax => vec![(classes, input)],
            Architecture::TwoLayerMlp => vec![(hidden, input), (classes, hidden)],
        };
        let layers = dims
            .into_iter()
            .map(|(out, inp)| BaseLayer {
                weight: Matrix::zeros(out, inp),
                bias: vec![0.0; out],
            })
            .collect();
        Self { arch, layers }
    }

    pub fn from_layers(arch: Architecture, layers: Vec<BaseLayer>) -> Result<Self> {
        let expected = match arch {
            Architecture::LinearSoftmax => 1,
            Architecture::TwoLayerMlp => 2,
        };
        if layers.len() != expected {
            return Err(Error::shape("base model", format!("{arch} needs {expected} layers, got {}", layers.len())));
        }
        for w in layers.windows(2) {
            if w[0].weight.rows() != w[1].weight.cols() {
                return Err(Error::shape("base model", "consecutive layers do not chain"));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().expect("non-empty").weight.rows()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [BaseLayer] {
        &mut self.layers
    }
}

impl BaseLayer {
    pub(crate) fn parts_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        (&mut self.weight, &mut self.bias)
    }
}

/// Frozen base plus optional per-layer adapters.
#[derive(Debug, Clone)]
pub struct LoraModel {
    base: Arc<BaseModel>,
    adapters: Vec<Option<LoraAdapter>>,
}

/// Intermediate values kept for backpropagation.
pub(crate) struct ForwardCache {
    /// Input to each layer.
    pub inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pub pre: Vec<Matrix>,
    /// Effective weight `W0 + ΔW` used per layer.
    pub weights: Vec<Matrix>,
}

impl LoraModel {
    pub fn new(base: Arc<BaseModel>) -> Self {
        let n = base.layers.len();
        Self {
            base,
            adapters: vec![None; n],
        }
    }

    /// Attaches freshly initialized adapters to the listed layers.
    pub fn with_adapters(
        base: Arc<BaseModel>,
        layers: &[usize],
        rank: usize,
        alpha: f64,
        init_std: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut model = Self::new(base);
        for &l in layers {
            let (m, n) = model
                .base
                .layers
                .get(l)
                .ok_or_else(|| Error::InvalidArgument(format!("no layer {l} to adapt")))?
                .weight
                .shape();
            model.adapters[l] = Some(LoraAdapter::init(m, n, rank, alpha, init_std, rng)?);
        }
        Ok(model)
    }

    pub fn base(&self) -> &Arc<BaseModel> {
        &self.base
    }

    pub fn arch(&self) -> Architecture {
        self.base.arch
    }

    pub fn num_layers(&self) -> usize {
        self.adapters.len()
    }

    pub fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.base.classes()
    }

    pub fn adapter(&self, layer: usize) -> Option<&LoraAdapter> {
        self.adapters.get(layer).and_then(Option::as_ref)
    }

    pub fn adapter_mut(&mut self, layer: usize) -> Option<&mut LoraAdapter> {
        self.adapters.get_mut(layer).and_then(Option::as_mut)
    }

    pub fn adapters(&self) -> &[Option<LoraAdapter>] {
        &self.adapters
    }

    /// Indices of layers that carry an adapter.
    pub fn adapted_layers(&self) -> Vec<usize> {
        (0..self.adapters.len()).filter(|&l| self.adapters[l].is_some()).collect()
    }

    /// Replaces an adapter, checking its shape against the frozen weight.
    pub fn set_adapter(&mut self, layer: usize, adapter: LoraAdapter) -> Result<()> {
        let shape = self
            .base
            .layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer {layer}")))?
            .weight
            .shape();
        if (adapter.out_dim(), adapter.in_dim()) != shape {
            return Err(Error::shape(
                "set_adapter",
                format!(
                    "adapter is {}x{}, layer {layer} is {}x{}",
                    adapter.out_dim(),
                    adapter.in_dim(),
                    shape.0,
                    shape.1
                ),
            ));
        }
        self.adapters[layer] = Some(adapter);
        Ok(())
    }

    fn effective_weight(&self, layer: usize) -> Matrix {
        let w0 = &self.base.layers[layer].weight;
        match &self.adapters[layer] {
            Some(ad) => w0.add(&ad.effective_update()).expect("adapter shape checked"),
            None => w0.clone(),
        }
    }

    /// Same function with every adapter folded into its base weight.
    pub fn merged(&self) -> LoraModel {
        let layers = (0..self.num_layers())
            .map(|l| BaseLayer {
                weight: self.effective_weight(l),
                bias: self.base.layers[l].bias.clone(),
            })
            .collect();
        LoraModel::new(Arc::new(BaseModel {
            arch: self.base.arch,
            layers,
        }))
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("input has {} features, model expects {}", x.cols(), self.input_dim()),
            ));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.num_layers()),
            pre: Vec::with_capacity(self.num_layers()),
            weights: Vec::with_capacity(self.num_layers()),
        };
        let mut h = x.clone();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let w = self.effective_weight(l);
            let mut z = h.matmul_t(&w)?;
            let bias = &self.base.layers[l].bias;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                    *v += b;
                }
            }
            let next = if l < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            cache.inputs.push(h);
            cache.pre.push(z);
            cache.weights.push(w);
            h = next;
        }
        Ok((h, cache))
    }

    /// Logits, `batch x classes`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Arg-max class per row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok((0..logits.rows())
            .map(|r| {
                logits
                    .row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_base() -> Arc<BaseModel> {
        let w = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]).unwrap();
        Arc::new(BaseModel::from_layers(Architecture::LinearSoftmax, vec![BaseLayer::new(w, vec![0.1, -0.2]).unwrap()]).unwrap())
    }

    #[test]
    fn hand_logits() {
        let model = LoraModel::new(tiny_base());
        let x = Matrix::from_rows(&[[1.0, 3.0]]).unwrap();
        // [1*1 + 3*2 + 0.1, 1*0.5 + 3*(-1) - 0.2]
        let expected = Matrix::from_rows(&[[7.1, -2.7]]).unwrap();
        assert!(model.forward(&x).unwrap().sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn fresh_adapters_match_base() {
        let mut rng = RngState::new(4);
        let base = Arc::new(BaseModel::random(Architecture::TwoLayerMlp, 5, 7, 3, &mut rng).unwrap());
        let plain = LoraModel::new(base.clone());
        let adapted = LoraModel::with_adapters(base, &[0, 1], 2, 8.0, 0.02, &mut rng).unwrap();
        let x = sample_gaussian(6, 5, 1.0, &mut rng).unwrap();
        let diff = plain.forward(&x).unwrap().sub(&adapted.forward(&x).unwrap()).unwrap();
        assert!(diff.max_abs() <= 1e-12);
    }

    #[test]
    fn row_permutation_commutes() {
        let mut rng = RngState::new(8);
        let base = Arc::new(BaseModel::random(Architecture::TwoLayerMlp, 4, 6, 3, &mut rng).unwrap());
        let mut model = LoraModel::with_adapters(base, &[0], 2, 2.0, 0.3, &mut rng).unwrap();
        model.adapter_mut(0).unwrap().b = sample_gaussian(6, 2, 0.3, &mut rng).unwrap();
        let x = sample_gaussian(5, 4, 1.0, &mut rng).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let a = model.forward(&x.select_rows(&perm)).unwrap();
        let b = model.forward(&x).unwrap().select_rows(&perm);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn wrong_input_width() {
        let model = LoraModel::new(tiny_base());
        assert!(model.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn merged_model_agrees() {
        let mut rng = RngState::new(12);
        let base = Arc::new(BaseModel::random(Architecture::TwoLayerMlp, 6, 5, 4, &mut rng).unwrap());
        let mut model = LoraModel::with_adapters(base, &[0, 1], 2, 4.0, 0.5, &mut rng).unwrap();
        for l in 0..2 {
            let (m, r) = model.adapter(l).unwrap().b.shape();
            model.adapter_mut(l).unwrap().b = sample_gaussian(m, r, 0.5, &mut rng).unwrap();
        }
        let x = sample_gaussian(8, 6, 1.0, &mut rng).unwrap();
        let diff = model.forward(&x).unwrap().sub(&model.merged().forward(&x).unwrap()).unwrap();
        assert!(diff.max_abs() <= 1e-10);
    }

    #[test]
    fn set_adapter_checks_shape() {
        let mut model = LoraModel::new(tiny_base());
        let bad = LoraAdapter::init(3, 2, 1, 1.0, 0.1, &mut RngState::new(0)).unwrap();
        assert!(model.set_adapter(0, bad).is_err());
    }
}
