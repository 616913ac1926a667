use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            2 => Activation::Sigmoid,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

/// Affine map followed by an elementwise activation. `weights` is
/// `in × out`, so a batch `X` (rows are samples) maps to `act(X·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer inputs and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty net")
    }
}

/// Gradients in the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| *v == 0.0))
    }
}

const PREDICT_CHUNK: usize = 256;

impl DenseNet {
    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    /// `sizes` has one more entry than `activations`.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut crate::rng::Rng) -> Self {
        assert_eq!(
            sizes.len(),
            activations.len() + 1,
            "one activation per layer"
        );
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.random_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        DenseNet { layers }
    }

    /// Square single layer with `W = I`, `b = 0`.
    pub fn identity(dim: usize, activation: Activation) -> Self {
        DenseNet {
            layers: vec![Layer {
                weights: Array2::eye(dim),
                bias: Array1::zeros(dim),
                activation,
            }],
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ShapeMismatch("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {i}: bias length {} != {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {i} outputs {} but layer {} expects {}",
                        l.out_dim(),
                        i + 1,
                        next.in_dim()
                    )));
                }
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.in_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights);
        z += &layer.bias;
        let act = layer.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Batch forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Cache), NnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let out = Self::layer_forward(layer, &current.view());
            inputs.push(current);
            current = out;
            outputs.push(current.clone());
        }
        Ok((current, Cache { inputs, outputs }))
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Result<(Vec<f64>, Cache), NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
        let (y, cache) = self.forward(view)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            current = Self::layer_forward(layer, &current.view());
        }
        Ok(current)
    }

    /// Forward pass over row chunks, scheduled by `exec`.
    pub fn predict_rows(&self, x: ArrayView2<f64>, exec: Exec) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let n = x.nrows();
        if n <= PREDICT_CHUNK || !exec.is_parallel() {
            return self.predict(x);
        }
        let chunks = n.div_ceil(PREDICT_CHUNK);
        let parts = exec.map_range(chunks, |c| {
            let lo = c * PREDICT_CHUNK;
            let hi = (lo + PREDICT_CHUNK).min(n);
            self.predict(x.slice(ndarray::s![lo..hi, ..]))
        });
        let parts: Vec<Array2<f64>> = parts.into_iter().collect::<Result<_, _>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| NnError::ShapeMismatch(e.to_string()))
    }

    /// Gradients of a scalar loss given `dL/dy` for every row of the batch
    /// that produced `cache`. Returns parameter gradients and `dL/dx`.
    pub fn backward(
        &self,
        cache: &Cache,
        dy: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.outputs.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch(
                "cache does not match network depth".into(),
            ));
        }
        let out = cache.output();
        if dy.raw_dim() != out.raw_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                dy.shape(),
                out.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            let mut dz = upstream;
            dz.zip_mut_with(&cache.outputs[l], |g, &y| {
                *g *= act.derivative_from_output(y)
            });
            let dw = cache.inputs[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weights.t());
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }

    /// Flattened parameters, layer by layer: weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
    }
}

impl Gradients {
    /// Same flattening order as [`DenseNet::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}
