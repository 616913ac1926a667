use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptKind::Sgd),
            "adam" => Ok(OptKind::Adam),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

/// Optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moments: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptKind::Adam, learning_rate)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Leaves `net` untouched on error.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != net.layers().len()
            || grads
                .layers
                .iter()
                .zip(net.layers())
                .any(|((w, b), l)| w.raw_dim() != l.weights.raw_dim() || b.len() != l.bias.len())
        {
            return Err(NnError::ShapeMismatch(
                "gradients do not match parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptKind::Sgd => {
                for (layer, (gw, gb)) in net.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-lr, gw);
                    layer.bias.scaled_add(-lr, gb);
                }
            }
            OptKind::Adam => {
                if self.moments.is_empty() {
                    let zeros = || {
                        grads
                            .layers
                            .iter()
                            .map(|(w, b)| (Array2::zeros(w.raw_dim()), Array1::zeros(b.len())))
                            .collect::<Vec<_>>()
                    };
                    self.moments = zeros();
                    self.second = zeros();
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = self.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (i, layer) in net.layers_mut().iter_mut().enumerate() {
                    let (gw, gb) = &grads.layers[i];
                    let (mw, mb) = &mut self.moments[i];
                    let (vw, vb) = &mut self.second[i];
                    Zip::from(&mut layer.weights)
                        .and(gw)
                        .and(mw)
                        .and(vw)
                        .for_each(|p, &g, m, v| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        });
                    Zip::from(&mut layer.bias)
                        .and(gb)
                        .and(mb)
                        .and(vb)
                        .for_each(|p, &g, m, v| {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *v = b2 * *v + (1.0 - b2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        });
                }
            }
        }
        Ok(())
    }
}
