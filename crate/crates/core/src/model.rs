//! Layered feedforward models and their file format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::budget::Norm;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative at a pre-activation value (0 at the relu kink).
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Global Lipschitz constant of the elementwise map under `ℓp`.
    ///
    /// Every activation in this table is 1-Lipschitz coordinatewise, which
    /// gives 1 for any `ℓp`.
    pub fn lipschitz(self, _p: Norm) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::InvalidModel(format!(
                "bias has {} entries for a {}-row weight matrix",
                bias.len(),
                weights.rows()
            )));
        }
        if !weights.all_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidModel("non-finite weight or bias".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (v, b) in z.iter_mut().zip(&self.bias) {
            *v += b;
        }
        z
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.affine(x);
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        z
    }
}

/// A composition of affine layers with elementwise activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct LayeredModel {
    input_dim: usize,
    layers: Vec<Layer>,
    declared_lipschitz: BTreeMap<Norm, f64>,
}

impl LayeredModel {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidModel("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return Err(Error::InvalidModel(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    layer.in_dim()
                )));
            }
            if layer.out_dim() == 0 {
                return Err(Error::InvalidModel(format!("layer {i} has no outputs")));
            }
            width = layer.out_dim();
        }
        Ok(Self {
            input_dim,
            layers,
            declared_lipschitz: BTreeMap::new(),
        })
    }

    /// Attaches an externally certified Lipschitz constant for norm `p`,
    /// e.g. `1` for a network built to be 1-Lipschitz. It is trusted as-is.
    pub fn with_declared_lipschitz(mut self, p: Norm, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidModel(format!(
                "declared Lipschitz constant must be positive and finite, got {value}"
            )));
        }
        if p == Norm::Inf {
            return Err(Error::UnsupportedNorm(p));
        }
        self.declared_lipschitz.insert(p, value);
        Ok(self)
    }

    pub fn declared_lipschitz(&self, p: Norm) -> Option<f64> {
        self.declared_lipschitz.get(&p).copied()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Un-normalized logits `C(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        Ok(h)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    input_dim: usize,
    layers: Vec<LayerRepr>,
    #[serde(default)]
    declared_lipschitz: BTreeMap<String, f64>,
}

impl From<LayeredModel> for ModelRepr {
    fn from(m: LayeredModel) -> Self {
        Self {
            input_dim: m.input_dim,
            layers: m
                .layers
                .into_iter()
                .map(|l| LayerRepr {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias,
                    activation: l.activation,
                })
                .collect(),
            declared_lipschitz: m
                .declared_lipschitz
                .into_iter()
                .map(|(p, v)| (p.to_string(), v))
                .collect(),
        }
    }
}

impl TryFrom<ModelRepr> for LayeredModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let layers = r
            .layers
            .into_iter()
            .map(|l| {
                let w = Matrix::from_row_major(l.rows, l.cols, l.weights)?;
                Layer::new(w, l.bias, l.activation)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = LayeredModel::new(r.input_dim, layers)?;
        for (key, value) in r.declared_lipschitz {
            let p: Norm = key.parse()?;
            model = model.with_declared_lipschitz(p, value)?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: Matrix, b: Vec<f64>, act: Activation) -> LayeredModel {
        let n = w.cols();
        LayeredModel::new(n, vec![Layer::new(w, b, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_forward() {
        let m = single(Matrix::identity(3), vec![0.0; 3], Activation::Identity);
        assert_eq!(m.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relu_forward_and_predict() {
        let m = single(Matrix::diag(&[2.0, 3.0]), vec![1.0, 0.0], Activation::Relu);
        assert_eq!(m.forward(&[1.0, -1.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(m.predict(&[1.0, -1.0]).unwrap(), 0);
    }

    #[test]
    fn zero_weights_give_relu_of_bias() {
        let m = single(Matrix::zeros(3, 2), vec![-1.0, 0.5, 2.0], Activation::Relu);
        assert_eq!(m.forward(&[7.0, -3.0]).unwrap(), vec![0.0, 0.5, 2.0]);
    }

    #[test]
    fn argmax_ties() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn dimension_errors() {
        let m = single(Matrix::identity(2), vec![0.0; 2], Activation::Identity);
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        let l1 = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let l2 = Layer::new(Matrix::zeros(1, 4), vec![0.0], Activation::Identity).unwrap();
        assert!(LayeredModel::new(2, vec![l1, l2]).is_err());
    }

    #[test]
    fn json_format() {
        let text = r#"{
            "input_dim": 2,
            "layers": [
                {"rows": 2, "cols": 2, "weights": [1, -2, 3, 4], "bias": [0, 1], "activation": "relu"},
                {"rows": 1, "cols": 2, "weights": [1, 1], "bias": [0], "activation": "identity"}
            ],
            "declared_lipschitz": {"2": 1.0}
        }"#;
        let m: LayeredModel = serde_json::from_str(text).unwrap();
        assert_eq!(m.output_dim(), 1);
        assert_eq!(m.declared_lipschitz(Norm::L2), Some(1.0));
        assert_eq!(m.declared_lipschitz(Norm::L1), None);
        assert_eq!(m.layers()[0].weights.get(1, 0), 3.0);
        let back: LayeredModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);

        let broken = text.replace(r#""cols": 2, "weights": [1, 1]"#, r#""cols": 3, "weights": [1, 1, 1]"#);
        assert!(serde_json::from_str::<LayeredModel>(&broken).is_err());
    }
}
