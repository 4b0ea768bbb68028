use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::linalg::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => invalid(format!("unknown activation tag {other}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// One dense layer: `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// A stack of dense layers with chained dimensions. Used for model weights,
/// gradients and every shape-congruent optimizer buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

pub type GradientSet = ParamSet;

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return dim_err(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.outputs()
                ));
            }
            if i > 0 && l.inputs() != layers[i - 1].outputs() {
                return dim_err(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.inputs(),
                    i - 1,
                    layers[i - 1].outputs()
                ));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero parameters for architecture `dims = [d0, d1, …, dL]`.
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        if let Some(first) = self.layers.first() {
            dims.push(first.inputs());
        }
        dims.extend(self.layers.iter().map(Layer::outputs));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape())
    }

    pub fn ensure_same_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            dim_err(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    /// Values in flatten order: layer by layer, weight row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn unflatten(values: &[f64], dims: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(dims);
        if values.len() != out.num_params() {
            return dim_err(format!(
                "{} values for an architecture with {} parameters",
                values.len(),
                out.num_params()
            ));
        }
        out.iter_mut().zip(values).for_each(|(d, s)| *d = *s);
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.iter_mut().for_each(|x| *x = f(*x));
        out
    }

    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let mut out = self.clone();
        out.iter_mut().zip(other.iter()).for_each(|(a, &b)| *a = f(*a, b));
        Ok(out)
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: f64, other: &ParamSet) -> Result<()> {
        self.ensure_same_shape(other)?;
        self.iter_mut().zip(other.iter()).for_each(|(a, &b)| *a += scale * b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }
}

/// Multi-layer perceptron parameters: the hidden layers use `activation`,
/// the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub params: ParamSet,
    pub activation: Activation,
}

impl ModelParams {
    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        Self {
            params: ParamSet::zeros(dims),
            activation,
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(dims: &[usize], activation: Activation, rng: &mut RngStream) -> Self {
        let mut model = Self::zeros(dims, activation);
        for layer in model.params.layers_mut() {
            let std = (2.0 / layer.inputs().max(1) as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = std * rng.standard_normal();
            }
        }
        model
    }

    pub fn dims(&self) -> Vec<usize> {
        self.params.dims()
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn layers(&self) -> &[Layer] {
        self.params.layers()
    }

    pub fn num_hidden(&self) -> usize {
        self.params.layers().len().saturating_sub(1)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let dims = self.dims();
        if dims.len() <= 2 {
            Vec::new()
        } else {
            dims[1..dims.len() - 1].to_vec()
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.flatten()
    }

    pub fn unflatten(values: &[f64], dims: &[usize], activation: Activation) -> Result<Self> {
        Ok(Self {
            params: ParamSet::unflatten(values, dims)?,
            activation,
        })
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.activation == other.activation && self.params.same_shape(&other.params)
    }

    pub fn ensure_same_architecture(&self, other: &ModelParams) -> Result<()> {
        if self.activation != other.activation {
            return dim_err(format!(
                "activation {} vs {}",
                self.activation.name(),
                other.activation.name()
            ));
        }
        self.params.ensure_same_shape(&other.params)
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_for_4_8_3() {
        let m = ModelParams::zeros(&[4, 8, 3], Activation::Relu);
        assert_eq!(m.num_params(), 67);
        assert_eq!(m.flatten(), vec![0.0; 67]);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = RngStream::new(9, 0);
        let m = ModelParams::init(&[5, 7, 6, 2], Activation::Relu, &mut rng);
        let flat = m.flatten();
        let back = ModelParams::unflatten(&flat, &m.dims(), m.activation).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            flat.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn flatten_order_is_layer_then_row_major() {
        let mut m = ModelParams::zeros(&[2, 2, 1], Activation::Relu);
        let mut v = 0.0;
        for x in m.params.iter_mut() {
            *x = v;
            v += 1.0;
        }
        let l0 = &m.layers()[0];
        assert_eq!(l0.weight.as_slice(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(l0.bias, vec![4.0, 5.0]);
        assert_eq!(m.layers()[1].weight.as_slice(), &[6.0, 7.0]);
        assert_eq!(m.layers()[1].bias, vec![8.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(ParamSet::unflatten(&[0.0; 10], &[4, 8, 3]).is_err());
    }

    #[test]
    fn broken_chain_rejected() {
        let layers = vec![Layer::zeros(3, 4), Layer::zeros(5, 2)];
        assert!(ParamSet::new(layers).is_err());
    }
}
