use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::DEFAULT_LEAKY_SLOPE;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One affine layer `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Gaussian weights with variance `2 / (in + out)`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (input + output) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..input * output).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(input, output, data).expect("sized"),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A perceptron of one or more layers. LeakyReLU is applied between layers,
/// and after the last one when `output_activation` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub slope: f64,
    pub output_activation: bool,
}

impl MlpParams {
    /// `dims = [in, hidden.., out]`.
    pub fn random(dims: &[usize], output_activation: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        Self {
            layers: dims.windows(2).map(|w| Linear::random(w[0], w[1], rng)).collect(),
            slope: DEFAULT_LEAKY_SLOPE,
            output_activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dims("mlp layer chain", &[w[0].output_dim()], &[w[1].input_dim()]));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dims("mlp bias", &[l.output_dim()], l.bias.shape()));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        MlpNodes {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
            slope: self.slope,
            output_activation: self.output_activation,
        }
    }

    /// Untaped forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let nodes = self.register(&mut tape);
        let xi = tape.leaf(x.clone());
        let y = nodes.forward(&mut tape, xi)?;
        Ok(tape.value(y).clone())
    }
}

/// Tape handles for an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub layers: Vec<(NodeId, NodeId)>,
    pub slope: f64,
    pub output_activation: bool,
}

impl MlpNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let in_dim = tape.value(self.layers[0].0).rows();
        if tape.value(x).len() != in_dim || tape.shape(x).len() != 1 {
            return Err(Error::dims("mlp input", &[in_dim], tape.shape(x)));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add(z, b)?;
            if i < last || self.output_activation {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }
}
