//! Small fully connected networks with exact reverse-mode gradients.
//!
//! Networks are evaluated on row batches: an input of `B x in` produces
//! `B x out`. The [`ForwardTape`] returned by a forward pass holds the layer
//! activations needed to backpropagate; gradients accumulate into a
//! [`NetGradients`] buffer so several passes can share one buffer.

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, DenseMatrix};
use super::rng::RandomSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output. Valid because
    /// every supported activation is invertible and sign preserving.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Feed-forward network; the activation is applied after every layer
/// except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    sizes: Vec<usize>,
    /// One `in x out` matrix per layer.
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`FeedForwardNet::forward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    sizes: Vec<usize>,
    /// `layers[0]` is the input; `layers[l]` the output of layer `l - 1`.
    layers: Vec<DenseMatrix>,
}

impl ForwardTape {
    pub fn output(&self) -> &DenseMatrix {
        self.layers.last().expect("tape always holds the input")
    }

    pub fn into_output(mut self) -> DenseMatrix {
        self.layers.pop().expect("tape always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].rows()
    }
}

impl FeedForwardNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut RandomSource) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("a network needs at least an input and an output layer"));
        }
        let weights = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]).max(1) as f64).sqrt();
                DenseMatrix::from_fn(w[0], w[1], |_, _| rng.uniform_range(-bound, bound))
            })
            .collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(weights: Vec<DenseMatrix>, biases: Vec<Vec<f64>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("weights and biases must be non-empty and paired"));
        }
        let mut sizes = vec![weights[0].rows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != *sizes.last().unwrap() {
                return Err(Error::dim(format!("layer {l} input"), sizes.last().unwrap(), w.rows()));
            }
            if b.len() != w.cols() {
                return Err(Error::dim(format!("layer {l} bias"), w.cols(), b.len()));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    term: format!("layer {l} parameters"),
                });
            }
            sizes.push(w.cols());
        }
        Ok(Self {
            sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Zeroes the last layer so the network outputs exactly its bias.
    pub fn zero_output_layer(&mut self) {
        self.weights.last_mut().unwrap().fill(0.0);
        self.biases.last_mut().unwrap().iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(x)?.into_output().into_vec())
    }

    pub fn forward_batch(&self, input: DenseMatrix) -> Result<ForwardTape> {
        if input.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.cols()));
        }
        let batch = input.rows();
        let mut layers = Vec::with_capacity(self.weights.len() + 1);
        layers.push(input);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut out = DenseMatrix::zeros(batch, w.cols());
            for r in 0..batch {
                out.row_mut(r).copy_from_slice(b);
            }
            gemm(1.0, &layers[l], false, w, false, 1.0, &mut out);
            if l < last {
                let act = self.activation;
                out.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            layers.push(out);
        }
        Ok(ForwardTape {
            sizes: self.sizes.clone(),
            layers,
        })
    }

    /// Backpropagates `upstream` (same shape as the tape output), adding
    /// parameter gradients into `grads` and returning the input gradient.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        upstream: &DenseMatrix,
        grads: &mut NetGradients,
    ) -> Result<DenseMatrix> {
        if tape.sizes != self.sizes || tape.layers.len() != self.sizes.len() {
            return Err(Error::invalid(
                "backward requires the tape of a forward pass through this network",
            ));
        }
        if grads.weights.len() != self.weights.len() {
            return Err(Error::dim(
                "gradient buffer layers",
                self.weights.len(),
                grads.weights.len(),
            ));
        }
        let out = tape.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::dim(
                "upstream gradient",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            let input = &tape.layers[l];
            gemm(1.0, input, true, &delta, false, 1.0, &mut grads.weights[l]);
            let gb = &mut grads.biases[l];
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            let mut d_in = DenseMatrix::zeros(delta.rows(), self.weights[l].rows());
            gemm(1.0, &delta, false, &self.weights[l], true, 0.0, &mut d_in);
            if l > 0 {
                let act = self.activation;
                for (g, y) in d_in.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *g *= act.derivative_from_output(*y);
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    pub fn zero_gradients(&self) -> NetGradients {
        NetGradients {
            weights: self
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.rows() * w.cols() + b.len())
            .sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }

    /// Reads parameters in [`write_params`](Self::write_params) order;
    /// returns how many values were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.rows() * w.cols();
            w.as_mut_slice().copy_from_slice(&src[at..at + n]);
            at += n;
            let m = b.len();
            b.copy_from_slice(&src[at..at + m]);
            at += m;
        }
        at
    }
}

impl NetGradients {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(sizes: &[usize], seed: u64) -> FeedForwardNet {
        FeedForwardNet::new(sizes, Activation::default(), &mut RandomSource::new(seed)).unwrap()
    }

    #[test]
    fn identity_layer() {
        let n = FeedForwardNet::from_parts(
            vec![DenseMatrix::identity(2)],
            vec![vec![0.0, 0.0]],
            Activation::default(),
        )
        .unwrap();
        assert_eq!(n.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut n = net(&[3, 4, 2], 1);
        n.zero_output_layer();
        n.biases_mut()[1].copy_from_slice(&[0.5, -1.5]);
        assert_eq!(n.forward(&[9.0, -3.0, 1.0]).unwrap(), vec![0.5, -1.5]);
        assert_eq!(n.forward(&[0.0, 0.0, 0.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let n = net(&[3, 2], 1);
        assert!(matches!(n.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn foreign_tape_rejected() {
        let a = net(&[2, 3, 1], 1);
        let b = net(&[2, 4, 1], 2);
        let tape = b.forward_batch(DenseMatrix::zeros(1, 2)).unwrap();
        let mut g = a.zero_gradients();
        assert!(a.backward(&tape, &DenseMatrix::zeros(1, 1), &mut g).is_err());
    }

    #[test]
    fn flat_roundtrip() {
        let n = net(&[3, 5, 2], 4);
        let mut flat = Vec::new();
        n.write_params(&mut flat);
        assert_eq!(flat.len(), n.num_params());
        let mut m = net(&[3, 5, 2], 9);
        assert_eq!(m.read_params(&flat), flat.len());
        assert_eq!(m, n);
    }
}
