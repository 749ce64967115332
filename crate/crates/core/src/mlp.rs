//! Feed-forward networks with explicit reverse-mode gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{GradTape, NodeId};
use crate::tensor::Tensor2;

/// Activation applied to every hidden layer.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Activation applied to the final layer.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// For data living in [0, 1], e.g. pixel intensities.
    Sigmoid,
}

/// A multilayer perceptron. `layer_dims` runs input -> hidden... -> output;
/// a single entry means the network is the identity function (used for the
/// encoder-free model variants).
#[derive(Clone, Debug)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Tensor2>,
    biases: Vec<Tensor2>,
    activation: Activation,
    output_activation: OutputActivation,
}

/// Tape handles for one registration of the network parameters. Reusing the
/// same handles across several forward passes shares the parameters, so their
/// gradients accumulate.
#[derive(Clone, Debug)]
pub struct MlpTapeParams {
    pub weight_ids: Vec<NodeId>,
    pub bias_ids: Vec<NodeId>,
}

impl Mlp {
    /// Seeded initialization, weights uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn new(
        layer_dims: Vec<usize>,
        activation: Activation,
        output_activation: OutputActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layer_dims.is_empty() {
            return Err(Error::usage("Mlp::new requires at least one layer dim"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(Tensor2::from_vec(fan_in, fan_out, data)?);
            biases.push(Tensor2::zeros(1, fan_out));
        }
        Ok(Mlp {
            layer_dims,
            weights,
            biases,
            activation,
            output_activation,
        })
    }

    /// The identity network on `dim`-dimensional data: no parameters, no
    /// activations, output == input.
    pub fn identity(dim: usize) -> Self {
        Mlp {
            layer_dims: vec![dim],
            weights: Vec::new(),
            biases: Vec::new(),
            activation: Activation::Identity,
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Tensor2] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor2] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor2] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor2] {
        &mut self.biases
    }

    /// Replace all parameters, validating shapes against `layer_dims`.
    pub fn set_params(&mut self, weights: Vec<Tensor2>, biases: Vec<Tensor2>) -> Result<()> {
        if weights.len() != self.weights.len() || biases.len() != self.biases.len() {
            return Err(Error::usage("set_params: wrong layer count"));
        }
        for (i, w) in weights.iter().enumerate() {
            let expect = (self.layer_dims[i], self.layer_dims[i + 1]);
            if w.shape() != expect {
                return Err(Error::shape(
                    "Mlp::set_params",
                    format!("{}x{}", expect.0, expect.1),
                    format!("{}x{}", w.shape().0, w.shape().1),
                ));
            }
        }
        self.weights = weights;
        self.biases = biases;
        Ok(())
    }

    fn check_input(&self, batch: &Tensor2) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("batch with {} columns", self.input_dim()),
                format!("{} columns", batch.cols()),
            ));
        }
        Ok(())
    }

    /// Plain forward pass without gradient recording.
    pub fn forward(&self, batch: &Tensor2) -> Result<Tensor2> {
        self.check_input(batch)?;
        if self.is_identity() {
            return Ok(batch.clone());
        }
        let n_layers = self.weights.len();
        let mut current = batch.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = current.matmul(w)?;
            for r in 0..z.rows() {
                for (v, &bv) in z.row_mut(r).iter_mut().zip(b.row(0)) {
                    *v += bv;
                }
            }
            let last = i + 1 == n_layers;
            current = if last {
                match self.output_activation {
                    OutputActivation::Identity => z,
                    OutputActivation::Sigmoid => z.map(|v| 1.0 / (1.0 + (-v).exp())),
                }
            } else {
                match self.activation {
                    Activation::Relu => z.map(|v| v.max(0.0)),
                    Activation::Tanh => z.map(f64::tanh),
                    Activation::Identity => z,
                }
            };
        }
        Ok(current)
    }

    /// Register the parameters on a tape so several passes can share them.
    pub fn register_params(&self, tape: &mut GradTape) -> MlpTapeParams {
        MlpTapeParams {
            weight_ids: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            bias_ids: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// Forward pass recorded on `tape`, reusing already-registered parameters.
    pub fn forward_tape_with(
        &self,
        tape: &mut GradTape,
        input: NodeId,
        params: &MlpTapeParams,
    ) -> Result<NodeId> {
        self.check_input(tape.value(input))?;
        if self.is_identity() {
            return Ok(input);
        }
        let n_layers = self.weights.len();
        let mut current = input;
        for i in 0..n_layers {
            let z = tape.matmul(current, params.weight_ids[i])?;
            let z = tape.add_bias(z, params.bias_ids[i])?;
            let last = i + 1 == n_layers;
            current = if last {
                match self.output_activation {
                    OutputActivation::Identity => z,
                    OutputActivation::Sigmoid => tape.sigmoid(z),
                }
            } else {
                match self.activation {
                    Activation::Relu => tape.relu(z),
                    Activation::Tanh => tape.tanh(z),
                    Activation::Identity => z,
                }
            };
        }
        Ok(current)
    }

    /// Forward pass recorded on `tape`, registering parameters first.
    pub fn forward_tape(&self, tape: &mut GradTape, input: NodeId) -> Result<(NodeId, MlpTapeParams)> {
        let params = self.register_params(tape);
        let out = self.forward_tape_with(tape, input, &params)?;
        Ok((out, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_single_layer(dim: usize, activation: Activation) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(vec![dim, dim], activation, OutputActivation::Identity, &mut rng).unwrap();
        let mut eye = Tensor2::zeros(dim, dim);
        for i in 0..dim {
            eye.set(i, i, 1.0);
        }
        net.set_params(vec![eye], vec![Tensor2::zeros(1, dim)]).unwrap();
        net
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let net = identity_single_layer(2, Activation::Identity);
        let out = net.forward(&Tensor2::row_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_output_layer_not_applied_but_hidden_is() {
        // Single layer: relu is a hidden activation, so a 1-layer net applies
        // only the output activation. Build 2 layers to see the relu.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(vec![2, 2, 2], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
        let mut eye = Tensor2::zeros(2, 2);
        eye.set(0, 0, 1.0);
        eye.set(1, 1, 1.0);
        net.set_params(vec![eye.clone(), eye], vec![Tensor2::zeros(1, 2), Tensor2::zeros(1, 2)]).unwrap();
        let out = net.forward(&Tensor2::row_vector(&[-1.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 3.0]);
    }

    #[test]
    fn hand_computed_two_layer() {
        // 2 -> 3 -> 1, all weights 0.5, biases 0, relu hidden.
        // input [1, 1] -> hidden [1, 1, 1] -> output [1.5]
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(vec![2, 3, 1], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
        net.set_params(
            vec![Tensor2::filled(2, 3, 0.5), Tensor2::filled(3, 1, 0.5)],
            vec![Tensor2::zeros(1, 3), Tensor2::zeros(1, 1)],
        )
        .unwrap();
        let out = net.forward(&Tensor2::row_vector(&[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[1.5]);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(vec![4, 5, 3], Activation::Tanh, OutputActivation::Sigmoid, &mut rng).unwrap();
        let batch = Tensor2::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let plain = net.forward(&batch).unwrap();
        let mut tape = GradTape::new();
        let x = tape.leaf(batch);
        let (out, _) = net.forward_tape(&mut tape, x).unwrap();
        assert!(tape.value(out).max_abs_diff(&plain) < 1e-15);
    }

    #[test]
    fn shape_mismatch_reports_dims() {
        let net = identity_single_layer(3, Activation::Identity);
        let err = net.forward(&Tensor2::zeros(1, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let net = Mlp::new(vec![6, 4, 2], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
        let batch = Tensor2::from_vec(3, 6, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(net.forward(&batch).unwrap(), net.forward(&batch).unwrap());
    }
}
