//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Shared by the GAN and the perceptron localizer. Weights are stored
//! row-major (`outputs × inputs`). Gradients are exact; there is no autodiff.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("layer {layer} takes {expected} inputs but the previous layer yields {found}")]
    Chain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("network has no layers")]
    Empty,
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform(−a, a) weights with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn xavier(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Per-layer parameter gradients, laid out like the layers themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// All gradients in [`DenseNet::parameter`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer (the first entry is the network input).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self, NeuralError> {
        if layers.is_empty() {
            return Err(NeuralError::Empty);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NeuralError::Dimension {
                    expected: l.inputs * l.outputs,
                    found: l.weights.len(),
                });
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(NeuralError::Chain {
                    layer: i,
                    expected: l.inputs,
                    found: layers[i - 1].outputs,
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite(i));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Xavier-initialized network. `widths` has one more entry than
    /// `activations`.
    pub fn xavier(widths: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(widths.len(), activations.len() + 1);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::xavier(w[0], w[1], act, rng))
            .collect();
        DenseNet { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in &self.layers {
            x = l.affine(&x).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace, NeuralError> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for l in &self.layers {
            let z = l.affine(&x);
            let a = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Backpropagates `output_grad` (∂loss/∂output) and returns the parameter
    /// gradients together with ∂loss/∂input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NeuralError> {
        let last = self.layers.last().ok_or(NeuralError::Empty)?;
        if output_grad.len() != last.outputs {
            return Err(NeuralError::Dimension {
                expected: last.outputs,
                found: output_grad.len(),
            });
        }
        let z = &trace.pre[self.layers.len() - 1];
        let delta: Vec<f64> = output_grad
            .iter()
            .zip(z)
            .zip(&trace.output)
            .map(|((g, &z), &a)| g * last.activation.derivative(z, a))
            .collect();
        self.backward_pre(trace, delta)
    }

    /// Like [`backward`](Self::backward) but seeded with ∂loss/∂z of the final
    /// layer's pre-activation. With a sigmoid output and BCE loss this is
    /// `(p − t) / n`, which stays well-conditioned when the output saturates.
    pub fn backward_logits(
        &self,
        trace: &ForwardTrace,
        logit_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NeuralError> {
        let width = self.output_width();
        if logit_grad.len() != width {
            return Err(NeuralError::Dimension {
                expected: width,
                found: logit_grad.len(),
            });
        }
        self.backward_pre(trace, logit_grad.to_vec())
    }

    fn backward_pre(
        &self,
        trace: &ForwardTrace,
        mut delta: Vec<f64>,
    ) -> Result<(Gradients, Vec<f64>), NeuralError> {
        if trace.inputs.len() != self.layers.len() {
            return Err(NeuralError::Dimension {
                expected: self.layers.len(),
                found: trace.inputs.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = &trace.inputs[li];
            let gw = &mut grads.weights[li];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(g, xi)| *g = d * xi);
            }
            grads.bias[li].copy_from_slice(&delta);
            let mut upstream = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                upstream.iter_mut().zip(row).for_each(|(u, w)| *u += d * w);
            }
            if li > 0 {
                let prev = &self.layers[li - 1];
                for ((u, &z), &a) in upstream.iter_mut().zip(&trace.pre[li - 1]).zip(x) {
                    *u *= prev.activation.derivative(z, a);
                }
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }

    /// Plain gradient-descent step.
    pub fn apply_sgd(&mut self, grads: &Gradients, learning_rate: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            layer.weights.iter_mut().zip(gw).for_each(|(w, g)| *w -= learning_rate * g);
            layer.bias.iter_mut().zip(gb).for_each(|(b, g)| *b -= learning_rate * g);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.weights.len() {
                return (li, true, index);
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return (li, false, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index: for each layer, weights then biases.
    pub fn parameter(&self, index: usize) -> f64 {
        let (li, is_weight, i) = self.locate(index);
        let l = &self.layers[li];
        if is_weight {
            l.weights[i]
        } else {
            l.bias[i]
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        let (li, is_weight, i) = self.locate(index);
        let l = &mut self.layers[li];
        if is_weight {
            l.weights[i] = value;
        } else {
            l.bias[i] = value;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Text checkpoint; see [`DenseNet::from_checkpoint`].
    pub fn to_checkpoint(&self) -> String {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("network serializes")
    }

    /// Parses a checkpoint: a JSON object `{"format": "cgfl-densenet",
    /// "version": 1, "layers": [...]}` where each layer holds `inputs`,
    /// `outputs`, row-major `weights`, `bias` and `activation`.
    pub fn from_checkpoint(text: &str) -> Result<Self, NeuralError> {
        let doc: Checkpoint =
            serde_json::from_str(text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        DenseNet::new(doc.layers)
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NeuralError> {
        if input.len() != self.input_width() {
            return Err(NeuralError::Dimension {
                expected: self.input_width(),
                found: input.len(),
            });
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "cgfl-densenet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layers: Vec<Dense>,
}

pub fn net_forward(net: &DenseNet, input: &[f64]) -> Result<Vec<f64>, NeuralError> {
    net.forward(input)
}

/// Parameter gradients of a loss whose gradient with respect to the network
/// output at `input` is `loss_grad`.
pub fn net_backward(
    net: &DenseNet,
    input: &[f64],
    loss_grad: &[f64],
) -> Result<Gradients, NeuralError> {
    let trace = net.forward_trace(input)?;
    net.backward(&trace, loss_grad).map(|(g, _)| g)
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Mean binary cross-entropy.
pub fn bce_loss(prediction: &[f64], target: &[f64]) -> Result<f64, NeuralError> {
    if prediction.len() != target.len() {
        return Err(NeuralError::Dimension {
            expected: target.len(),
            found: prediction.len(),
        });
    }
    if prediction.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_probability(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / prediction.len() as f64)
}

/// ∂[`bce_loss`]/∂prediction, evaluated at the clamped prediction.
pub fn bce_grad(prediction: &[f64], target: &[f64]) -> Result<Vec<f64>, NeuralError> {
    if prediction.len() != target.len() {
        return Err(NeuralError::Dimension {
            expected: target.len(),
            found: prediction.len(),
        });
    }
    let n = prediction.len() as f64;
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_probability(p);
            (p - t) / (p * (1.0 - p) * n)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `epochs == 0` is accepted and means "leave the network untrained".
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NeuralError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_net_outputs_half() {
        let net = DenseNet::new(vec![
            Dense::zeros(3, 4, Activation::Relu),
            Dense::zeros(4, 2, Activation::Sigmoid),
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_affine() {
        let net = DenseNet::new(vec![Dense {
            inputs: 1,
            outputs: 1,
            weights: vec![2.0],
            bias: vec![1.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        // loss = output  =>  dW = x, db = 1
        let g = net_backward(&net, &[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0], vec![3.0]);
        assert_eq!(g.bias[0], vec![1.0]);
    }

    #[test]
    fn dimension_errors() {
        let net = DenseNet::xavier(&[3, 2], &[Activation::Sigmoid], &mut seeded(1));
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NeuralError::Dimension { expected: 3, found: 1 })
        ));
        assert!(net_backward(&net, &[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(matches!(
            DenseNet::new(vec![
                Dense::zeros(3, 4, Activation::Relu),
                Dense::zeros(5, 1, Activation::Sigmoid)
            ]),
            Err(NeuralError::Chain { layer: 1, .. })
        ));
        let mut bad = Dense::zeros(1, 1, Activation::Identity);
        bad.weights[0] = f64::NAN;
        assert_eq!(DenseNet::new(vec![bad]), Err(NeuralError::NonFinite(0)));
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let net = DenseNet::xavier(&[4, 5, 2], &[Activation::Relu, Activation::Sigmoid], &mut seeded(3));
        let g = net_backward(&net, &[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let sat = bce_loss(&[1.0], &[1.0]).unwrap();
        assert!(sat.is_finite() && sat > 0.0 && sat < 1e-6);
        let v = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        assert!((v - (-(0.9f64).ln())).abs() < 1e-12);
        assert!((v - 0.1054).abs() < 1e-4);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bce_grad_matches_difference_quotient() {
        let p = [0.3, 0.8];
        let t = [1.0, 0.0];
        let g = bce_grad(&p, &t).unwrap();
        for i in 0..2 {
            let h = 1e-6;
            let mut up = p;
            up[i] += h;
            let mut down = p;
            down[i] -= h;
            let fd = (bce_loss(&up, &t).unwrap() - bce_loss(&down, &t).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn sgd_step_reduces_convex_loss() {
        // single weight, loss = (w*x - y)^2
        let mut net = DenseNet::new(vec![Dense {
            inputs: 1,
            outputs: 1,
            weights: vec![0.0],
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let loss = |net: &DenseNet| (net.forward(&[2.0]).unwrap()[0] - 3.0).powi(2);
        let before = loss(&net);
        let out = net.forward(&[2.0]).unwrap()[0];
        let g = net_backward(&net, &[2.0], &[2.0 * (out - 3.0)]).unwrap();
        net.apply_sgd(&g, 0.01);
        assert!(loss(&net) < before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = DenseNet::xavier(&[3, 4, 1], &[Activation::LeakyRelu, Activation::Sigmoid], &mut seeded(9));
        let text = net.to_checkpoint();
        assert_eq!(DenseNet::from_checkpoint(&text).unwrap(), net);
        assert!(DenseNet::from_checkpoint("{}").is_err());
    }

    #[test]
    fn parameter_indexing_covers_all() {
        let mut net = DenseNet::xavier(&[2, 3, 1], &[Activation::Relu, Activation::Sigmoid], &mut seeded(5));
        assert_eq!(net.parameter_count(), 2 * 3 + 3 + 3 + 1);
        net.set_parameter(9, 0.25);
        assert_eq!(net.layers()[1].weights[0], 0.25);
        assert_eq!(net.parameter(9), 0.25);
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for z in [-30.0, -1.0, 0.0, 1.0, 30.0] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0);
        }
    }
}
