//! Feedforward networks with an explicit forward trace and hand-derived
//! reverse-mode gradients.
//!
//! A net is an ordered list of affine layers `z = W f_prev (+ b)` followed by
//! an elementwise activation. The final layer is always `Identity`, so the
//! last pre-activation vector doubles as the logits. `backward` returns
//! gradients with respect to weights, biases, every pre-activation vector,
//! and the input; the latter two feed the verification suite and FGSM.

use crate::error::{Error, Result};
use crate::perturb::{NoiseDraw, NoiseMode};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Elementwise activation of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn forward(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. The ReLU subgradient
    /// at exactly 0 is taken as 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
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
}

/// One affine layer: weight is `out x in`, bias (optional) has length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: Tensor,
    bias: Option<Tensor>,
    activation: Activation,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Option<Tensor>, activation: Activation) -> Result<Self> {
        if !weight.is_matrix() {
            return Err(Error::Dimension(format!(
                "layer weight must be a matrix, got shape {:?}",
                weight.shape()
            )));
        }
        if let Some(b) = &bias {
            if !b.is_vector() || b.len() != weight.shape()[0] {
                return Err(Error::Dimension(format!(
                    "bias shape {:?} does not match weight rows {}",
                    b.shape(),
                    weight.shape()[0]
                )));
            }
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bias.as_mut()
    }
}

/// Feedforward network; consecutive layer dimensions chain and the final
/// activation is `Identity` (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredNet {
    layers: Vec<Layer>,
}

/// Per-layer pre-activations and activations from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    input: Tensor,
    pre_activations: Vec<Tensor>,
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    /// The input, i.e. the activation of "layer 0".
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Pre-activation of layer `h` (1-based like the layer stack, 0-indexed here).
    pub fn pre_activation(&self, layer_idx: usize) -> &Tensor {
        &self.pre_activations[layer_idx]
    }

    /// Activation output of layer `h` (0-indexed).
    pub fn activation(&self, layer_idx: usize) -> &Tensor {
        &self.activations[layer_idx]
    }

    /// Activation feeding layer `layer_idx`: the input for layer 0.
    pub fn layer_input(&self, layer_idx: usize) -> &Tensor {
        if layer_idx == 0 {
            &self.input
        } else {
            &self.activations[layer_idx - 1]
        }
    }

    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// Final-layer output (the last activation is Identity, so these are the logits).
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace of an empty net")
    }

    /// True when both traces have the same ReLU on/off pattern at every layer.
    pub fn same_relu_pattern(&self, other: &ForwardTrace, net: &LayeredNet) -> bool {
        if self.depth() != other.depth() {
            return false;
        }
        for (idx, layer) in net.layers.iter().enumerate() {
            if layer.activation != Activation::Relu {
                continue;
            }
            let a = self.pre_activations[idx].data();
            let b = other.pre_activations[idx].data();
            if a.len() != b.len() {
                return false;
            }
            if a.iter().zip(b).any(|(x, y)| (*x > 0.0) != (*y > 0.0)) {
                return false;
            }
        }
        true
    }
}

/// Gradients of the per-sample (or batch-mean) loss, shape-mirroring a net.
#[derive(Debug, Clone)]
pub struct GradientSet {
    d_weights: Vec<Tensor>,
    d_biases: Vec<Option<Tensor>>,
    d_pre_activations: Vec<Tensor>,
    d_input: Tensor,
}

impl GradientSet {
    /// Assembles a gradient set from explicit parts (hand-built gradients
    /// for closed-form checks); shapes must mirror the target net.
    pub fn from_parts(
        d_weights: Vec<Tensor>,
        d_biases: Vec<Option<Tensor>>,
        d_pre_activations: Vec<Tensor>,
        d_input: Tensor,
    ) -> Self {
        Self {
            d_weights,
            d_biases,
            d_pre_activations,
            d_input,
        }
    }

    pub fn zeros_like(net: &LayeredNet) -> Self {
        Self {
            d_weights: net.layers.iter().map(|l| l.weight.zeros_like()).collect(),
            d_biases: net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(Tensor::zeros_like))
                .collect(),
            d_pre_activations: net
                .layers
                .iter()
                .map(|l| Tensor::zeros(vec![l.out_dim()]))
                .collect(),
            d_input: Tensor::zeros(vec![net.input_dim()]),
        }
    }

    pub fn d_weight(&self, layer_idx: usize) -> &Tensor {
        &self.d_weights[layer_idx]
    }

    pub fn d_bias(&self, layer_idx: usize) -> Option<&Tensor> {
        self.d_biases[layer_idx].as_ref()
    }

    pub fn d_pre_activation(&self, layer_idx: usize) -> &Tensor {
        &self.d_pre_activations[layer_idx]
    }

    pub fn d_input(&self) -> &Tensor {
        &self.d_input
    }

    pub fn depth(&self) -> usize {
        self.d_weights.len()
    }

    pub(crate) fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.depth() != other.depth() {
            return Err(Error::Dimension(format!(
                "gradient depths disagree: {} vs {}",
                self.depth(),
                other.depth()
            )));
        }
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            a.axpy_inplace(1.0, b)?;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            match (a, b) {
                (Some(a), Some(b)) => a.axpy_inplace(1.0, b)?,
                (None, None) => {}
                _ => {
                    return Err(Error::Dimension(
                        "bias presence disagrees between gradient sets".into(),
                    ))
                }
            }
        }
        for (a, b) in self
            .d_pre_activations
            .iter_mut()
            .zip(&other.d_pre_activations)
        {
            a.axpy_inplace(1.0, b)?;
        }
        self.d_input.axpy_inplace(1.0, &other.d_input)?;
        Ok(())
    }

    pub(crate) fn scale_inplace(&mut self, factor: f64) -> Result<()> {
        for t in self.d_weights.iter_mut() {
            t.scale_inplace(factor)?;
        }
        for t in self.d_biases.iter_mut().flatten() {
            t.scale_inplace(factor)?;
        }
        for t in self.d_pre_activations.iter_mut() {
            t.scale_inplace(factor)?;
        }
        self.d_input.scale_inplace(factor)
    }

    /// Sum of squares over all parameter gradients (weights and biases,
    /// jointly; pre-activation and input gradients are not parameters).
    pub fn param_sq_sum(&self) -> f64 {
        let mut acc = 0.0;
        for t in &self.d_weights {
            acc += t.sq_sum();
        }
        for t in self.d_biases.iter().flatten() {
            acc += t.sq_sum();
        }
        acc
    }

    /// Largest absolute parameter-gradient entry.
    pub fn param_max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for t in &self.d_weights {
            for v in t.data() {
                m = m.max(v.abs());
            }
        }
        for t in self.d_biases.iter().flatten() {
            for v in t.data() {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &Tensor) -> Vec<f64> {
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy `-log softmax(logits)[label]`, stabilized by
/// max-subtraction.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    if !logits.is_vector() {
        return Err(Error::Dimension(format!(
            "logits must be a vector, got shape {:?}",
            logits.shape()
        )));
    }
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.data().iter().map(|z| (z - max).exp()).sum();
    Ok(max + sum_exp.ln() - logits.data()[label])
}

impl LayeredNet {
    /// Builds a net from explicit layers, checking that dimensions chain and
    /// the final activation is Identity.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("net must have at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer output {} does not chain into next layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::InvalidInput(
                "final layer activation must be Identity (logits)".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// Seeded He-style initialization: weights ~ N(0, 2/fan_in), biases zero.
    /// `widths` lists input, hidden, and output sizes; hidden layers are ReLU.
    pub fn init(widths: &[usize], with_bias: bool, rng: &mut SplitMix64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least input and output widths".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for h in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[h], widths[h + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
            let weight = Tensor::matrix(fan_out, fan_in, data)?;
            let bias = with_bias.then(|| Tensor::zeros(vec![fan_out]));
            let activation = if h + 1 == widths.len() - 1 {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(weight, bias, activation)?);
        }
        Self::from_layers(layers)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, idx: usize) -> &Layer {
        &self.layers[idx]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layer_mut(&mut self, idx: usize) -> &mut Layer {
        &mut self.layers[idx]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    /// Sum of squares over all parameters (weights and biases).
    pub fn param_sq_sum(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            acc += l.weight.sq_sum();
            if let Some(b) = &l.bias {
                acc += b.sq_sum();
            }
        }
        acc
    }

    /// Forward pass recording every pre-activation and activation.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if !x.is_vector() || x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match net input width {}",
                x.shape(),
                self.input_dim()
            )));
        }
        let mut pre_activations = Vec::with_capacity(self.depth());
        let mut activations = Vec::with_capacity(self.depth());
        let mut current = x.clone();
        for layer in &self.layers {
            let mut z = layer.weight.matvec(&current)?;
            if let Some(b) = &layer.bias {
                z = z.add(b)?;
            }
            let f = Tensor::vector(
                &z.data()
                    .iter()
                    .map(|&v| layer.activation.forward(v))
                    .collect::<Vec<_>>(),
            )?;
            pre_activations.push(z);
            activations.push(f.clone());
            current = f;
        }
        Ok(ForwardTrace {
            input: x.clone(),
            pre_activations,
            activations,
        })
    }

    /// Per-sample loss: cross-entropy of the logits for `x` against `label`.
    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        cross_entropy(self.forward(x)?.logits(), label)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.depth() != self.depth() || trace.input.len() != self.input_dim() {
            return Err(Error::Consistency(
                "trace does not match net (layer count or input width)".into(),
            ));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            if trace.pre_activations[idx].len() != layer.out_dim() {
                return Err(Error::Consistency(format!(
                    "trace layer {idx} width {} does not match net width {}",
                    trace.pre_activations[idx].len(),
                    layer.out_dim()
                )));
            }
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of `cross_entropy(forward(x), label)` with
    /// respect to weights, biases, pre-activations, and the input.
    pub fn backward(&self, trace: &ForwardTrace, label: usize) -> Result<GradientSet> {
        self.check_trace(trace)?;
        let logits = trace.logits();
        if label >= logits.len() {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {} classes",
                logits.len()
            )));
        }

        // dL/dz at the output layer: softmax(z) - onehot(label).
        let mut probs = softmax(logits);
        probs[label] -= 1.0;
        let mut d_z = Tensor::vector(&probs)?;

        let depth = self.depth();
        let mut d_weights = vec![Tensor::zeros(vec![0]); 0];
        d_weights.reserve(depth);
        let mut d_biases: Vec<Option<Tensor>> = Vec::with_capacity(depth);
        let mut d_pre_activations: Vec<Tensor> = Vec::with_capacity(depth);
        // Build back to front, then reverse.
        let mut rev_w = Vec::with_capacity(depth);
        let mut rev_b = Vec::with_capacity(depth);
        let mut rev_z = Vec::with_capacity(depth);
        let mut d_input = Tensor::zeros(vec![self.input_dim()]);

        for idx in (0..depth).rev() {
            let layer = &self.layers[idx];
            rev_z.push(d_z.clone());
            rev_w.push(d_z.outer(trace.layer_input(idx))?);
            rev_b.push(layer.bias.as_ref().map(|_| d_z.clone()));

            // dL/d f^(idx-1) = W^T dL/dz, then through the previous activation.
            let d_prev_act = layer.weight.matvec_t(&d_z)?;
            if idx == 0 {
                d_input = d_prev_act;
            } else {
                let prev = &self.layers[idx - 1];
                let z_prev = &trace.pre_activations[idx - 1];
                let data: Vec<f64> = d_prev_act
                    .data()
                    .iter()
                    .zip(z_prev.data())
                    .map(|(g, z)| g * prev.activation.derivative(*z))
                    .collect();
                d_z = Tensor::vector(&data)?;
            }
        }
        for _ in 0..depth {
            d_weights.push(rev_w.pop().unwrap());
            d_biases.push(rev_b.pop().unwrap());
            d_pre_activations.push(rev_z.pop().unwrap());
        }
        Ok(GradientSet {
            d_weights,
            d_biases,
            d_pre_activations,
            d_input,
        })
    }

    /// Mean loss and mean gradients over a non-empty batch. Equals averaging
    /// the per-sample results (fixed, index-ordered accumulation).
    pub fn batch_loss_and_grad(&self, batch: &[(&Tensor, usize)]) -> Result<(f64, GradientSet)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("batch must be non-empty".into()));
        }
        let mut total_loss = 0.0;
        let mut acc = GradientSet::zeros_like(self);
        for (x, label) in batch {
            let trace = self.forward(x)?;
            total_loss += cross_entropy(trace.logits(), *label)?;
            acc.add_assign(&self.backward(&trace, *label)?)?;
        }
        let inv = 1.0 / batch.len() as f64;
        acc.scale_inplace(inv)?;
        Ok((total_loss * inv, acc))
    }

    /// Copy of the net with the noise draw applied: `w o xi` (and `b o xi_b`)
    /// in multiplicative mode, `w + xi` in additive mode. `self` is untouched.
    pub fn perturbed_copy(&self, noise: &NoiseDraw) -> Result<LayeredNet> {
        noise.check_shape(self)?;
        let mut layers = Vec::with_capacity(self.depth());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (w_noise, b_noise) = noise.layer(idx);
            let weight = match noise.mode() {
                NoiseMode::Multiplicative => layer.weight.hadamard(w_noise)?,
                NoiseMode::Additive => layer.weight.add(w_noise)?,
            };
            let bias = match (&layer.bias, b_noise) {
                (Some(b), Some(n)) => Some(match noise.mode() {
                    NoiseMode::Multiplicative => b.hadamard(n)?,
                    NoiseMode::Additive => b.add(n)?,
                }),
                (Some(b), None) => Some(b.clone()),
                (None, _) => None,
            };
            layers.push(Layer::new(weight, bias, layer.activation)?);
        }
        LayeredNet::from_layers(layers)
    }

    /// Predicted class: argmax of the logits, ties to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.logits().argmax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb;

    fn single_layer(weight: Tensor, bias: Option<Tensor>) -> LayeredNet {
        LayeredNet::from_layers(vec![Layer::new(weight, bias, Activation::Identity).unwrap()])
            .unwrap()
    }

    #[test]
    fn forward_identity_net() {
        let net = single_layer(Tensor::identity(2), None);
        let trace = net.forward(&Tensor::vector(&[1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(trace.logits().data(), &[1.0, 2.0]);
    }

    #[test]
    fn forward_relu_clamps_negatives() {
        let relu = Layer::new(Tensor::identity(2), None, Activation::Relu).unwrap();
        let head = Layer::new(Tensor::identity(2), None, Activation::Identity).unwrap();
        let net = LayeredNet::from_layers(vec![relu, head]).unwrap();
        let trace = net.forward(&Tensor::vector(&[-1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(trace.activation(0).data(), &[0.0, 2.0]);
        assert_eq!(trace.logits().data(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_hand_case() {
        let net = single_layer(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(), None);
        let trace = net.forward(&Tensor::vector(&[2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(trace.pre_activation(0).data(), &[5.0]);
    }

    #[test]
    fn forward_shape_mismatch() {
        let net = single_layer(Tensor::identity(2), None);
        let err = net.forward(&Tensor::vector(&[1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SplitMix64::new(11);
        let net = LayeredNet::init(&[5, 7, 3], true, &mut rng).unwrap();
        let x = Tensor::vector(&[0.1, -0.4, 0.7, 0.2, -0.9]).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relu_trace_consistency() {
        let mut rng = SplitMix64::new(21);
        let net = LayeredNet::init(&[4, 6, 6, 3], true, &mut rng).unwrap();
        let x = Tensor::vector(&[0.3, -0.2, 0.8, 0.1]).unwrap();
        let trace = net.forward(&x).unwrap();
        for idx in 0..net.depth() {
            if net.layer(idx).activation() == Activation::Relu {
                for (f, z) in trace
                    .activation(idx)
                    .data()
                    .iter()
                    .zip(trace.pre_activation(idx).data())
                {
                    assert_eq!(*f, z.max(0.0));
                }
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Tensor::vector(&[0.7, 0.7, 0.7, 0.7]).unwrap();
        let loss = cross_entropy(&logits, 2).unwrap();
        assert!((loss - 1.3862943611198906).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_overflow_safe() {
        let logits = Tensor::vector(&[1000.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, 0).unwrap();
        assert!(loss >= 0.0 && loss < 1e-300, "loss {loss}");
    }

    #[test]
    fn cross_entropy_hand_case() {
        // loss([1,2], label 1) = ln(1 + e^-1)
        let logits = Tensor::vector(&[1.0, 2.0]).unwrap();
        let loss = cross_entropy(&logits, 1).unwrap();
        assert!((loss - 0.31326168751822286).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let logits = Tensor::vector(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            cross_entropy(&logits, 2),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn backward_saturated_softmax_has_vanishing_gradients() {
        // Logit gap of 50 puts the softmax within e^-50 of one-hot.
        let net = single_layer(Tensor::identity(2), None);
        let trace = net.forward(&Tensor::vector(&[50.0, 0.0]).unwrap()).unwrap();
        let grads = net.backward(&trace, 0).unwrap();
        assert!(grads.param_max_abs() <= 1e-15);
    }

    #[test]
    fn backward_linear_softmax_closed_form() {
        // For a 1-layer linear net, dW = (softmax(z) - onehot(y)) (x) x.
        let w = Tensor::matrix(3, 2, vec![0.4, -0.3, 0.8, 0.1, -0.5, 0.2]).unwrap();
        let net = single_layer(w, None);
        let x = Tensor::vector(&[0.9, -1.4]).unwrap();
        let trace = net.forward(&x).unwrap();
        let grads = net.backward(&trace, 1).unwrap();

        let mut residual = softmax(trace.logits());
        residual[1] -= 1.0;
        let expected = Tensor::vector(&residual).unwrap().outer(&x).unwrap();
        for (a, b) in grads.d_weight(0).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    /// Central finite differences over every weight, bias, and input
    /// coordinate; independent of `backward`.
    fn finite_diff_check(net: &LayeredNet, x: &Tensor, label: usize, step: f64, tol: f64) {
        let trace = net.forward(x).unwrap();
        let grads = net.backward(&trace, label).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);

        for idx in 0..net.depth() {
            let w_len = net.layer(idx).weight().len();
            for p in 0..w_len {
                let mut plus = net.clone();
                plus.layer_mut(idx).weight_mut().nudge(p, step);
                let mut minus = net.clone();
                minus.layer_mut(idx).weight_mut().nudge(p, -step);
                let numeric =
                    (plus.loss(x, label).unwrap() - minus.loss(x, label).unwrap()) / (2.0 * step);
                let analytic = grads.d_weight(idx).data()[p];
                assert!(
                    rel(analytic, numeric) <= tol,
                    "layer {idx} weight {p}: analytic {analytic} vs numeric {numeric}"
                );
            }
            if net.layer(idx).bias().is_some() {
                let b_len = net.layer(idx).out_dim();
                for p in 0..b_len {
                    let mut plus = net.clone();
                    plus.layer_mut(idx).bias_mut().unwrap().nudge(p, step);
                    let mut minus = net.clone();
                    minus.layer_mut(idx).bias_mut().unwrap().nudge(p, -step);
                    let numeric = (plus.loss(x, label).unwrap() - minus.loss(x, label).unwrap())
                        / (2.0 * step);
                    let analytic = grads.d_bias(idx).unwrap().data()[p];
                    assert!(
                        rel(analytic, numeric) <= tol,
                        "layer {idx} bias {p}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
        for p in 0..x.len() {
            let mut xp = x.clone();
            xp.nudge(p, step);
            let mut xm = x.clone();
            xm.nudge(p, -step);
            let numeric =
                (net.loss(&xp, label).unwrap() - net.loss(&xm, label).unwrap()) / (2.0 * step);
            let analytic = grads.d_input().data()[p];
            assert!(
                rel(analytic, numeric) <= tol,
                "input {p}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = SplitMix64::new(1000 + seed);
            let widths: Vec<usize> = match seed % 3 {
                0 => vec![4, 8, 3],
                1 => vec![5, 10, 6, 4],
                _ => vec![3, 16, 8, 6, 2],
            };
            let net = LayeredNet::init(&widths, seed % 2 == 0, &mut rng).unwrap();
            let x = Tensor::vector(
                &(0..widths[0])
                    .map(|_| rng.normal() * 0.5)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let label = (rng.next_u64() % *widths.last().unwrap() as u64) as usize;
            finite_diff_check(&net, &x, label, 1e-6, 1e-5);
        }
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let mut rng = SplitMix64::new(3);
        let a = LayeredNet::init(&[4, 5, 3], true, &mut rng).unwrap();
        let b = LayeredNet::init(&[4, 6, 3], true, &mut rng).unwrap();
        let trace = a.forward(&Tensor::zeros(vec![4])).unwrap();
        assert!(matches!(b.backward(&trace, 0), Err(Error::Consistency(_))));
    }

    #[test]
    fn batch_of_one_equals_per_sample() {
        let mut rng = SplitMix64::new(17);
        let net = LayeredNet::init(&[3, 5, 2], true, &mut rng).unwrap();
        let x = Tensor::vector(&[0.2, -0.1, 0.5]).unwrap();
        let (loss, grads) = net.batch_loss_and_grad(&[(&x, 1)]).unwrap();
        let trace = net.forward(&x).unwrap();
        assert_eq!(loss, cross_entropy(trace.logits(), 1).unwrap());
        let single = net.backward(&trace, 1).unwrap();
        assert_eq!(grads.d_weight(0).data(), single.d_weight(0).data());
        assert_eq!(grads.d_input().data(), single.d_input().data());
    }

    #[test]
    fn duplicated_sample_batch_matches_singleton() {
        let mut rng = SplitMix64::new(18);
        let net = LayeredNet::init(&[3, 4, 2], true, &mut rng).unwrap();
        let x = Tensor::vector(&[0.3, 0.4, -0.2]).unwrap();
        let (l1, g1) = net.batch_loss_and_grad(&[(&x, 0)]).unwrap();
        let (l2, g2) = net.batch_loss_and_grad(&[(&x, 0), (&x, 0)]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for idx in 0..net.depth() {
            for (a, b) in g1.d_weight(idx).data().iter().zip(g2.d_weight(idx).data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn batch_grad_is_mean_of_per_sample() {
        let mut rng = SplitMix64::new(19);
        let net = LayeredNet::init(&[3, 4, 2], true, &mut rng).unwrap();
        let x1 = Tensor::vector(&[0.3, 0.4, -0.2]).unwrap();
        let x2 = Tensor::vector(&[-0.6, 0.1, 0.9]).unwrap();
        let (_, batch) = net.batch_loss_and_grad(&[(&x1, 0), (&x2, 1)]).unwrap();
        let g1 = net.backward(&net.forward(&x1).unwrap(), 0).unwrap();
        let g2 = net.backward(&net.forward(&x2).unwrap(), 1).unwrap();
        for idx in 0..net.depth() {
            for ((m, a), b) in batch
                .d_weight(idx)
                .data()
                .iter()
                .zip(g1.d_weight(idx).data())
                .zip(g2.d_weight(idx).data())
            {
                assert!((m - 0.5 * (a + b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut rng = SplitMix64::new(20);
        let net = LayeredNet::init(&[3, 2], false, &mut rng).unwrap();
        assert!(matches!(
            net.batch_loss_and_grad(&[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn perturbed_copy_multiplicative_ones_is_identity() {
        let mut rng = SplitMix64::new(30);
        let net = LayeredNet::init(&[3, 4, 2], true, &mut rng).unwrap();
        let ones = perturb::sample_mwp(&net, 0.0, &mut SplitMix64::new(0)).unwrap();
        let copy = net.perturbed_copy(&ones).unwrap();
        assert_eq!(copy, net);
    }

    #[test]
    fn perturbed_copy_additive_zeros_is_identity() {
        let mut rng = SplitMix64::new(31);
        let net = LayeredNet::init(&[3, 4, 2], true, &mut rng).unwrap();
        let zeros = perturb::sample_awp(&net, 0.0, &mut SplitMix64::new(0)).unwrap();
        let copy = net.perturbed_copy(&zeros).unwrap();
        for idx in 0..net.depth() {
            for (a, b) in copy
                .layer(idx)
                .weight()
                .data()
                .iter()
                .zip(net.layer(idx).weight().data())
            {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn perturbed_copy_hand_case() {
        let net = single_layer(Tensor::matrix(1, 2, vec![2.0, 3.0]).unwrap(), None);
        let noise = NoiseDraw::new(
            NoiseMode::Multiplicative,
            vec![Tensor::matrix(1, 2, vec![0.5, 2.0]).unwrap()],
            vec![None],
        );
        let copy = net.perturbed_copy(&noise).unwrap();
        assert_eq!(copy.layer(0).weight().data(), &[1.0, 6.0]);
        // Source untouched.
        assert_eq!(net.layer(0).weight().data(), &[2.0, 3.0]);
    }

    #[test]
    fn perturbed_copy_does_not_alias_source() {
        let mut rng = SplitMix64::new(33);
        let net = LayeredNet::init(&[3, 3, 2], true, &mut rng).unwrap();
        let before = net.clone();
        let noise = perturb::sample_mwp(&net, 0.3, &mut SplitMix64::new(7)).unwrap();
        let mut copy = net.perturbed_copy(&noise).unwrap();
        copy.layer_mut(0).weight_mut().nudge(0, 123.0);
        assert_eq!(net, before);
    }

    #[test]
    fn perturbed_copy_shape_mismatch() {
        let mut rng = SplitMix64::new(34);
        let net = LayeredNet::init(&[3, 4, 2], true, &mut rng).unwrap();
        let other = LayeredNet::init(&[3, 5, 2], true, &mut rng).unwrap();
        let noise = perturb::sample_mwp(&other, 0.1, &mut SplitMix64::new(1)).unwrap();
        assert!(matches!(
            net.perturbed_copy(&noise),
            Err(Error::Dimension(_))
        ));
    }
}
