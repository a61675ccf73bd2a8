//! Weight-perturbation sampling and adversarial directions.
//!
//! Random draws (multiplicative Gaussian, additive Gaussian, structured
//! Bernoulli dropout masks) are pure functions of (net shape, parameters,
//! seed). The SAM and ASAM directions are deterministic functions of the
//! current gradient; both use one global L2 norm over all parameters jointly.

use crate::error::{Error, Result};
use crate::network::{GradientSet, LayeredNet};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Which weight-perturbation family a training method draws from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationSpec {
    /// Entries ~ N(1, sigma^2), applied as `w o xi`.
    MultiplicativeGaussian { sigma: f64 },
    /// Entries ~ N(0, sigma^2), applied as `w + xi`.
    AdditiveGaussian { sigma: f64 },
    /// Worst-case additive step of size rho along the gradient.
    Sam { rho: f64 },
    /// Worst-case |w|-scaled step of size rho.
    Asam { rho: f64 },
    /// Per-output-unit inverted dropout mask with drop probability p.
    BernoulliDropout { p: f64 },
    None,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PerturbationSpec::MultiplicativeGaussian { sigma }
            | PerturbationSpec::AdditiveGaussian { sigma } => {
                if sigma < 0.0 || !sigma.is_finite() {
                    return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
                }
            }
            PerturbationSpec::Sam { rho } | PerturbationSpec::Asam { rho } => {
                if rho < 0.0 || !rho.is_finite() {
                    return Err(Error::InvalidInput(format!("rho must be >= 0, got {rho}")));
                }
            }
            PerturbationSpec::BernoulliDropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::InvalidInput(format!(
                        "drop probability must be in [0, 1), got {p}"
                    )));
                }
            }
            PerturbationSpec::None => {}
        }
        Ok(())
    }
}

/// How a [`NoiseDraw`] combines with the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Multiplicative,
    Additive,
}

/// Per-layer noise tensors mirroring a net's weights and biases.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    mode: NoiseMode,
    weights: Vec<Tensor>,
    biases: Vec<Option<Tensor>>,
}

impl NoiseDraw {
    pub fn new(mode: NoiseMode, weights: Vec<Tensor>, biases: Vec<Option<Tensor>>) -> Self {
        debug_assert_eq!(weights.len(), biases.len());
        Self {
            mode,
            weights,
            biases,
        }
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn layer(&self, idx: usize) -> (&Tensor, Option<&Tensor>) {
        (&self.weights[idx], self.biases[idx].as_ref())
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// L2 norm over all entries (weights and biases jointly).
    pub fn global_l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in &self.weights {
            acc += t.sq_sum();
        }
        for t in self.biases.iter().flatten() {
            acc += t.sq_sum();
        }
        acc.sqrt()
    }

    pub(crate) fn check_shape(&self, net: &LayeredNet) -> Result<()> {
        if self.depth() != net.depth() {
            return Err(Error::Dimension(format!(
                "noise draw has {} layers, net has {}",
                self.depth(),
                net.depth()
            )));
        }
        for idx in 0..net.depth() {
            let layer = net.layer(idx);
            if self.weights[idx].shape() != layer.weight().shape() {
                return Err(Error::Dimension(format!(
                    "noise weight shape {:?} does not mirror layer {idx} shape {:?}",
                    self.weights[idx].shape(),
                    layer.weight().shape()
                )));
            }
            match (&self.biases[idx], layer.bias()) {
                (Some(n), Some(b)) if n.shape() != b.shape() => {
                    return Err(Error::Dimension(format!(
                        "noise bias shape {:?} does not mirror layer {idx} bias {:?}",
                        n.shape(),
                        b.shape()
                    )));
                }
                (Some(_), None) => {
                    return Err(Error::Dimension(format!(
                        "noise has a bias tensor for bias-free layer {idx}"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn sample_gaussian_draw(
    net: &LayeredNet,
    mean: f64,
    sigma: f64,
    mode: NoiseMode,
    rng: &mut SplitMix64,
) -> Result<NoiseDraw> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut weights = Vec::with_capacity(net.depth());
    let mut biases = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let w: Vec<f64> = (0..layer.weight().len())
            .map(|_| mean + sigma * rng.normal())
            .collect();
        weights.push(Tensor::from_vec(layer.weight().shape().to_vec(), w)?);
        biases.push(match layer.bias() {
            Some(b) => {
                let v: Vec<f64> = (0..b.len()).map(|_| mean + sigma * rng.normal()).collect();
                Some(Tensor::vector(&v)?)
            }
            None => None,
        });
    }
    Ok(NoiseDraw::new(mode, weights, biases))
}

/// Multiplicative Gaussian draw with entries ~ N(1, sigma^2).
pub fn sample_mwp(net: &LayeredNet, sigma: f64, rng: &mut SplitMix64) -> Result<NoiseDraw> {
    sample_gaussian_draw(net, 1.0, sigma, NoiseMode::Multiplicative, rng)
}

/// Additive Gaussian draw with entries ~ N(0, sigma^2).
pub fn sample_awp(net: &LayeredNet, sigma: f64, rng: &mut SplitMix64) -> Result<NoiseDraw> {
    sample_gaussian_draw(net, 0.0, sigma, NoiseMode::Additive, rng)
}

/// Structured inverted-dropout mask: one Bernoulli(1-p) keep-draw per output
/// unit, scaled by 1/(1-p) and broadcast across that unit's incoming row and
/// its bias entry. Multiplicative mode.
pub fn sample_dropout_mask(net: &LayeredNet, p: f64, rng: &mut SplitMix64) -> Result<NoiseDraw> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "drop probability must be in [0, 1), got {p}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - p);
    let mut weights = Vec::with_capacity(net.depth());
    let mut biases = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let (out, inp) = (layer.out_dim(), layer.in_dim());
        let mut w = vec![0.0; out * inp];
        let mut unit_factors = Vec::with_capacity(out);
        for i in 0..out {
            let factor = if rng.bernoulli(p) { 0.0 } else { keep_scale };
            unit_factors.push(factor);
            for j in 0..inp {
                w[i * inp + j] = factor;
            }
        }
        weights.push(Tensor::matrix(out, inp, w)?);
        biases.push(match layer.bias() {
            Some(_) => Some(Tensor::vector(&unit_factors)?),
            None => None,
        });
    }
    Ok(NoiseDraw::new(NoiseMode::Multiplicative, weights, biases))
}

/// SAM ascent direction: `xi = rho * g / ||g||_2` with one L2 norm over all
/// parameter gradients jointly. Additive mode; `||xi||_2 == rho`.
pub fn sam_direction(grads: &GradientSet, rho: f64) -> Result<NoiseDraw> {
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("rho must be >= 0, got {rho}")));
    }
    let norm = grads.param_sq_sum().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateDirection(
            "gradient is identically zero; SAM direction undefined".into(),
        ));
    }
    let factor = rho / norm;
    let mut weights = Vec::with_capacity(grads.depth());
    let mut biases = Vec::with_capacity(grads.depth());
    for idx in 0..grads.depth() {
        weights.push(grads.d_weight(idx).scale(factor)?);
        biases.push(match grads.d_bias(idx) {
            Some(b) => Some(b.scale(factor)?),
            None => None,
        });
    }
    Ok(NoiseDraw::new(NoiseMode::Additive, weights, biases))
}

/// ASAM ascent direction: `xi_hat = rho * (w o w o g) / ||w o g||_2`, the
/// maximizer of the first-order expansion under the |w|-scaled constraint.
/// Additive mode; on nonzero-w coordinates `||xi_hat / |w|||_2 == rho`.
pub fn asam_direction(net: &LayeredNet, grads: &GradientSet, rho: f64) -> Result<NoiseDraw> {
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("rho must be >= 0, got {rho}")));
    }
    if net.depth() != grads.depth() {
        return Err(Error::Dimension(format!(
            "net depth {} does not match gradient depth {}",
            net.depth(),
            grads.depth()
        )));
    }
    let mut norm_sq = 0.0;
    for idx in 0..net.depth() {
        let wg = net.layer(idx).weight().hadamard(grads.d_weight(idx))?;
        norm_sq += wg.sq_sum();
        if let (Some(b), Some(db)) = (net.layer(idx).bias(), grads.d_bias(idx)) {
            norm_sq += b.hadamard(db)?.sq_sum();
        }
    }
    let norm = norm_sq.sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateDirection(
            "w o g is identically zero; ASAM direction undefined".into(),
        ));
    }
    let factor = rho / norm;
    let mut weights = Vec::with_capacity(net.depth());
    let mut biases = Vec::with_capacity(net.depth());
    for idx in 0..net.depth() {
        let w = net.layer(idx).weight();
        let w2g = w.hadamard(w)?.hadamard(grads.d_weight(idx))?;
        weights.push(w2g.scale(factor)?);
        biases.push(match (net.layer(idx).bias(), grads.d_bias(idx)) {
            (Some(b), Some(db)) => Some(b.hadamard(b)?.hadamard(db)?.scale(factor)?),
            _ => None,
        });
    }
    Ok(NoiseDraw::new(NoiseMode::Additive, weights, biases))
}
