//! Input corruption generators with 5 severity levels, an empirical
//! corruption-bound estimator, and FGSM adversarial examples.
//!
//! Corruptions operate on normalized values in [0, 1] and clip their output
//! back into that range. Stochastic kinds are pure functions of
//! (spec, input, seed). The severity tables are fixed in-repo, strictly
//! monotone desk-scale analogs of the usual image-corruption benchmarks.

use crate::error::{Error, Result};
use crate::network::LayeredNet;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Corruption family. `None` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    Brightness,
    Contrast,
    Pixelate,
    GaussianBlur,
    None,
}

impl CorruptionKind {
    /// All non-identity kinds, in canonical report order.
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
        CorruptionKind::GaussianBlur,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::GaussianBlur => "gaussian_blur",
            CorruptionKind::None => "none",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gaussian_noise" => Some(CorruptionKind::GaussianNoise),
            "shot_noise" => Some(CorruptionKind::ShotNoise),
            "impulse_noise" => Some(CorruptionKind::ImpulseNoise),
            "brightness" => Some(CorruptionKind::Brightness),
            "contrast" => Some(CorruptionKind::Contrast),
            "pixelate" => Some(CorruptionKind::Pixelate),
            "gaussian_blur" => Some(CorruptionKind::GaussianBlur),
            "none" => Some(CorruptionKind::None),
            _ => None,
        }
    }

    /// True when `apply` consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            CorruptionKind::GaussianNoise | CorruptionKind::ShotNoise | CorruptionKind::ImpulseNoise
        )
    }
}

// Severity tables, index 0 = severity 1.
const GAUSSIAN_SIGMA: [f64; 5] = [0.04, 0.08, 0.18, 0.26, 0.38];
const SHOT_SCALE: [f64; 5] = [60.0, 25.0, 12.0, 5.0, 3.0];
const IMPULSE_FRACTION: [f64; 5] = [0.01, 0.02, 0.05, 0.08, 0.14];
const BRIGHTNESS_SHIFT: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];
const CONTRAST_SCALE: [f64; 5] = [0.75, 0.6, 0.45, 0.3, 0.15];
const PIXELATE_BLOCK: [usize; 5] = [2, 3, 4, 5, 7];
const BLUR_SIGMA: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

/// A corruption kind at a severity level in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    kind: CorruptionKind,
    severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::InvalidInput(format!(
                "severity must be in 1..=5, got {severity}"
            )));
        }
        Ok(Self { kind, severity })
    }

    /// The identity corruption.
    pub fn none() -> Self {
        Self {
            kind: CorruptionKind::None,
            severity: 1,
        }
    }

    pub fn kind(&self) -> CorruptionKind {
        self.kind
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    fn idx(&self) -> usize {
        (self.severity - 1) as usize
    }

    /// Derived intensity parameter; strictly increases with severity for
    /// every kind (for contrast this is the contrast LOSS 1 - scale, for shot
    /// noise the reciprocal photon scale).
    pub fn strength_param(&self) -> f64 {
        match self.kind {
            CorruptionKind::GaussianNoise => GAUSSIAN_SIGMA[self.idx()],
            CorruptionKind::ShotNoise => 1.0 / SHOT_SCALE[self.idx()],
            CorruptionKind::ImpulseNoise => IMPULSE_FRACTION[self.idx()],
            CorruptionKind::Brightness => BRIGHTNESS_SHIFT[self.idx()],
            CorruptionKind::Contrast => 1.0 - CONTRAST_SCALE[self.idx()],
            CorruptionKind::Pixelate => PIXELATE_BLOCK[self.idx()] as f64,
            CorruptionKind::GaussianBlur => BLUR_SIGMA[self.idx()],
            CorruptionKind::None => 0.0,
        }
    }
}

fn validate_unit_range(x: &Tensor) -> Result<()> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "corruption input must lie in [0, 1], found {v}"
        )));
    }
    Ok(())
}

/// Image geometry inferred from a flattened input: either one square channel
/// or three (CIFAR-style channel-major layout).
fn infer_square(len: usize) -> Result<(usize, usize)> {
    let isqrt = |n: usize| {
        let s = (n as f64).sqrt().round() as usize;
        (s * s == n).then_some(s)
    };
    if let Some(side) = isqrt(len) {
        return Ok((1, side));
    }
    if len % 3 == 0 {
        if let Some(side) = isqrt(len / 3) {
            return Ok((3, side));
        }
    }
    Err(Error::InvalidInput(format!(
        "pixel count {len} is not a square (or 3 x square); 2-D corruptions need square channels"
    )))
}

fn clip_unit(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Box-average downsample by `block`, then nearest-neighbor upsample.
fn pixelate_channel(pixels: &mut [f64], side: usize, block: usize) {
    let mut out = vec![0.0; side * side];
    let mut by = 0;
    while by < side {
        let bh = block.min(side - by);
        let mut bx = 0;
        while bx < side {
            let bw = block.min(side - bx);
            let mut sum = 0.0;
            for dy in 0..bh {
                for dx in 0..bw {
                    sum += pixels[(by + dy) * side + bx + dx];
                }
            }
            let avg = sum / (bh * bw) as f64;
            for dy in 0..bh {
                for dx in 0..bw {
                    out[(by + dy) * side + bx + dx] = avg;
                }
            }
            bx += block;
        }
        by += block;
    }
    pixels.copy_from_slice(&out);
}

/// Separable Gaussian blur with replicate padding; kernel truncated at 3 sigma.
fn blur_channel(pixels: &mut [f64], side: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let w = (-(i as f64) * (i as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in kernel.iter_mut() {
        *w /= sum;
    }

    let sample = |buf: &[f64], y: i64, x: i64| {
        let yy = y.clamp(0, side as i64 - 1) as usize;
        let xx = x.clamp(0, side as i64 - 1) as usize;
        buf[yy * side + xx]
    };
    // Horizontal pass.
    let mut tmp = vec![0.0; side * side];
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * sample(pixels, y, x + k as i64 - radius);
            }
            tmp[y as usize * side + x as usize] = acc;
        }
    }
    // Vertical pass.
    for y in 0..side as i64 {
        for x in 0..side as i64 {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * sample(&tmp, y + k as i64 - radius, x);
            }
            pixels[y as usize * side + x as usize] = acc;
        }
    }
}

/// Corrupted copy of `x` before clipping back to [0, 1]. Shared by `apply`
/// and the moment tests on unclipped residuals.
pub(crate) fn apply_unclipped(
    spec: &CorruptionSpec,
    x: &Tensor,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    validate_unit_range(x)?;
    let mut out = x.data().to_vec();
    match spec.kind {
        CorruptionKind::None => {}
        CorruptionKind::GaussianNoise => {
            let sigma = GAUSSIAN_SIGMA[spec.idx()];
            for v in out.iter_mut() {
                *v += sigma * rng.normal();
            }
        }
        CorruptionKind::ShotNoise => {
            let scale = SHOT_SCALE[spec.idx()];
            for v in out.iter_mut() {
                *v = rng.poisson(*v * scale) as f64 / scale;
            }
        }
        CorruptionKind::ImpulseNoise => {
            let fraction = IMPULSE_FRACTION[spec.idx()];
            for v in out.iter_mut() {
                if rng.bernoulli(fraction) {
                    *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
        CorruptionKind::Brightness => {
            let shift = BRIGHTNESS_SHIFT[spec.idx()];
            for v in out.iter_mut() {
                *v += shift;
            }
        }
        CorruptionKind::Contrast => {
            let scale = CONTRAST_SCALE[spec.idx()];
            let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
            for v in out.iter_mut() {
                *v = mean + scale * (*v - mean);
            }
        }
        CorruptionKind::Pixelate => {
            let (channels, side) = infer_square(out.len())?;
            let block = PIXELATE_BLOCK[spec.idx()];
            for c in 0..channels {
                pixelate_channel(&mut out[c * side * side..(c + 1) * side * side], side, block);
            }
        }
        CorruptionKind::GaussianBlur => {
            let (channels, side) = infer_square(out.len())?;
            let sigma = BLUR_SIGMA[spec.idx()];
            for c in 0..channels {
                blur_channel(&mut out[c * side * side..(c + 1) * side * side], side, sigma);
            }
        }
    }
    Ok(out)
}

/// Corrupted copy of `x`, clipped to [0, 1]. `x` itself is untouched.
pub fn apply(spec: &CorruptionSpec, x: &Tensor, rng: &mut SplitMix64) -> Result<Tensor> {
    if spec.kind == CorruptionKind::None {
        return Ok(x.clone());
    }
    let mut out = apply_unclipped(spec, x, rng)?;
    clip_unit(&mut out);
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// Empirical witness for the bounded-corruption assumption: the maximum of
/// `||g(x) - x||_2` over the dataset, taking 10 noise draws per sample for
/// stochastic kinds.
pub fn estimate_bound(spec: &CorruptionSpec, inputs: &[Tensor], seed: u64) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput(
            "estimate_bound needs a non-empty dataset".into(),
        ));
    }
    let draws = if spec.kind.is_stochastic() { 10 } else { 1 };
    let mut max_shift = 0.0f64;
    for (sample_idx, x) in inputs.iter().enumerate() {
        for draw in 0..draws {
            let mut rng = SplitMix64::new(crate::rng::derive_stream(
                seed,
                &[sample_idx as u64, draw as u64],
            ));
            let corrupted = apply(spec, x, &mut rng)?;
            max_shift = max_shift.max(corrupted.sub(x)?.frobenius_norm());
        }
    }
    Ok(max_shift)
}

/// Fast Gradient Sign Method: `x + eps * sign(grad_x loss)`, clipped to [0, 1].
/// Coordinates with exactly zero gradient are left unchanged.
pub fn fgsm(net: &LayeredNet, x: &Tensor, label: usize, epsilon: f64) -> Result<Tensor> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidInput(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    let trace = net.forward(x)?;
    let grads = net.backward(&trace, label)?;
    let mut out = x.data().to_vec();
    for (v, g) in out.iter_mut().zip(grads.d_input().data()) {
        *v += epsilon * g.signum() * if *g == 0.0 { 0.0 } else { 1.0 };
    }
    clip_unit(&mut out);
    Tensor::from_vec(x.shape().to_vec(), out)
}
