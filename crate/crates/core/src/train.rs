//! Training loops: plain SGD with Nesterov momentum, DAMP, DAAP, structured
//! dropout, corruption-augmented SGD, SAM, and ASAM, plus learning-rate
//! schedules.
//!
//! Every step is a pure function of (net, optimizer state, batch, derived
//! seeds), so runs are bit-reproducible for a fixed root seed and data order.
//! Sub-batch gradients may be evaluated on parallel workers; they are summed
//! in sub-batch index order, which makes the result independent of worker
//! scheduling and thread count.

use rayon::prelude::*;

use crate::corrupt::{self, CorruptionKind, CorruptionSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::network::{GradientSet, LayeredNet};
use crate::perturb::{self, NoiseDraw, PerturbationSpec};
use crate::rng::{derive_stream, SplitMix64};
use crate::tensor::Tensor;

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_HALF: u64 = 4;
const TAG_CORRUPT: u64 = 5;

/// Stream seed for the noise draw of sub-batch `m` at global step `step`.
/// Exposed so externally composed sub-batch gradients can reproduce a step.
pub fn noise_stream_seed(root_seed: u64, step: u64, m: u64) -> u64 {
    derive_stream(root_seed, &[TAG_NOISE, step, m])
}

/// Stream seed for the corrupted-half selection at global step `step`.
pub fn half_selection_seed(root_seed: u64, step: u64) -> u64 {
    derive_stream(root_seed, &[TAG_HALF, step])
}

/// Stream seed for the training-time corruption of the sample at batch
/// position `pos` at global step `step`.
pub fn corruption_stream_seed(root_seed: u64, step: u64, pos: u64) -> u64 {
    derive_stream(root_seed, &[TAG_CORRUPT, step, pos])
}

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sgd,
    Dropout,
    Damp,
    Daap,
    CorruptionAug,
    Sam,
    Asam,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sgd,
        Method::Dropout,
        Method::Damp,
        Method::Daap,
        Method::CorruptionAug,
        Method::Sam,
        Method::Asam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Dropout => "dropout",
            Method::Damp => "damp",
            Method::Daap => "daap",
            Method::CorruptionAug => "corruption_aug",
            Method::Sam => "sam",
            Method::Asam => "asam",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Learning-rate schedule over a run of `total` epochs; positions are
/// fractional epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Constant {
        lr: f64,
    },
    /// Hold `initial`, anneal linearly to `final_lr` between the two
    /// breakpoints, hold `final_lr` after.
    PiecewiseLinear {
        initial: f64,
        final_lr: f64,
        anneal_start: f64,
        anneal_end: f64,
    },
    /// Linear warmup from `start` to `peak`, then cosine decay to `end`.
    WarmLinearCosine {
        start: f64,
        peak: f64,
        end: f64,
        warmup: f64,
    },
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, what: &str| {
            if v < 0.0 || !v.is_finite() {
                Err(Error::InvalidInput(format!("{what} must be >= 0, got {v}")))
            } else {
                Ok(())
            }
        };
        match *self {
            ScheduleSpec::Constant { lr } => nonneg(lr, "lr"),
            ScheduleSpec::PiecewiseLinear {
                initial,
                final_lr,
                anneal_start,
                anneal_end,
            } => {
                nonneg(initial, "initial lr")?;
                nonneg(final_lr, "final lr")?;
                if !(anneal_start >= 0.0 && anneal_end > anneal_start) {
                    return Err(Error::InvalidInput(format!(
                        "anneal window [{anneal_start}, {anneal_end}) is not increasing"
                    )));
                }
                Ok(())
            }
            ScheduleSpec::WarmLinearCosine {
                start,
                peak,
                end,
                warmup,
            } => {
                nonneg(start, "start lr")?;
                nonneg(peak, "peak lr")?;
                nonneg(end, "end lr")?;
                nonneg(warmup, "warmup length")
            }
        }
    }
}

/// Learning rate at fractional-epoch position `t` of a `total`-epoch run.
/// Piecewise pieces meet continuously at their breakpoints.
pub fn lr_at(schedule: &ScheduleSpec, t: f64, total: f64) -> Result<f64> {
    if !(0.0..).contains(&t) || t >= total {
        return Err(Error::InvalidInput(format!(
            "schedule position {t} outside [0, {total})"
        )));
    }
    schedule.validate()?;
    Ok(match *schedule {
        ScheduleSpec::Constant { lr } => lr,
        ScheduleSpec::PiecewiseLinear {
            initial,
            final_lr,
            anneal_start,
            anneal_end,
        } => {
            if t < anneal_start {
                initial
            } else if t < anneal_end {
                initial + (final_lr - initial) * (t - anneal_start) / (anneal_end - anneal_start)
            } else {
                final_lr
            }
        }
        ScheduleSpec::WarmLinearCosine {
            start,
            peak,
            end,
            warmup,
        } => {
            if t < warmup {
                start + (peak - start) * t / warmup
            } else {
                let span = (total - warmup).max(f64::MIN_POSITIVE);
                let phase = (t - warmup) / span;
                end + (peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
            }
        }
    })
}

/// Momentum/decay hyperparameters shared by every step kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptHyper {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl OptHyper {
    pub fn plain() -> Self {
        Self {
            momentum: 0.0,
            nesterov: false,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter velocity buffers for momentum.
#[derive(Debug, Clone)]
pub struct OptState {
    vel_weights: Vec<Tensor>,
    vel_biases: Vec<Option<Tensor>>,
}

impl OptState {
    pub fn new(net: &LayeredNet) -> Self {
        Self {
            vel_weights: net
                .layers()
                .iter()
                .map(|l| l.weight().zeros_like())
                .collect(),
            vel_biases: net
                .layers()
                .iter()
                .map(|l| l.bias().map(Tensor::zeros_like))
                .collect(),
        }
    }
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Mean loss at the evaluation point(s) that produced the update gradient.
    pub loss: f64,
    /// Number of full passes over the batch (1, or 2 for SAM/ASAM).
    pub grad_evals: u32,
    /// True when a degenerate SAM/ASAM direction forced a plain SGD step.
    pub degenerate_fallback: bool,
}

/// SGD update with coupled weight decay and optional Nesterov momentum:
///
/// d = g + lambda * w,   v <- beta * v + d,
/// w <- w - eta * (d + beta * v)   (Nesterov)
/// w <- w - eta * v                (plain momentum)
///
/// With beta = 0 both variants reduce to `w - eta * (g + lambda * w)`.
/// The decay term always uses the current (unperturbed) weights.
pub fn sgd_apply(
    net: &mut LayeredNet,
    state: &mut OptState,
    grads: &GradientSet,
    lr: f64,
    hyper: &OptHyper,
) -> Result<()> {
    if grads.depth() != net.depth() {
        return Err(Error::Dimension(format!(
            "gradient depth {} does not match net depth {}",
            grads.depth(),
            net.depth()
        )));
    }
    if hyper.weight_decay < 0.0 {
        return Err(Error::InvalidInput(format!(
            "weight decay must be >= 0, got {}",
            hyper.weight_decay
        )));
    }
    let beta = hyper.momentum;
    for idx in 0..net.depth() {
        // Weights.
        {
            let mut d = grads.d_weight(idx).clone();
            d.axpy_inplace(hyper.weight_decay, net.layer(idx).weight())?;
            let v = &mut state.vel_weights[idx];
            v.scale_inplace(beta)?;
            v.axpy_inplace(1.0, &d)?;
            if hyper.nesterov {
                d.axpy_inplace(beta, v)?;
                net.layer_mut(idx).weight_mut().axpy_inplace(-lr, &d)?;
            } else {
                let vv = v.clone();
                net.layer_mut(idx).weight_mut().axpy_inplace(-lr, &vv)?;
            }
        }
        // Biases (decayed like any other parameter; the proxy objective's
        // penalty runs over all of omega).
        if let Some(db) = grads.d_bias(idx) {
            let bias_now = net
                .layer(idx)
                .bias()
                .ok_or_else(|| {
                    Error::Dimension(format!("gradient has bias for bias-free layer {idx}"))
                })?
                .clone();
            let mut d = db.clone();
            d.axpy_inplace(hyper.weight_decay, &bias_now)?;
            let v = state.vel_biases[idx].as_mut().unwrap();
            v.scale_inplace(beta)?;
            v.axpy_inplace(1.0, &d)?;
            if hyper.nesterov {
                d.axpy_inplace(beta, v)?;
                net.layer_mut(idx).bias_mut().unwrap().axpy_inplace(-lr, &d)?;
            } else {
                let vv = v.clone();
                net.layer_mut(idx)
                    .bias_mut()
                    .unwrap()
                    .axpy_inplace(-lr, &vv)?;
            }
        }
    }
    Ok(())
}

/// One plain SGD step on a batch.
pub fn sgd_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    let (loss, grads) = net.batch_loss_and_grad(batch)?;
    sgd_apply(net, state, &grads, lr, hyper)?;
    Ok(StepStats {
        loss,
        grad_evals: 1,
        degenerate_fallback: false,
    })
}

/// Shared core of DAMP/DAAP/dropout: split the batch into `m_count` disjoint
/// sub-batches, evaluate each sub-batch gradient at an independently
/// perturbed copy of the weights (in parallel), average in index order, and
/// update the unperturbed weights.
fn perturbed_subbatch_step<F>(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    m_count: usize,
    root_seed: u64,
    step: u64,
    sample_noise: F,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats>
where
    F: Fn(&LayeredNet, &mut SplitMix64) -> Result<NoiseDraw> + Sync,
{
    if m_count == 0 {
        return Err(Error::InvalidInput("sub-batch count must be >= 1".into()));
    }
    if batch.is_empty() || batch.len() % m_count != 0 {
        return Err(Error::InvalidInput(format!(
            "batch size {} is not divisible into {m_count} equal sub-batches",
            batch.len()
        )));
    }
    let sub_size = batch.len() / m_count;
    let immutable_net = &*net;
    let results: Vec<(f64, GradientSet)> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let mut rng = SplitMix64::new(noise_stream_seed(root_seed, step, m as u64));
            let draw = sample_noise(immutable_net, &mut rng)?;
            let perturbed = immutable_net.perturbed_copy(&draw)?;
            perturbed.batch_loss_and_grad(&batch[m * sub_size..(m + 1) * sub_size])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut loss = 0.0;
    let mut avg = GradientSet::zeros_like(net);
    for (sub_loss, sub_grads) in &results {
        loss += sub_loss;
        avg.add_assign(sub_grads)?;
    }
    let inv = 1.0 / m_count as f64;
    loss *= inv;
    avg.scale_inplace(inv)?;
    sgd_apply(net, state, &avg, lr, hyper)?;
    Ok(StepStats {
        loss,
        grad_evals: 1,
        degenerate_fallback: false,
    })
}

/// One DAMP step: multiplicative Gaussian noise, one independent draw per
/// sub-batch, gradients averaged over sub-batches.
#[allow(clippy::too_many_arguments)]
pub fn damp_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    sigma: f64,
    m_count: usize,
    root_seed: u64,
    step: u64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    perturbed_subbatch_step(
        net,
        state,
        batch,
        m_count,
        root_seed,
        step,
        |n, rng| perturb::sample_mwp(n, sigma, rng),
        lr,
        hyper,
    )
}

/// One DAAP step: as DAMP with zero-centered additive noise.
#[allow(clippy::too_many_arguments)]
pub fn daap_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    sigma: f64,
    m_count: usize,
    root_seed: u64,
    step: u64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    perturbed_subbatch_step(
        net,
        state,
        batch,
        m_count,
        root_seed,
        step,
        |n, rng| perturb::sample_awp(n, sigma, rng),
        lr,
        hyper,
    )
}

/// One dropout step: a structured Bernoulli mask resampled per batch (one
/// sub-batch; dropout is the structured-noise special case of DAMP).
#[allow(clippy::too_many_arguments)]
pub fn dropout_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    p: f64,
    root_seed: u64,
    step: u64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    perturbed_subbatch_step(
        net,
        state,
        batch,
        1,
        root_seed,
        step,
        |n, rng| perturb::sample_dropout_mask(n, p, rng),
        lr,
        hyper,
    )
}

/// One corruption-augmented step: corrupt a uniformly chosen half of the
/// batch in place (positions keep their order), take one gradient over the
/// union, update.
#[allow(clippy::too_many_arguments)]
pub fn corruption_aug_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    corruption: &CorruptionSpec,
    root_seed: u64,
    step: u64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    if batch.len() % 2 != 0 || batch.is_empty() {
        return Err(Error::InvalidInput(format!(
            "corruption-augmented step needs an even batch, got {}",
            batch.len()
        )));
    }
    if corruption.kind() == CorruptionKind::None {
        return sgd_step(net, state, batch, lr, hyper);
    }
    let mut positions: Vec<usize> = (0..batch.len()).collect();
    SplitMix64::new(half_selection_seed(root_seed, step)).shuffle(&mut positions);
    let corrupted_half: std::collections::HashSet<usize> =
        positions[..batch.len() / 2].iter().copied().collect();

    let mut owned: Vec<(Tensor, usize)> = Vec::with_capacity(batch.len());
    for (pos, (x, label)) in batch.iter().enumerate() {
        if corrupted_half.contains(&pos) {
            let mut rng =
                SplitMix64::new(corruption_stream_seed(root_seed, step, pos as u64));
            owned.push((corrupt::apply(corruption, x, &mut rng)?, *label));
        } else {
            owned.push(((*x).clone(), *label));
        }
    }
    let view: Vec<(&Tensor, usize)> = owned.iter().map(|(x, l)| (x, *l)).collect();
    let (loss, grads) = net.batch_loss_and_grad(&view)?;
    sgd_apply(net, state, &grads, lr, hyper)?;
    Ok(StepStats {
        loss,
        grad_evals: 1,
        degenerate_fallback: false,
    })
}

fn sharpness_step<D>(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    direction: D,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats>
where
    D: Fn(&LayeredNet, &GradientSet) -> Result<NoiseDraw>,
{
    let (loss, first_grads) = net.batch_loss_and_grad(batch)?;
    let draw = match direction(net, &first_grads) {
        Ok(draw) => draw,
        Err(Error::DegenerateDirection(_)) => {
            // Zero (transformed) gradient: fall back to an unperturbed step.
            sgd_apply(net, state, &first_grads, lr, hyper)?;
            return Ok(StepStats {
                loss,
                grad_evals: 1,
                degenerate_fallback: true,
            });
        }
        Err(other) => return Err(other),
    };
    let perturbed = net.perturbed_copy(&draw)?;
    let (_, second_grads) = perturbed.batch_loss_and_grad(batch)?;
    sgd_apply(net, state, &second_grads, lr, hyper)?;
    Ok(StepStats {
        loss,
        grad_evals: 2,
        degenerate_fallback: false,
    })
}

/// One SAM step: ascend rho along the normalized gradient, then descend with
/// the gradient taken at the perturbed point (two evaluations per batch).
pub fn sam_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    rho: f64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    sharpness_step(
        net,
        state,
        batch,
        |_, grads| perturb::sam_direction(grads, rho),
        lr,
        hyper,
    )
}

/// One ASAM step: as SAM with the |w|-scaled adversarial direction.
pub fn asam_step(
    net: &mut LayeredNet,
    state: &mut OptState,
    batch: &[(&Tensor, usize)],
    rho: f64,
    lr: f64,
    hyper: &OptHyper,
) -> Result<StepStats> {
    sharpness_step(
        net,
        state,
        batch,
        |n, grads| perturb::asam_direction(n, grads, rho),
        lr,
        hyper,
    )
}

/// Full experiment description for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub hidden: Vec<usize>,
    pub perturbation: PerturbationSpec,
    /// Training-time corruption; read only by `CorruptionAug`.
    pub train_corruption: CorruptionSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub sub_batches: usize,
    pub schedule: ScheduleSpec,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if self.sub_batches == 0 {
            return Err(Error::InvalidInput("sub-batch count must be >= 1".into()));
        }
        if self.batch_size % self.sub_batches != 0 {
            return Err(Error::InvalidInput(format!(
                "batch size {} is not divisible by sub-batch count {}",
                self.batch_size, self.sub_batches
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.method == Method::CorruptionAug && self.batch_size % 2 != 0 {
            return Err(Error::InvalidInput(
                "corruption-augmented training needs an even batch size".into(),
            ));
        }
        self.schedule.validate()?;
        self.perturbation.validate()?;
        let spec_matches = matches!(
            (self.method, self.perturbation),
            (Method::Sgd, PerturbationSpec::None)
                | (Method::CorruptionAug, PerturbationSpec::None)
                | (Method::Damp, PerturbationSpec::MultiplicativeGaussian { .. })
                | (Method::Daap, PerturbationSpec::AdditiveGaussian { .. })
                | (Method::Dropout, PerturbationSpec::BernoulliDropout { .. })
                | (Method::Sam, PerturbationSpec::Sam { .. })
                | (Method::Asam, PerturbationSpec::Asam { .. })
        );
        if !spec_matches {
            return Err(Error::Consistency(format!(
                "method {:?} does not accept perturbation {:?}",
                self.method, self.perturbation
            )));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: u64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    /// Mean step loss over the epoch.
    pub train_loss: f64,
    /// Validation predictive error after the epoch.
    pub val_error: f64,
    /// Cumulative gradient evaluations (full batch passes).
    pub grad_evals: u64,
}

/// Writes the training log as `epoch,step,lr,train_loss,val_error,grad_evals`.
pub fn write_training_log(records: &[EpochRecord], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,step,lr,train_loss,val_error,grad_evals")?;
    for r in records {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.epoch, r.step, r.lr, r.train_loss, r.val_error, r.grad_evals
        )?;
    }
    Ok(())
}

/// Runs the configured method for `epochs` epochs with seeded per-epoch
/// reshuffling. Only full batches are used (a trailing partial batch is
/// skipped; reshuffling cycles all samples across epochs). Returns the final
/// net and the per-epoch log.
pub fn fit(
    config: &RunConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(LayeredNet, Vec<EpochRecord>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    if train.len() < config.batch_size {
        return Err(Error::InvalidInput(format!(
            "training set ({} samples) is smaller than one batch ({})",
            train.len(),
            config.batch_size
        )));
    }

    let mut widths = vec![train.input_dim()];
    widths.extend_from_slice(&config.hidden);
    widths.push(train.num_classes);
    let mut init_rng = SplitMix64::new(derive_stream(config.seed, &[TAG_INIT]));
    let mut net = LayeredNet::init(&widths, true, &mut init_rng)?;
    let mut state = OptState::new(&net);
    let hyper = OptHyper {
        momentum: config.momentum,
        nesterov: config.nesterov,
        weight_decay: config.weight_decay,
    };

    let steps_per_epoch = train.len() / config.batch_size;
    let mut log = Vec::with_capacity(config.epochs);
    let mut global_step = 0u64;
    let mut total_grad_evals = 0u64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(derive_stream(config.seed, &[TAG_SHUFFLE, epoch as u64]))
            .shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_first_lr = 0.0;
        for batch_idx in 0..steps_per_epoch {
            let t = epoch as f64 + batch_idx as f64 / steps_per_epoch as f64;
            let lr = lr_at(&config.schedule, t, config.epochs as f64)?;
            if batch_idx == 0 {
                epoch_first_lr = lr;
            }
            let indices = &order[batch_idx * config.batch_size..(batch_idx + 1) * config.batch_size];
            let batch = train.batch(indices);
            let stats = match (config.method, config.perturbation) {
                (Method::Sgd, _) => sgd_step(&mut net, &mut state, &batch, lr, &hyper)?,
                (Method::Damp, PerturbationSpec::MultiplicativeGaussian { sigma }) => damp_step(
                    &mut net,
                    &mut state,
                    &batch,
                    sigma,
                    config.sub_batches,
                    config.seed,
                    global_step,
                    lr,
                    &hyper,
                )?,
                (Method::Daap, PerturbationSpec::AdditiveGaussian { sigma }) => daap_step(
                    &mut net,
                    &mut state,
                    &batch,
                    sigma,
                    config.sub_batches,
                    config.seed,
                    global_step,
                    lr,
                    &hyper,
                )?,
                (Method::Dropout, PerturbationSpec::BernoulliDropout { p }) => dropout_step(
                    &mut net,
                    &mut state,
                    &batch,
                    p,
                    config.seed,
                    global_step,
                    lr,
                    &hyper,
                )?,
                (Method::CorruptionAug, _) => corruption_aug_step(
                    &mut net,
                    &mut state,
                    &batch,
                    &config.train_corruption,
                    config.seed,
                    global_step,
                    lr,
                    &hyper,
                )?,
                (Method::Sam, PerturbationSpec::Sam { rho }) => {
                    sam_step(&mut net, &mut state, &batch, rho, lr, &hyper)?
                }
                (Method::Asam, PerturbationSpec::Asam { rho }) => {
                    asam_step(&mut net, &mut state, &batch, rho, lr, &hyper)?
                }
                (method, spec) => {
                    return Err(Error::Consistency(format!(
                        "method {method:?} does not accept perturbation {spec:?}"
                    )))
                }
            };
            epoch_loss += stats.loss;
            total_grad_evals += stats.grad_evals as u64;
            global_step += 1;
        }

        let val_error = metrics::predictive_error(&net, &val.inputs, &val.labels)?;
        log.push(EpochRecord {
            epoch,
            step: global_step,
            lr: epoch_first_lr,
            train_loss: epoch_loss / steps_per_epoch as f64,
            val_error,
            grad_evals: total_grad_evals,
        });
    }
    Ok((net, log))
}
