//! Seeded minibatch training of the convolutional predictor.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, ConvDenoiser};
use crate::diffusion::{forward_sample, LossNorm};
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};
use crate::schedule::{sample_gamma, NoiseSchedule};
use crate::volume::{Axis, Plane, Slice2D, Volume};

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrDecay {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last iteration.
    Cosine,
}

impl LrDecay {
    pub fn rate(self, base: f64, it: usize, iterations: usize) -> f64 {
        match self {
            LrDecay::Constant => base,
            LrDecay::Cosine => {
                let p = it as f64 / iterations.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

/// Optimisation settings. Defaults are the full-scale values; see
/// [`TrainConfig::desk`] for the small configuration used in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub iterations: usize,
    pub loss: LossNorm,
    pub lr_decay: LrDecay,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            patch_size: 128,
            iterations: 300_000,
            loss: LossNorm::L1,
            lr_decay: LrDecay::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Small-budget settings: 32x32 patches, 5000 iterations and a
    /// higher rate.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            patch_size: 32,
            iterations: 5000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite())
            || self.batch_size == 0
            || self.patch_size == 0
        {
            return Err(Error::InvalidParameter(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// A co-registered low/high resolution volume pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub lr: Volume,
    pub hr: Volume,
}

impl TrainingPair {
    pub fn new(lr: Volume, hr: Volume) -> Result<Self> {
        lr.same_dims(&hr)?;
        Ok(TrainingPair { lr, hr })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of every iteration.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over iterations `range`.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// One training example: condition, clean target, noise level and noise.
struct Example {
    x: Slice2D,
    y0: Slice2D,
    gamma: f64,
    eps: Slice2D,
}

fn axes_for(plane: Plane) -> &'static [Axis] {
    match plane {
        Plane::InPlane => &[Axis::Axial],
        Plane::ThroughPlane => &[Axis::Coronal, Axis::Sagittal],
    }
}

fn check_patches(pairs: &[TrainingPair], plane: Plane, patch: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for p in pairs {
        for &axis in axes_for(plane) {
            let (w, h) = p.hr.slice_shape(axis);
            if patch > w || patch > h {
                return Err(Error::InvalidParameter(format!(
                    "patch {patch} does not fit {axis} slices of {w}x{h}"
                )));
            }
        }
    }
    Ok(())
}

fn draw_example(
    pairs: &[TrainingPair],
    plane: Plane,
    patch: usize,
    schedule: &NoiseSchedule,
    stream: RngStream,
) -> Result<Example> {
    let mut rng = stream.rng();
    let pair = &pairs[rng.random_range(0..pairs.len())];
    let axes = axes_for(plane);
    let axis = axes[rng.random_range(0..axes.len())];
    let (w, h) = pair.hr.slice_shape(axis);
    let k = rng.random_range(0..pair.hr.slice_count(axis));
    let u0 = rng.random_range(0..=w - patch);
    let v0 = rng.random_range(0..=h - patch);
    let (gamma, _) = sample_gamma(schedule, &mut rng);
    let x = pair.lr.patch(axis, k, u0, v0, patch, patch)?;
    let y0 = pair.hr.patch(axis, k, u0, v0, patch, patch)?;
    let eps = y0.with_data(stream.derive(1).normals(patch * patch));
    Ok(Example { x, y0, gamma, eps })
}

fn example_loss(net: &ConvDenoiser, ex: &Example, loss: LossNorm) -> Result<(f64, Vec<f64>)> {
    let y_t = forward_sample(&ex.y0, ex.gamma, &ex.eps)?;
    net.loss_and_gradient(&ex.x, &y_t, ex.gamma, &ex.eps, loss)
}

/// Train `net` on random patches of its plane's slices.
///
/// Every iteration draws `batch_size` examples from sub-streams addressed
/// by `(seed, iteration, element)`, so runs with equal seeds reproduce
/// the same loss curve.
pub fn train(
    net: &mut ConvDenoiser,
    pairs: &[TrainingPair],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let plane = net.trained_plane();
    check_patches(pairs, plane, cfg.patch_size)?;
    let root = RngStream::new(cfg.seed).derive(tags::TRAIN);
    let n = net.parameter_count();
    let mut adam = Adam::new(n, cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let it_stream = root.derive(it as u64);
        let results: Vec<(f64, Vec<f64>)> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| {
                let ex = draw_example(pairs, plane, cfg.patch_size, schedule, it_stream.derive(b as u64))?;
                example_loss(net, &ex, cfg.loss)
            })
            .collect::<Result<_>>()?;
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: it, loss });
        }
        adam.lr = cfg.lr_decay.rate(cfg.learning_rate, it, cfg.iterations);
        adam.begin_step();
        net.update_parameters(|i, p| adam.update(i, p, grad[i] * scale));
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

/// Mean loss of `net` over `examples` fresh random patches.
pub fn validation_loss(
    net: &ConvDenoiser,
    pairs: &[TrainingPair],
    schedule: &NoiseSchedule,
    patch: usize,
    examples: usize,
    loss: LossNorm,
    seed: u64,
) -> Result<f64> {
    let plane = net.trained_plane();
    check_patches(pairs, plane, patch)?;
    let root = RngStream::new(seed).derive(tags::TRAIN ^ 0xFFFF);
    let total: f64 = (0..examples)
        .into_par_iter()
        .map(|i| {
            let ex = draw_example(pairs, plane, patch, schedule, root.derive(i as u64))?;
            let y_t = forward_sample(&ex.y0, ex.gamma, &ex.eps)?;
            let pred = net.forward(&ex.x, &y_t, ex.gamma)?;
            let s: f64 = pred
                .data
                .iter()
                .zip(&ex.eps.data)
                .map(|(&p, &e)| loss.value_and_slope(p - e).0)
                .sum();
            Ok(s / pred.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / examples.max(1) as f64)
}
