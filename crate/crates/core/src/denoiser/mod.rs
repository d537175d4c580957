//! Noise predictors `f(x, y_t, gamma) -> eps_hat`.

mod adam;
mod conv;
mod ops;
mod train;

pub use adam::Adam;
pub use conv::{ConvDenoiser, GammaEmbedding, LayerSpec, Parameterization};
pub use train::{train, validation_loss, LrDecay, TrainConfig, TrainReport, TrainingPair};

use crate::error::{Error, Result};
use crate::volume::{Plane, Slice2D};

/// A noise predictor for 2D slices.
pub trait Denoiser: Send + Sync {
    /// Predict the unit noise contained in `y_t` at level `gamma`, given
    /// the low-resolution condition `x`.
    fn predict(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Result<Slice2D>;

    /// Slice family the predictor was trained for; `None` if plane-agnostic.
    fn plane(&self) -> Option<Plane>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Result<Slice2D> {
        (**self).predict(x, y_t, gamma)
    }

    fn plane(&self) -> Option<Plane> {
        (**self).plane()
    }
}

/// Exact Bayes noise predictor for a voxelwise prior `N(m, s^2)`.
///
/// The condition is ignored. Plugged into the reverse chain it samples the
/// prior itself, which makes it the reference for sampler correctness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    pub mean: f64,
    pub std: f64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior N({mean}, {std}^2) is not valid"
            )));
        }
        Ok(AnalyticGaussianDenoiser { mean, std })
    }

    /// `E[y0 | y_t]` under the prior.
    #[inline]
    pub fn posterior_mean(&self, y_t: f64, gamma: f64) -> f64 {
        let s2 = self.std * self.std;
        (gamma.sqrt() * s2 * y_t + (1.0 - gamma) * self.mean) / (gamma * s2 + 1.0 - gamma)
    }

    #[inline]
    pub fn predict_value(&self, y_t: f64, gamma: f64) -> f64 {
        (y_t - gamma.sqrt() * self.posterior_mean(y_t, gamma)) / (1.0 - gamma).sqrt()
    }
}

/// Closed-form `eps_hat` for prior `N(m, s^2)` applied voxelwise.
pub fn analytic_predict(m: f64, s: f64, y_t: &Slice2D, gamma: f64) -> Result<Slice2D> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "analytic predictor needs gamma in (0, 1), got {gamma}"
        )));
    }
    let d = AnalyticGaussianDenoiser::new(m, s)?;
    Ok(y_t.with_data(y_t.data.iter().map(|&y| d.predict_value(y, gamma)).collect()))
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict(&self, _x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Result<Slice2D> {
        analytic_predict(self.mean, self.std, y_t, gamma)
    }

    fn plane(&self) -> Option<Plane> {
        None
    }
}
