//! Forward corruption, the noise-prediction objective, the Gaussian
//! posterior and the ancestral reverse iteration.

use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};
use crate::schedule::NoiseSchedule;
use crate::volume::Slice2D;

/// Exponent `l` of the `||f - eps||_l^l` training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

impl LossNorm {
    /// Per-element loss value and its derivative w.r.t. the residual.
    /// The L1 subgradient at zero is taken as zero.
    #[inline]
    pub fn value_and_slope(self, r: f64) -> (f64, f64) {
        match self {
            LossNorm::L1 => (
                r.abs(),
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                },
            ),
            LossNorm::L2 => (r * r, 2.0 * r),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            LossNorm::L1 => 1,
            LossNorm::L2 => 2,
        }
    }
}

/// Noise variance injected by each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceVariance {
    /// `1 - alpha_t`.
    #[default]
    Beta,
    /// The true posterior variance `(1 - gamma_{t-1})(1 - alpha_t)/(1 - gamma_t)`.
    Posterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionProcess {
    pub schedule: NoiseSchedule,
    pub loss: LossNorm,
    /// Clip range applied to the `y0` estimate while sampling.
    pub clip: Option<(f64, f64)>,
    pub variance: InferenceVariance,
}

impl DiffusionProcess {
    pub fn new(schedule: NoiseSchedule) -> Self {
        DiffusionProcess {
            schedule,
            loss: LossNorm::L1,
            clip: Some((-1.0, 1.0)),
            variance: InferenceVariance::Beta,
        }
    }

    pub fn without_clipping(mut self) -> Self {
        self.clip = None;
        self
    }

    pub fn with_variance(mut self, variance: InferenceVariance) -> Self {
        self.variance = variance;
        self
    }

    /// Standard deviation of the noise injected when stepping from `t`.
    pub fn step_std(&self, t: usize) -> f64 {
        if t <= 1 {
            return 0.0;
        }
        let s = &self.schedule;
        let beta = 1.0 - s.alpha(t);
        match self.variance {
            InferenceVariance::Beta => beta.sqrt(),
            InferenceVariance::Posterior => ((1.0 - s.gamma(t - 1)) * beta / (1.0 - s.gamma(t))).max(0.0).sqrt(),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "noise level gamma = {gamma} outside (0, 1]"
        )));
    }
    Ok(())
}

/// `y_t = sqrt(gamma) y0 + sqrt(1 - gamma) eps`.
pub fn forward_sample(y0: &Slice2D, gamma: f64, eps: &Slice2D) -> Result<Slice2D> {
    check_gamma(gamma)?;
    y0.check_shape(eps)?;
    let (a, b) = (gamma.sqrt(), (1.0 - gamma).sqrt());
    Ok(y0.with_data(y0.data.iter().zip(&eps.data).map(|(&y, &e)| a * y + b * e).collect()))
}

/// Mean per-element `|f(x, y_t, gamma) - eps|^l` for one training example.
pub fn training_residual(
    denoiser: &dyn Denoiser,
    x: &Slice2D,
    y0: &Slice2D,
    gamma: f64,
    eps: &Slice2D,
    loss: LossNorm,
) -> Result<f64> {
    x.check_shape(y0)?;
    let y_t = forward_sample(y0, gamma, eps)?;
    let pred = denoiser.predict(x, &y_t, gamma)?;
    pred.check_shape(eps)?;
    let total: f64 = pred
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&p, &e)| loss.value_and_slope(p - e).0)
        .sum();
    Ok(total / eps.len() as f64)
}

/// `y0_hat = (y_t - sqrt(1 - gamma) eps_hat) / sqrt(gamma)`, optionally clipped.
pub fn estimate_y0(y_t: &Slice2D, eps_hat: &Slice2D, gamma: f64, clip: Option<(f64, f64)>) -> Result<Slice2D> {
    check_gamma(gamma)?;
    y_t.check_shape(eps_hat)?;
    let (inv, b) = (1.0 / gamma.sqrt(), (1.0 - gamma).sqrt());
    Ok(y_t.with_data(
        y_t.data
            .iter()
            .zip(&eps_hat.data)
            .map(|(&y, &e)| {
                let v = (y - b * e) * inv;
                match clip {
                    Some((lo, hi)) => v.clamp(lo, hi),
                    None => v,
                }
            })
            .collect(),
    ))
}

/// Coefficients `(c0, ct, sigma2)` of `q(y_{t-1} | y0, y_t)`:
/// mean `c0 y0 + ct y_t`, variance `sigma2`.
pub fn posterior_coefficients(t: usize, schedule: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    schedule.check_step(t)?;
    let (a, g, gp) = (schedule.alpha(t), schedule.gamma(t), schedule.gamma(t - 1));
    let denom = 1.0 - g;
    if denom <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "posterior undefined at step {t}: gamma_t = 1"
        )));
    }
    Ok((
        gp.sqrt() * (1.0 - a) / denom,
        a.sqrt() * (1.0 - gp) / denom,
        (1.0 - gp) * (1.0 - a) / denom,
    ))
}

/// Posterior mean field and variance of `y_{t-1}` given `y0` and `y_t`.
pub fn posterior_params(y0: &Slice2D, y_t: &Slice2D, t: usize, schedule: &NoiseSchedule) -> Result<(Slice2D, f64)> {
    y0.check_shape(y_t)?;
    let (c0, ct, sigma2) = posterior_coefficients(t, schedule)?;
    let mu = y0.with_data(y0.data.iter().zip(&y_t.data).map(|(&a, &b)| c0 * a + ct * b).collect());
    Ok((mu, sigma2))
}

/// Reverse-step mean written directly in terms of the noise estimate:
/// `(y_t - (1 - alpha_t)/sqrt(1 - gamma_t) eps_hat) / sqrt(alpha_t)`.
pub fn reverse_mean_direct(y_t: &Slice2D, eps_hat: &Slice2D, t: usize, schedule: &NoiseSchedule) -> Result<Slice2D> {
    schedule.check_step(t)?;
    y_t.check_shape(eps_hat)?;
    let (a, g) = (schedule.alpha(t), schedule.gamma(t));
    let beta = 1.0 - a;
    let coef = if beta == 0.0 { 0.0 } else { beta / (1.0 - g).sqrt() };
    let inv = 1.0 / a.sqrt();
    Ok(y_t.with_data(
        y_t.data
            .iter()
            .zip(&eps_hat.data)
            .map(|(&y, &e)| (y - coef * e) * inv)
            .collect(),
    ))
}

/// Reverse-step mean as the posterior mean around the estimated `y0`.
pub fn reverse_mean_composed(
    y_t: &Slice2D,
    eps_hat: &Slice2D,
    t: usize,
    schedule: &NoiseSchedule,
    clip: Option<(f64, f64)>,
) -> Result<Slice2D> {
    let y0_hat = estimate_y0(y_t, eps_hat, schedule.gamma(t), clip)?;
    Ok(posterior_params(&y0_hat, y_t, t, schedule)?.0)
}

/// One ancestral step `y_t -> y_{t-1}` with caller-supplied unit noise.
///
/// Without clipping the mean uses the direct form; with clipping it goes
/// through the clipped `y0` estimate. No noise is added at `t = 1`.
pub fn reverse_step_with_noise(
    process: &DiffusionProcess,
    denoiser: &dyn Denoiser,
    x: &Slice2D,
    y_t: &Slice2D,
    t: usize,
    noise: &[f64],
) -> Result<Slice2D> {
    let schedule = &process.schedule;
    schedule.check_step(t)?;
    x.check_shape(y_t)?;
    let eps_hat = denoiser.predict(x, y_t, schedule.gamma(t))?;
    eps_hat.check_shape(y_t)?;
    let mut out = match process.clip {
        None => reverse_mean_direct(y_t, &eps_hat, t, schedule)?,
        Some(_) if schedule.gamma(t) >= 1.0 => y_t.clone(),
        Some(range) => reverse_mean_composed(y_t, &eps_hat, t, schedule, Some(range))?,
    };
    let std = process.step_std(t);
    if std > 0.0 {
        if noise.len() != out.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise field of {} values for a {}-voxel slice",
                noise.len(),
                out.len()
            )));
        }
        for (o, &n) in out.data.iter_mut().zip(noise) {
            *o += std * n;
        }
    }
    if let Some(i) = out.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("reverse step {t}, voxel {i}")));
    }
    Ok(out)
}

/// One ancestral step drawing its noise from `rng`.
pub fn reverse_step(
    process: &DiffusionProcess,
    denoiser: &dyn Denoiser,
    x: &Slice2D,
    y_t: &Slice2D,
    t: usize,
    rng: &RngStream,
) -> Result<Slice2D> {
    let noise = if t > 1 { rng.normals(y_t.len()) } else { Vec::new() };
    reverse_step_with_noise(process, denoiser, x, y_t, t, &noise)
}

/// Unit noise for the slab (z-slice) `k` of the field addressed by `tag`.
///
/// Volumes draw their noise slab by slab along z with this addressing,
/// so a 2D chain is the depth-1 case of a volumetric one.
pub fn slab_noise(rng: &RngStream, tag: u64, k: usize, len: usize) -> Vec<f64> {
    rng.derive(tag).derive(k as u64).normals(len)
}

/// Full chain `y_T ~ N(0, I)` down to `y_0`, conditioned on `x`.
pub fn sample_chain_2d(
    process: &DiffusionProcess,
    denoiser: &dyn Denoiser,
    x: &Slice2D,
    rng: &RngStream,
) -> Result<Slice2D> {
    let steps = process.schedule.steps();
    let mut y = x.with_data(slab_noise(rng, tags::INIT, 0, x.len()));
    for t in (1..=steps).rev() {
        let noise = if t > 1 {
            slab_noise(rng, tags::STEP | t as u64, 0, x.len())
        } else {
            Vec::new()
        };
        y = reverse_step_with_noise(process, denoiser, x, &y, t, &noise)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::AnalyticGaussianDenoiser;
    use crate::schedule::{build_schedule, ScheduleKind};
    use crate::volume::{Axis, Plane};

    fn field(data: Vec<f64>) -> Slice2D {
        let n = data.len();
        Slice2D::new(n, 1, data, Axis::Axial, 0).unwrap()
    }

    /// Returns a stored noise field regardless of input.
    struct Replay(Vec<f64>);

    impl Denoiser for Replay {
        fn predict(&self, _x: &Slice2D, y_t: &Slice2D, _g: f64) -> Result<Slice2D> {
            Ok(y_t.with_data(self.0.clone()))
        }
        fn plane(&self) -> Option<Plane> {
            None
        }
    }

    struct Zero;

    impl Denoiser for Zero {
        fn predict(&self, _x: &Slice2D, y_t: &Slice2D, _g: f64) -> Result<Slice2D> {
            Ok(y_t.zeros_like())
        }
        fn plane(&self) -> Option<Plane> {
            None
        }
    }

    fn schedule(steps: usize) -> NoiseSchedule {
        build_schedule(ScheduleKind::linear_for_steps(steps), steps).unwrap()
    }

    #[test]
    fn forward_sample_endpoints() {
        let y0 = field(vec![0.3, -0.7, 1.0]);
        let eps = field(vec![1.0, 2.0, -3.0]);
        assert_eq!(forward_sample(&y0, 1.0, &eps).unwrap(), y0);
        let z = forward_sample(&y0.zeros_like(), 0.25, &eps.with_data(vec![1.0; 3])).unwrap();
        for v in z.data {
            assert!((v - 0.75f64.sqrt()).abs() < 1e-15);
            assert!((v - 0.8660).abs() < 1e-4);
        }
    }

    #[test]
    fn forward_sample_rejects_bad_input() {
        let y0 = field(vec![0.0; 3]);
        assert!(forward_sample(&y0, 0.5, &field(vec![0.0; 4])).is_err());
        assert!(forward_sample(&y0, 0.0, &y0).is_err());
        assert!(forward_sample(&y0, 1.5, &y0).is_err());
    }

    #[test]
    fn forward_sample_moments() {
        let n = 100_000;
        let (g, y0v) = (0.3, 0.8);
        let y0 = field(vec![y0v; n]);
        let eps = field(RngStream::new(11).normals(n));
        let y = forward_sample(&y0, g, &eps).unwrap();
        let mean = y.data.iter().sum::<f64>() / n as f64;
        let var = y.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m_true, v_true) = (g.sqrt() * y0v, 1.0 - g);
        assert!((mean - m_true).abs() < 3.0 * (v_true / n as f64).sqrt());
        // var of the sample variance for a Gaussian: 2 sigma^4 / (n - 1)
        assert!((var - v_true).abs() < 3.0 * (2.0 * v_true * v_true / (n - 1) as f64).sqrt());
    }

    #[test]
    fn residual_of_perfect_and_zero_predictors() {
        let n = 200_000;
        let y0 = field(RngStream::new(1).normals(n));
        let x = y0.clone();
        let eps = field(RngStream::new(2).normals(n));
        let g = 0.4;
        let y_t = forward_sample(&y0, g, &eps).unwrap();
        let _ = y_t;
        let perfect = Replay(eps.data.clone());
        assert_eq!(
            training_residual(&perfect, &x, &y0, g, &eps, LossNorm::L1).unwrap(),
            0.0
        );
        let zero_loss = training_residual(&Zero, &x, &y0, g, &eps, LossNorm::L1).unwrap();
        let half_normal_mean = (2.0 / std::f64::consts::PI).sqrt();
        // sd of |eps| is sqrt(1 - 2/pi)
        let tol = 3.0 * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / (n as f64).sqrt();
        assert!((zero_loss - half_normal_mean).abs() < tol, "{zero_loss}");
        assert!((zero_loss - 0.7979).abs() < 0.01);
    }

    #[test]
    fn residual_is_permutation_invariant_for_pointwise_denoiser() {
        let d = AnalyticGaussianDenoiser::new(0.1, 0.5).unwrap();
        let n = 64;
        let x = field(RngStream::new(3).normals(n));
        let y0 = field(RngStream::new(4).normals(n));
        let eps = field(RngStream::new(5).normals(n));
        let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
        let p = |s: &Slice2D| s.with_data(perm.iter().map(|&i| s.data[i]).collect());
        let a = training_residual(&d, &x, &y0, 0.6, &eps, LossNorm::L1).unwrap();
        let b = training_residual(&d, &p(&x), &p(&y0), 0.6, &p(&eps), LossNorm::L1).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn estimate_inverts_forward() {
        let y0 = field(RngStream::new(6).normals(50));
        let eps = field(RngStream::new(7).normals(50));
        for g in [0.01, 0.3, 0.99] {
            let y_t = forward_sample(&y0, g, &eps).unwrap();
            let back = estimate_y0(&y_t, &eps, g, None).unwrap();
            for (a, b) in back.data.iter().zip(&y0.data) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let y_t = field(vec![0.4, -2.0]);
        assert_eq!(estimate_y0(&y_t, &field(vec![5.0, 7.0]), 1.0, None).unwrap(), y_t);
    }

    #[test]
    fn estimate_clips_and_rejects_zero_gamma() {
        let y_t = field(vec![10.0]);
        let e = field(vec![0.0]);
        assert_eq!(estimate_y0(&y_t, &e, 0.25, None).unwrap().data, vec![20.0]);
        assert_eq!(estimate_y0(&y_t, &e, 0.25, Some((-1.0, 1.0))).unwrap().data, vec![1.0]);
        assert!(estimate_y0(&y_t, &e, 0.0, None).is_err());
    }

    /// Moments of `q(y_{t-1} | y0, y_t)` for one voxel by trapezoidal
    /// integration of `N(y_t; sqrt(a) u, 1 - a) N(u; sqrt(gp) y0, 1 - gp)`.
    fn quadrature_posterior(y0: f64, yt: f64, a: f64, gp: f64) -> (f64, f64) {
        let (m, s) = (gp.sqrt() * y0, (1.0 - gp).sqrt());
        let n = 40_001;
        let (lo, hi) = (m - 12.0 * s - 5.0, m + 12.0 * s + 5.0);
        let h = (hi - lo) / (n - 1) as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let u = lo + h * i as f64;
            let lik = (-(yt - a.sqrt() * u).powi(2) / (2.0 * (1.0 - a))).exp();
            let prior = (-(u - m).powi(2) / (2.0 * s * s)).exp();
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * lik * prior;
            z += w;
            m1 += w * u;
            m2 += w * u * u;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn posterior_matches_quadrature() {
        let s = build_schedule(
            ScheduleKind::LinearBeta {
                beta_start: 0.05,
                beta_end: 0.3,
            },
            6,
        )
        .unwrap();
        let mut rng = RngStream::new(8).normals(12).into_iter();
        for t in 2..=6 {
            let (y0, yt) = (rng.next().unwrap(), rng.next().unwrap());
            let (mu, s2) = posterior_params(&field(vec![y0]), &field(vec![yt]), t, &s).unwrap();
            let (qm, qv) = quadrature_posterior(y0, yt, s.alpha(t), s.gamma(t - 1));
            assert!((mu.data[0] - qm).abs() < 1e-6, "t={t}: {} vs {qm}", mu.data[0]);
            assert!((s2 - qv).abs() < 1e-6, "t={t}: {s2} vs {qv}");
        }
    }

    #[test]
    fn posterior_at_first_step_is_the_clean_image() {
        // gamma_0 = 1: the posterior collapses onto y0.
        let s = schedule(10);
        let (mu, s2) = posterior_params(&field(vec![0.37]), &field(vec![-1.2]), 1, &s).unwrap();
        assert!((mu.data[0] - 0.37).abs() < 1e-12);
        assert_eq!(s2, 0.0);
    }

    #[test]
    fn posterior_without_noise_step() {
        // alpha_2 = 1 so gamma_1 = gamma_2 < 1.
        let kind = ScheduleKind::LinearBeta {
            beta_start: 0.1,
            beta_end: 0.0,
        };
        let s = build_schedule(kind, 2).unwrap();
        assert_eq!(s.alpha(2), 1.0);
        let (mu, s2) = posterior_params(&field(vec![0.4]), &field(vec![0.9]), 2, &s).unwrap();
        assert!((mu.data[0] - 0.9).abs() < 1e-15);
        assert_eq!(s2, 0.0);
        let degenerate = build_schedule(
            ScheduleKind::LinearBeta {
                beta_start: 0.0,
                beta_end: 0.0,
            },
            2,
        )
        .unwrap();
        assert!(posterior_params(&field(vec![0.0]), &field(vec![0.0]), 2, &degenerate).is_err());
    }

    #[test]
    fn direct_and_composed_means_agree() {
        let s = schedule(100);
        let n = 32;
        for (k, t) in [1usize, 2, 17, 50, 100].into_iter().enumerate() {
            let y_t = field(RngStream::new(20 + k as u64).normals(n));
            let e = field(RngStream::new(40 + k as u64).normals(n));
            let a = reverse_mean_direct(&y_t, &e, t, &s).unwrap();
            let b = reverse_mean_composed(&y_t, &e, t, &s, None).unwrap();
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p - q).abs() <= 1e-10 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn oracle_noise_step_lands_on_posterior_mean() {
        let s = schedule(50);
        let process = DiffusionProcess::new(s.clone()).without_clipping();
        let y0 = field(RngStream::new(1).normals(20));
        let eps = field(RngStream::new(2).normals(20));
        let t = 30;
        let y_t = forward_sample(&y0, s.gamma(t), &eps).unwrap();
        let out = reverse_step_with_noise(&process, &Replay(eps.data.clone()), &y0, &y_t, t, &vec![0.0; 20]).unwrap();
        let (mu, _) = posterior_params(&y0, &y_t, t, &s).unwrap();
        for (a, b) in out.data.iter().zip(&mu.data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_alpha_step_is_identity() {
        let kind = ScheduleKind::LinearBeta {
            beta_start: 0.0,
            beta_end: 0.0,
        };
        let s = build_schedule(kind, 3).unwrap();
        let y_t = field(vec![0.25, -0.5]);
        for clip in [None, Some((-1.0, 1.0))] {
            let mut process = DiffusionProcess::new(s.clone());
            process.clip = clip;
            let out = reverse_step_with_noise(&process, &Replay(vec![3.0, -4.0]), &y_t, &y_t, 2, &[0.0, 0.0]).unwrap();
            assert_eq!(out, y_t);
        }
    }

    #[test]
    fn injected_noise_variance_is_one_minus_alpha() {
        let s = schedule(40);
        let process = DiffusionProcess::new(s.clone()).without_clipping();
        let n = 100_000;
        let t = 25;
        let y_t = field(vec![0.0; n]);
        let out = reverse_step(&process, &Zero, &y_t, &y_t, t, &RngStream::new(77)).unwrap();
        let mean = out.data.iter().sum::<f64>() / n as f64;
        let var = out.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 1.0 - s.alpha(t);
        assert!((var - target).abs() < 3.0 * target * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn posterior_variance_option() {
        let s = schedule(40);
        let p = DiffusionProcess::new(s.clone()).with_variance(InferenceVariance::Posterior);
        let t = 10;
        let (_, _, s2) = posterior_coefficients(t, &s).unwrap();
        assert!((p.step_std(t) - s2.sqrt()).abs() < 1e-15);
        assert_eq!(p.step_std(1), 0.0);
    }

    #[test]
    fn single_step_chain_returns_y0_estimate() {
        let kind = ScheduleKind::LinearBeta {
            beta_start: 1e-6,
            beta_end: 1e-6,
        };
        let s = build_schedule(kind, 1).unwrap();
        let process = DiffusionProcess::new(s.clone()).without_clipping();
        let d = AnalyticGaussianDenoiser::new(0.2, 0.3).unwrap();
        let x = field(vec![0.0; 8]);
        let rng = RngStream::new(4);
        let out = sample_chain_2d(&process, &d, &x, &rng).unwrap();
        let y_t = x.with_data(slab_noise(&rng, tags::INIT, 0, 8));
        let eps = d.predict(&x, &y_t, s.gamma(1)).unwrap();
        let y0 = estimate_y0(&y_t, &eps, s.gamma(1), None).unwrap();
        for (a, b) in out.data.iter().zip(&y0.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_is_deterministic() {
        let process = DiffusionProcess::new(schedule(30));
        let d = AnalyticGaussianDenoiser::new(0.0, 0.5).unwrap();
        let x = field(vec![0.0; 16]);
        let a = sample_chain_2d(&process, &d, &x, &RngStream::new(3)).unwrap();
        let b = sample_chain_2d(&process, &d, &x, &RngStream::new(3)).unwrap();
        assert_eq!(a, b);
        let c = sample_chain_2d(&process, &d, &x, &RngStream::new(4)).unwrap();
        assert_ne!(a, c);
    }
}
