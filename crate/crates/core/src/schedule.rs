//! Noise schedules: per-step retention `alpha_t` and cumulative `gamma_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full-scale number of reverse steps.
pub const DEFAULT_STEPS: usize = 2000;

/// Functional form of the per-step noise variance `beta_t = 1 - alpha_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `beta_t` linearly spaced from `beta_start` (t = 1) to `beta_end` (t = T).
    LinearBeta { beta_start: f64, beta_end: f64 },
    /// Squared-cosine cumulative retention with offset `s`.
    Cosine { offset: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::LinearBeta {
            beta_start: 1e-6,
            beta_end: 1e-2,
        }
    }
}

impl ScheduleKind {
    /// Linear-beta range rescaled so the total injected variance matches the
    /// 2000-step default at any step count (capped at `beta_end = 0.5`).
    pub fn linear_for_steps(steps: usize) -> Self {
        let scale = DEFAULT_STEPS as f64 / steps.max(1) as f64;
        ScheduleKind::LinearBeta {
            beta_start: (1e-6 * scale).min(0.5),
            beta_end: (1e-2 * scale).min(0.5),
        }
    }
}

/// A precomputed, immutable schedule of `T` steps.
///
/// `gamma` holds `T + 1` entries with `gamma[0] = 1`, so `gamma(t - 1)` is
/// defined for every `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
}

/// Build a schedule of `steps` steps.
pub fn build_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one step".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::LinearBeta { beta_start, beta_end } => {
            for b in [beta_start, beta_end] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::InvalidParameter(format!("beta {b} outside [0, 1)")));
                }
            }
            let span = (steps - 1).max(1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        }
        ScheduleKind::Cosine { offset } => {
            if !(offset.is_finite() && offset > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cosine offset {offset} must be positive"
                )));
            }
            let f = |t: usize| {
                let r = (t as f64 / steps as f64 + offset) / (1.0 + offset);
                (r * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, 0.999)).collect()
        }
    };
    let alpha: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut gamma = Vec::with_capacity(steps + 1);
    gamma.push(1.0);
    for &a in &alpha {
        let prev = *gamma.last().unwrap();
        gamma.push(prev * a);
    }
    Ok(NoiseSchedule { kind, alpha, gamma })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    /// `alpha_t` for `t` in `1..=T`.
    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `gamma_t` for `t` in `0..=T`.
    #[inline]
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// All cumulative values, `gamma_0 = 1` first.
    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidParameter(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Largest relative violation of `gamma_t = gamma_{t-1} * alpha_t`.
    pub fn recurrence_error(&self) -> f64 {
        (1..=self.steps())
            .map(|t| (self.gamma(t) - self.gamma(t - 1) * self.alpha(t)).abs() / self.gamma(t - 1))
            .fold(0.0, f64::max)
    }
}

/// Draw a training noise level: `t` uniform on `1..=T`, then `gamma`
/// uniform on `(gamma_t, gamma_{t-1})`.
pub fn sample_gamma<R: Rng + ?Sized>(schedule: &NoiseSchedule, rng: &mut R) -> (f64, usize) {
    let t = rng.random_range(1..=schedule.steps());
    let (lo, hi) = (schedule.gamma(t), schedule.gamma(t - 1));
    if hi <= lo {
        return (lo, t);
    }
    let u: f64 = rng.sample(rand_distr::Open01);
    (lo + (hi - lo) * u, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn default_schedule_ends_near_pure_noise() {
        let s = build_schedule(ScheduleKind::default(), DEFAULT_STEPS).unwrap();
        assert_eq!(s.steps(), 2000);
        let end = s.gamma(2000);
        assert!(end > 0.0 && end < 1e-3, "gamma_T = {end}");
    }

    #[test]
    fn single_step_without_noise() {
        let s = build_schedule(
            ScheduleKind::LinearBeta {
                beta_start: 0.0,
                beta_end: 0.0,
            },
            1,
        )
        .unwrap();
        assert_eq!(s.alphas(), &[1.0]);
        assert_eq!(s.gammas(), &[1.0, 1.0]);
    }

    #[test]
    fn ten_step_product_matches_direct_oracle() {
        let s = build_schedule(
            ScheduleKind::LinearBeta {
                beta_start: 1e-4,
                beta_end: 1e-1,
            },
            10,
        )
        .unwrap();
        // Independent product in log space with the betas written out.
        let log_sum: f64 = (0..10)
            .map(|i| (1.0 - (1e-4 + (1e-1 - 1e-4) * i as f64 / 9.0)).ln())
            .sum();
        let oracle = log_sum.exp();
        assert!((s.gamma(10) - oracle).abs() < 1e-14 * oracle.max(1.0));
        // 50-digit product computed offline
        assert!((s.gamma(10) - 0.595_057_648_476_887_45).abs() < 1e-14);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(build_schedule(ScheduleKind::default(), 0).is_err());
        for (a, b) in [(-0.1, 0.1), (0.1, 1.0), (0.1, 1.5)] {
            let kind = ScheduleKind::LinearBeta {
                beta_start: a,
                beta_end: b,
            };
            assert!(matches!(build_schedule(kind, 5), Err(Error::InvalidParameter(_))));
        }
        assert!(build_schedule(ScheduleKind::Cosine { offset: 0.0 }, 5).is_err());
    }

    #[test]
    fn invariants_for_every_kind() {
        for kind in [
            ScheduleKind::default(),
            ScheduleKind::linear_for_steps(200),
            ScheduleKind::Cosine { offset: 0.008 },
        ] {
            for steps in [1, 7, 200, 2000] {
                let s = build_schedule(kind, steps).unwrap();
                assert!(s.recurrence_error() < 1e-12);
                assert!(s.gammas().windows(2).all(|w| w[1] <= w[0]));
                if s.alphas().iter().all(|&a| a < 1.0) {
                    assert!(s.gammas().windows(2).all(|w| w[1] < w[0]));
                }
            }
        }
    }

    #[test]
    fn sample_gamma_support() {
        let s = build_schedule(ScheduleKind::linear_for_steps(50), 50).unwrap();
        let mut rng = RngStream::new(3).rng();
        for _ in 0..10_000 {
            let (g, t) = sample_gamma(&s, &mut rng);
            assert!((1..=50).contains(&t));
            assert!(g > s.gamma(t) && g < s.gamma(t - 1));
            assert!(g > s.gamma(50) && g < 1.0);
        }
    }
}
