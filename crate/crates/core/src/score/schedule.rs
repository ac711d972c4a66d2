use serde::Serialize;

use crate::error::{EsdError, Result};

/// Coefficients of the linear interpolation schedule at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub beta2: f64,
    /// `b(t) = d log α_t / dt`.
    pub drift_b: f64,
    /// `σ²(t) = dβ_t²/dt − 2 b(t) β_t²`.
    pub diff_sigma2: f64,
}

/// The schedule `α_t = 1 − t`, `β_t² = t` as free functions of `t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiseSchedule;

impl NoiseSchedule {
    pub fn alpha(t: f64) -> f64 {
        1.0 - t
    }

    pub fn beta2(t: f64) -> f64 {
        t
    }

    pub fn drift(t: f64) -> f64 {
        -1.0 / (1.0 - t)
    }

    pub fn diffusion2(t: f64) -> f64 {
        1.0 + 2.0 * t / (1.0 - t)
    }
}

/// Schedule values on `[0, 1)`; the drift is singular at `t = 1`.
pub fn schedule(t: f64) -> Result<ScheduleValues> {
    if !(0.0..1.0).contains(&t) {
        return Err(EsdError::Domain(format!("schedule time {t} outside [0, 1)")));
    }
    Ok(ScheduleValues {
        alpha: NoiseSchedule::alpha(t),
        beta2: NoiseSchedule::beta2(t),
        drift_b: NoiseSchedule::drift(t),
        diff_sigma2: NoiseSchedule::diffusion2(t),
    })
}

/// `(α_t, β_t²)` on the closed interval `[0, 1]`.
pub fn alpha_beta2(t: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(EsdError::Domain(format!("time {t} outside [0, 1]")));
    }
    Ok((NoiseSchedule::alpha(t), NoiseSchedule::beta2(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let s = schedule(0.0).unwrap();
        assert_eq!((s.alpha, s.beta2, s.drift_b, s.diff_sigma2), (1.0, 0.0, -1.0, 1.0));
        let s = schedule(0.5).unwrap();
        assert_eq!((s.alpha, s.beta2, s.drift_b, s.diff_sigma2), (0.5, 0.5, -2.0, 3.0));
        let s = schedule(0.9).unwrap();
        assert!((s.alpha - 0.1).abs() < 1e-15);
        assert!((s.drift_b + 10.0).abs() < 1e-12);
        assert!((s.diff_sigma2 - 19.0).abs() < 1e-12);
    }

    #[test]
    fn endpoint_excluded() {
        assert!(schedule(1.0).is_err());
        assert!(schedule(-0.1).is_err());
        assert_eq!(alpha_beta2(1.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn diffusion_matches_definition() {
        // σ² = dβ²/dt − 2 b β² with dβ²/dt = 1.
        for i in 0..99 {
            let t = i as f64 / 100.0;
            let s = schedule(t).unwrap();
            let expected = 1.0 - 2.0 * s.drift_b * s.beta2;
            assert!((s.diff_sigma2 - expected).abs() < 1e-12);
            let h = 1e-6;
            let fd = ((1.0 - t - h).ln() - (1.0 - t + h).ln()) / (2.0 * h);
            assert!((s.drift_b - fd).abs() < 1e-6 * s.drift_b.abs());
        }
    }
}
