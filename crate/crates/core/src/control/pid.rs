//! Discrete PD/PID building blocks.

use crate::geometry::wrap_angle;

/// Backward difference passed through a first-order low-pass with time
/// constant `2·dt`. The first sample yields zero so a fresh controller does
/// not kick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FilteredDerivative {
    prev: Option<f64>,
    value: f64,
    wrap: bool,
    raw: bool,
}

impl FilteredDerivative {
    /// Differences are wrapped to `(-π, π]`, for angle signals.
    pub fn angular() -> Self {
        Self {
            wrap: true,
            ..Self::default()
        }
    }

    /// Plain backward difference, no low-pass.
    pub fn unfiltered() -> Self {
        Self {
            raw: true,
            ..Self::default()
        }
    }

    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        let prev = self.prev.unwrap_or(e);
        let mut de = e - prev;
        if self.wrap {
            de = wrap_angle(de);
        }
        let alpha = if self.raw { 0.0 } else { 2.0 / 3.0 };
        self.value = alpha * self.value + (1.0 - alpha) * de / dt;
        self.prev = Some(e);
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn reset(&mut self) {
        *self = Self {
            wrap: self.wrap,
            raw: self.raw,
            ..Self::default()
        };
    }
}

/// `x` limited to `±limit`; non-finite input maps to zero.
pub fn clamp_sym(x: f64, limit: f64) -> f64 {
    if x.is_finite() {
        x.clamp(-limit, limit)
    } else {
        0.0
    }
}

/// Integrator with a hard clamp.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Integrator {
    value: f64,
}

impl Integrator {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn accumulate(&mut self, e: f64, dt: f64, limit: f64) {
        self.value = clamp_sym(self.value + e * dt, limit);
    }

    pub fn reset(&mut self) {
        self.value = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_sample_has_no_kick() {
        let mut d = FilteredDerivative::default();
        assert_eq!(d.update(5.0, 0.05), 0.0);
    }

    #[test]
    fn ramp_derivative_converges_to_slope() {
        let mut d = FilteredDerivative::default();
        let mut v = 0.0;
        for k in 0..200 {
            v = d.update(0.3 * k as f64 * 0.05, 0.05);
        }
        assert!((v - 0.3).abs() < 1e-9);
    }

    #[test]
    fn angular_derivative_ignores_wrap_jump() {
        let mut d = FilteredDerivative::angular();
        d.update(3.1, 0.05);
        let v = d.update(-3.1, 0.05);
        // Step of 2π - 6.2 rad, not -6.2 rad.
        assert!(v > 0.0);
    }

    #[test]
    fn clamp_guards_non_finite() {
        assert_eq!(clamp_sym(f64::NAN, 1.0), 0.0);
        assert_eq!(clamp_sym(f64::INFINITY, 1.0), 0.0);
        assert_eq!(clamp_sym(-3.0, 1.0), -1.0);
    }
}
