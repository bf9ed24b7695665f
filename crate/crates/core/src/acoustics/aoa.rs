//! USBL angle of arrival in the receiver body frame.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose6};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaMeasurement {
    pub receiver: u8,
    pub source: u8,
    /// `(-π, π]`, positive toward starboard.
    pub azimuth: f64,
    /// `[-π/2, π/2]`, positive above the receiver.
    pub elevation: f64,
    pub t: f64,
}

/// Noiseless bearing `(azimuth, elevation)` of `source` seen from `receiver`,
/// or `None` when they coincide.
pub fn bearing(receiver: &Pose6, source: &Vector3<f64>) -> Option<(f64, f64)> {
    let rel = source - receiver.position();
    if rel.norm() < 1e-9 {
        return None;
    }
    let b = receiver.rotation().transpose() * rel;
    let azimuth = wrap_angle(b.y.atan2(b.x));
    let elevation = (-b.z).atan2(b.x.hypot(b.y));
    Some((azimuth, elevation))
}

/// Bearing plus independent Gaussian noise on each angle. Two draws are
/// taken whenever a measurement is produced.
pub fn compute_aoa(receiver: &Pose6, source: &Vector3<f64>, sigma: f64, rng: &mut RngStream) -> Option<(f64, f64)> {
    let (az, el) = bearing(receiver, source)?;
    let az = wrap_angle(az + rng.gaussian(sigma));
    let el = (el + rng.gaussian(sigma)).clamp(-FRAC_PI_2, FRAC_PI_2);
    Some((az, el))
}

/// World position at `range` along the bearing from `receiver`.
pub fn project(receiver: &Pose6, azimuth: f64, elevation: f64, range: f64) -> Vector3<f64> {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    let body = Vector3::new(ce * ca, ce * sa, -se) * range;
    receiver.position() + receiver.rotation() * body
}
