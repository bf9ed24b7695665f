//! Frames and angle helpers.
//!
//! World frame is NED (x north, y east, z down, meters). Body frame is
//! x forward, y starboard, z down. Orientation is roll/pitch/yaw composed
//! as `R = Rz(yaw) * Ry(pitch) * Rx(roll)`, mapping body vectors to world.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if !a.is_finite() || (a > -PI && a <= PI) {
        return a;
    }
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    // rem_euclid can hand back exactly TAU - tiny; fold -π onto +π.
    if w <= -PI {
        w += TAU;
    }
    w
}

/// World-frame pose: position in meters, orientation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl Pose6 {
    pub const fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn angles(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    /// Packs as `[x, y, z, roll, pitch, yaw]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.z, self.roll, self.pitch, self.yaw)
    }

    /// Inverse of [`Pose6::to_vector`]; angles are wrapped.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            v[0],
            v[1],
            v[2],
            wrap_angle(v[3]),
            wrap_angle(v[4]),
            wrap_angle(v[5]),
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_rpy(self.roll, self.pitch, self.yaw)
    }

    pub fn horizontal_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.x).hypot(y - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// Body-to-world rotation for ZYX Euler angles.
pub fn rotation_rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Partial derivatives of [`rotation_rpy`] with respect to roll, pitch and yaw.
pub fn rotation_rpy_partials(roll: f64, pitch: f64, yaw: f64) -> [Matrix3<f64>; 3] {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let d_roll = Matrix3::new(
        0.0,
        cy * sp * cr + sy * sr,
        -cy * sp * sr + sy * cr,
        0.0,
        sy * sp * cr - cy * sr,
        -sy * sp * sr - cy * cr,
        0.0,
        cp * cr,
        -cp * sr,
    );
    let d_pitch = Matrix3::new(
        -cy * sp,
        cy * cp * sr,
        cy * cp * cr,
        -sy * sp,
        sy * cp * sr,
        sy * cp * cr,
        -cp,
        -sp * sr,
        -sp * cr,
    );
    let d_yaw = Matrix3::new(
        -sy * cp,
        -sy * sp * sr - cy * cr,
        -sy * sp * cr + cy * sr,
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        0.0,
        0.0,
        0.0,
    );
    [d_roll, d_pitch, d_yaw]
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range_and_tie() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        for k in -50..50 {
            let a = k as f64 * 0.37;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI, "{a} -> {w}");
            assert!(((a - w) / TAU - ((a - w) / TAU).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_is_orthonormal_and_yaw_points_east() {
        let r = rotation_rpy(0.3, -0.2, 1.1);
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let east = rotation_rpy(0.0, 0.0, PI / 2.0) * Vector3::x();
        assert!((east - Vector3::y()).norm() < 1e-12);
        // Positive pitch is nose up: forward axis gains negative z (shallower).
        let up = rotation_rpy(0.0, 0.2, 0.0) * Vector3::x();
        assert!(up.z < 0.0);
    }

    #[test]
    fn partials_match_finite_differences() {
        let (r, p, y) = (0.2, -0.4, 2.0);
        let parts = rotation_rpy_partials(r, p, y);
        let h = 1e-6;
        let fd = [
            (rotation_rpy(r + h, p, y) - rotation_rpy(r - h, p, y)) / (2.0 * h),
            (rotation_rpy(r, p + h, y) - rotation_rpy(r, p - h, y)) / (2.0 * h),
            (rotation_rpy(r, p, y + h) - rotation_rpy(r, p, y - h)) / (2.0 * h),
        ];
        for k in 0..3 {
            assert!((parts[k] - fd[k]).norm() < 1e-8, "axis {k}");
        }
    }
}
