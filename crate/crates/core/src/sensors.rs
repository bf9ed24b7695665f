//! Noisy DVL, AHRS, depth and surface-gated GPS measurements from truth.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::geometry::wrap_angle;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Dvl,
    Imu,
    Depth,
    Gps,
}

impl SensorKind {
    pub const ALL: [SensorKind; 4] = [SensorKind::Dvl, SensorKind::Imu, SensorKind::Depth, SensorKind::Gps];

    pub fn label(self) -> &'static str {
        match self {
            SensorKind::Dvl => "dvl",
            SensorKind::Imu => "imu",
            SensorKind::Depth => "depth",
            SensorKind::Gps => "gps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sensor", rename_all = "lowercase")]
pub enum Payload {
    /// Body-frame velocity (m/s).
    Dvl { velocity: [f64; 3] },
    /// Roll, pitch, yaw (rad).
    Imu { orientation: [f64; 3] },
    /// Depth, positive down (m).
    Depth { z: f64 },
    /// Local tangent-plane north/east (m).
    Gps { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Measurement {
    pub fn kind(&self) -> SensorKind {
        match self.payload {
            Payload::Dvl { .. } => SensorKind::Dvl,
            Payload::Imu { .. } => SensorKind::Imu,
            Payload::Depth { .. } => SensorKind::Depth,
            Payload::Gps { .. } => SensorKind::Gps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorChannel<S> {
    /// Sampling rate (Hz). Its period must be a whole number of sim steps.
    pub rate: f64,
    pub sigma: S,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub dvl: SensorChannel<[f64; 3]>,
    pub imu: SensorChannel<[f64; 3]>,
    pub depth: SensorChannel<f64>,
    pub gps: SensorChannel<[f64; 2]>,
    /// GPS is only available while truth depth is at or above this (m).
    pub surface_threshold: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            dvl: SensorChannel {
                rate: 4.0,
                sigma: [0.02; 3],
                enabled: true,
            },
            imu: SensorChannel {
                rate: 20.0,
                sigma: [0.005, 0.005, 0.01],
                enabled: true,
            },
            depth: SensorChannel {
                rate: 10.0,
                sigma: 0.005,
                enabled: true,
            },
            gps: SensorChannel {
                rate: 1.0,
                sigma: [0.5, 0.5],
                enabled: true,
            },
            surface_threshold: 0.3,
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        let mut cfg = Self::default();
        cfg.dvl.sigma = [0.0; 3];
        cfg.imu.sigma = [0.0; 3];
        cfg.depth.sigma = 0.0;
        cfg.gps.sigma = [0.0; 2];
        cfg
    }

    pub fn rate(&self, kind: SensorKind) -> f64 {
        match kind {
            SensorKind::Dvl => self.dvl.rate,
            SensorKind::Imu => self.imu.rate,
            SensorKind::Depth => self.depth.rate,
            SensorKind::Gps => self.gps.rate,
        }
    }

    pub fn enabled(&self, kind: SensorKind) -> bool {
        match kind {
            SensorKind::Dvl => self.dvl.enabled,
            SensorKind::Imu => self.imu.enabled,
            SensorKind::Depth => self.depth.enabled,
            SensorKind::Gps => self.gps.enabled,
        }
    }

    fn sigmas(&self, kind: SensorKind) -> Vec<f64> {
        match kind {
            SensorKind::Dvl => self.dvl.sigma.to_vec(),
            SensorKind::Imu => self.imu.sigma.to_vec(),
            SensorKind::Depth => vec![self.depth.sigma],
            SensorKind::Gps => self.gps.sigma.to_vec(),
        }
    }

    /// Checks rates, sigmas and that each period divides into whole steps of `dt`.
    pub fn validate(&self, dt: f64) -> Result<(), String> {
        for kind in SensorKind::ALL {
            period_ticks(self.rate(kind), dt).map_err(|e| format!("sensors.{}: {e}", kind.label()))?;
            if self.sigmas(kind).iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(format!("sensors.{}.sigma must be non-negative", kind.label()));
            }
        }
        if !(self.surface_threshold.is_finite() && self.surface_threshold >= 0.0) {
            return Err("sensors.surface_threshold must be non-negative".into());
        }
        Ok(())
    }
}

/// Number of sim steps between samples at `rate` Hz.
pub fn period_ticks(rate: f64, dt: f64) -> Result<u64, String> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(format!("rate must be positive (got {rate})"));
    }
    let ratio = 1.0 / (rate * dt);
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
        return Err(format!("period 1/{rate} s is not a whole multiple of dt = {dt} s"));
    }
    Ok(n as u64)
}

/// Samples one sensor. Returns `None` when the sensor is disabled or, for
/// GPS, when the vehicle is deeper than the surface threshold.
pub fn sample(kind: SensorKind, truth: &VehicleState, t: f64, cfg: &SensorConfig, rng: &mut RngStream) -> Option<Measurement> {
    if !cfg.enabled(kind) {
        return None;
    }
    let payload = match kind {
        SensorKind::Dvl => {
            let v = truth.body_velocity();
            let s = cfg.dvl.sigma;
            Payload::Dvl {
                velocity: [v.x + rng.gaussian(s[0]), v.y + rng.gaussian(s[1]), v.z + rng.gaussian(s[2])],
            }
        }
        SensorKind::Imu => {
            let p = truth.pose;
            let s = cfg.imu.sigma;
            Payload::Imu {
                orientation: [
                    wrap_angle(p.roll + rng.gaussian(s[0])),
                    wrap_angle(p.pitch + rng.gaussian(s[1])),
                    wrap_angle(p.yaw + rng.gaussian(s[2])),
                ],
            }
        }
        SensorKind::Depth => Payload::Depth {
            z: truth.pose.z + rng.gaussian(cfg.depth.sigma),
        },
        SensorKind::Gps => {
            if truth.pose.z > cfg.surface_threshold {
                return None;
            }
            let s = cfg.gps.sigma;
            Payload::Gps {
                x: truth.pose.x + rng.gaussian(s[0]),
                y: truth.pose.y + rng.gaussian(s[1]),
            }
        }
    };
    Some(Measurement { t, payload })
}
