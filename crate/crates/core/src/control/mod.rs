//! Decoupled autopilot: PID speed, PID heading, and a depth→pitch PD cascade.
//!
//! The outer depth loop turns depth error into a pitch reference; the inner
//! pitch loop turns pitch error into a torque realized by equal port and
//! starboard fin deflections. Heading drives the top fin and speed drives
//! the thruster.

pub mod pid;
pub mod tuning;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ActuatorCommand, PlantParams};
use crate::geometry::wrap_angle;
use pid::{clamp_sym, FilteredDerivative, Integrator};

pub use tuning::{pole_placement, PoleTargets};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    #[serde(default)]
    pub ki: f64,
    #[serde(default)]
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub kp: f64,
    #[serde(default)]
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Limits {
    /// Pitch reference clamp (rad).
    pub pitch_ref: f64,
    /// Fin deflection clamp (rad).
    pub fin: f64,
    /// Heading integrator clamp (rad·s).
    pub heading_integrator: f64,
    /// Speed integrator clamp (m).
    pub speed_integrator: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            pitch_ref: 20f64.to_radians(),
            fin: 25f64.to_radians(),
            heading_integrator: 0.5,
            speed_integrator: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub heading: PidGains,
    pub speed: PidGains,
    pub depth_outer: PdGains,
    pub pitch_inner: PdGains,
    #[serde(default)]
    pub limits: Limits,
}

impl Gains {
    pub fn validate(&self) -> Result<(), String> {
        let gains = [
            self.heading.kp,
            self.heading.ki,
            self.heading.kd,
            self.speed.kp,
            self.speed.ki,
            self.speed.kd,
            self.depth_outer.kp,
            self.depth_outer.kd,
            self.pitch_inner.kp,
            self.pitch_inner.kd,
        ];
        if !gains.iter().all(|g| g.is_finite()) {
            return Err("gains must be finite".into());
        }
        let l = &self.limits;
        if ![l.pitch_ref, l.fin, l.heading_integrator, l.speed_integrator]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return Err("gains.limits must be positive".into());
        }
        Ok(())
    }
}

/// What the mission asks the autopilot to hold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Setpoint {
    pub heading_ref: f64,
    pub speed_ref: f64,
    pub depth_ref: f64,
}

impl Setpoint {
    /// Zero speed at the surface, keeping the given heading.
    pub fn surface(heading_ref: f64) -> Self {
        Self {
            heading_ref,
            speed_ref: 0.0,
            depth_ref: 0.0,
        }
    }
}

/// Outer loop: depth error to pitch reference.
#[derive(Debug, Clone, Default)]
pub struct DepthLoop {
    deriv: FilteredDerivative,
}

impl DepthLoop {
    /// Positive depth error (target deeper) yields a negative, nose-down
    /// pitch reference.
    pub fn depth_outer(&mut self, z_ref: f64, z: f64, dt: f64, gains: &Gains) -> f64 {
        let e = z_ref - z;
        let de = self.deriv.update(e, dt);
        let g = gains.depth_outer;
        clamp_sym(-(g.kp * e + g.kd * de), gains.limits.pitch_ref)
    }
}

/// Inner loop: pitch error to port/starboard deflection. The derivative is
/// an unfiltered backward difference, matching the sampled-plant design in
/// [`tuning`].
#[derive(Debug, Clone)]
pub struct PitchLoop {
    deriv: FilteredDerivative,
}

impl Default for PitchLoop {
    fn default() -> Self {
        Self {
            deriv: FilteredDerivative::unfiltered(),
        }
    }
}

impl PitchLoop {
    pub fn pitch_inner(&mut self, theta_ref: f64, theta: f64, dt: f64, gains: &Gains, fin_effectiveness: f64) -> (f64, f64) {
        let e = theta_ref - theta;
        let de = self.deriv.update(e, dt);
        let g = gains.pitch_inner;
        let torque = g.kp * e + g.kd * de;
        let fin = clamp_sym(torque / fin_effectiveness, gains.limits.fin);
        (fin, fin)
    }
}

/// Heading error wrapped to `(-π, π]`; an exact half-turn resolves to `+π`.
pub fn heading_error(psi_ref: f64, psi: f64) -> f64 {
    wrap_angle(psi_ref - psi)
}

/// Errors within this margin of a half-turn hold their turn direction.
pub const TURN_LATCH_BAND: f64 = 10.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Default)]
pub struct HeadingLoop {
    deriv: FilteredDerivative,
    integ: Integrator,
    latch: Option<f64>,
}

impl HeadingLoop {
    pub fn new() -> Self {
        Self {
            deriv: FilteredDerivative::angular(),
            ..Self::default()
        }
    }

    /// Top-fin deflection. Near a half-turn, measurement noise flips the sign
    /// of the wrapped error; once inside that band the loop keeps turning the
    /// way it started (positive on entry) until the error leaves the band.
    pub fn heading_pid(&mut self, psi_ref: f64, psi: f64, dt: f64, gains: &Gains) -> f64 {
        let mut e = heading_error(psi_ref, psi);
        if e.abs() > std::f64::consts::PI - TURN_LATCH_BAND {
            let dir = *self.latch.get_or_insert(1.0);
            if e.signum() != dir {
                e = dir * std::f64::consts::PI;
            }
        } else {
            self.latch = None;
        }
        let de = self.deriv.update(e, dt);
        let g = gains.heading;
        let raw = g.kp * e + g.ki * self.integ.value() + g.kd * de;
        let out = clamp_sym(raw, gains.limits.fin);
        // Conditional integration: only wind while unsaturated or unwinding.
        if out == raw || raw.signum() != e.signum() {
            self.integ.accumulate(e, dt, gains.limits.heading_integrator);
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct SpeedLoop {
    deriv: FilteredDerivative,
    integ: Integrator,
}

impl SpeedLoop {
    /// Normalized thruster demand. The integrator is frozen while saturated.
    pub fn speed_pid(&mut self, u_ref: f64, u: f64, dt: f64, gains: &Gains) -> f64 {
        let e = u_ref - u;
        let de = self.deriv.update(e, dt);
        let g = gains.speed;
        let raw = g.kp * e + g.ki * self.integ.value() + g.kd * de;
        let out = clamp_sym(raw, 1.0);
        if out == raw {
            self.integ.accumulate(e, dt, gains.limits.speed_integrator);
        }
        out
    }

    pub fn integrator(&self) -> f64 {
        self.integ.value()
    }
}

/// Feedback signals the autopilot closes its loops on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measured {
    pub z: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub u: f64,
}

/// Commanded versus measured channels for one control step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlTrace {
    pub setpoint: Setpoint,
    pub measured: Measured,
    pub pitch_ref: f64,
    pub command: ActuatorCommand,
}

#[derive(Debug, Clone)]
pub struct Autopilot {
    depth: DepthLoop,
    pitch: PitchLoop,
    heading: HeadingLoop,
    speed: SpeedLoop,
}

impl Default for Autopilot {
    fn default() -> Self {
        Self::new()
    }
}

impl Autopilot {
    pub fn new() -> Self {
        Self {
            depth: DepthLoop::default(),
            pitch: PitchLoop::default(),
            heading: HeadingLoop::new(),
            speed: SpeedLoop::default(),
        }
    }

    pub fn step(&mut self, sp: &Setpoint, m: &Measured, dt: f64, gains: &Gains, plant: &PlantParams) -> ControlTrace {
        let pitch_ref = self.depth.depth_outer(sp.depth_ref, m.z, dt, gains);
        let (port, stbd) = self.pitch.pitch_inner(pitch_ref, m.pitch, dt, gains, plant.fin_effectiveness);
        let top = self.heading.heading_pid(sp.heading_ref, m.yaw, dt, gains);
        let thrust = self.speed.speed_pid(sp.speed_ref, m.u, dt, gains);
        let fin_limit = gains.limits.fin.min(plant.fin_limit);
        ControlTrace {
            setpoint: *sp,
            measured: *m,
            pitch_ref,
            command: ActuatorCommand::new(thrust, top, port, stbd, fin_limit),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gains() -> Gains {
        pole_placement(&PlantParams::default(), &PoleTargets::default(), 0.05)
    }

    #[test]
    fn zero_error_zero_output() {
        let g = gains();
        assert_eq!(DepthLoop::default().depth_outer(1.0, 1.0, 0.05, &g), 0.0);
        assert_eq!(PitchLoop::default().pitch_inner(0.1, 0.1, 0.05, &g, 1.5), (0.0, 0.0));
        assert_eq!(HeadingLoop::new().heading_pid(0.4, 0.4, 0.05, &g), 0.0);
        assert_eq!(SpeedLoop::default().speed_pid(1.0, 1.0, 0.05, &g), 0.0);
    }

    #[test]
    fn depth_proportional_term_commands_nose_down() {
        let mut g = gains();
        g.depth_outer = PdGains { kp: 0.5, kd: 0.0 };
        g.limits.pitch_ref = 1.0;
        let theta = DepthLoop::default().depth_outer(0.7, 0.0, 0.05, &g);
        assert!((theta + 0.35).abs() < 1e-15);
        g.limits.pitch_ref = 20f64.to_radians();
        let theta = DepthLoop::default().depth_outer(50.0, 0.0, 0.05, &g);
        assert_eq!(theta, -g.limits.pitch_ref);
    }

    #[test]
    fn half_turn_resolves_positive() {
        assert_eq!(heading_error(PI / 2.0, -PI / 2.0), PI);
        assert_eq!(heading_error(-PI / 2.0, PI / 2.0), PI);
        let g = gains();
        assert!(HeadingLoop::new().heading_pid(PI / 2.0, -PI / 2.0, 0.05, &g) > 0.0);
    }

    #[test]
    fn latch_holds_direction_through_sign_flip() {
        let g = gains();
        let mut h = HeadingLoop::new();
        assert!(h.heading_pid(0.0, PI - 0.01, 0.05, &g) > 0.0);
        // Measurement noise crosses the half-turn; the turn must not reverse.
        assert!(h.heading_pid(0.0, -PI + 0.01, 0.05, &g) > 0.0);
    }

    #[test]
    fn speed_saturates_and_freezes_integrator() {
        let g = gains();
        let mut s = SpeedLoop::default();
        for _ in 0..100 {
            assert_eq!(s.speed_pid(1e6, 0.0, 0.05, &g), 1.0);
        }
        assert_eq!(s.integrator(), 0.0);
    }

    #[test]
    fn pitch_maps_torque_through_effectiveness() {
        let mut g = gains();
        g.pitch_inner = PdGains { kp: 3.0, kd: 0.0 };
        let (p, s) = PitchLoop::default().pitch_inner(0.1, 0.0, 0.05, &g, 1.5);
        assert!((p - 0.2).abs() < 1e-15 && p == s);
    }
}
