//! Decoupled vehicle motion model.
//!
//! Four independent linear channels driven by one thruster and three fins:
//!
//! * surge: `m_u·u̇ + b_u·u = thruster_gain·thruster`
//! * yaw:   `I_z·ṙ + b_psi·r = τ_yaw`
//! * pitch: `I_y·q̇ + b_theta·q = τ_pitch`, `θ̇ = q`
//! * depth: `m·ẇ + b_z·w = −F_e·θ`, `ż = w`
//!
//! Each first-order channel is integrated with its exact solution under a
//! zero-order hold of the input, so constant-input responses do not depend
//! on the step size. Horizontal motion uses the distance covered in the step
//! along the mid-step heading.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose6};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Mass-like coefficient of the depth channel (kg).
    pub m: f64,
    /// Depth damping (N·s/m).
    pub b_z: f64,
    /// Moment of inertia about the pitch axis (kg·m²).
    pub i_y: f64,
    /// Pitch damping (N·m·s/rad).
    pub b_theta: f64,
    /// Thrust about which the depth channel is linearized (N).
    pub f_e: f64,
    pub i_z: f64,
    pub b_psi: f64,
    pub m_u: f64,
    pub b_u: f64,
    /// Torque per radian of fin deflection at the linearization speed (N·m/rad).
    pub fin_effectiveness: f64,
    /// Thrust per unit normalized command (N).
    pub thruster_gain: f64,
    /// Mechanical fin deflection limit (rad).
    pub fin_limit: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        // Order-of-magnitude values for a ~1.5 m torpedo AUV cruising at 1 m/s:
        // F_e balances surge drag at cruise, so F_e / b_z ≈ cruise speed.
        Self {
            m: 25.0,
            b_z: 20.0,
            i_y: 1.0,
            b_theta: 2.0,
            f_e: 20.0,
            i_z: 1.0,
            b_psi: 2.0,
            m_u: 25.0,
            b_u: 20.0,
            fin_effectiveness: 1.5,
            thruster_gain: 40.0,
            fin_limit: 25f64.to_radians(),
        }
    }
}

impl PlantParams {
    /// Returns the name of the first violated invariant, if any.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("m", self.m),
            ("b_z", self.b_z),
            ("i_y", self.i_y),
            ("b_theta", self.b_theta),
            ("i_z", self.i_z),
            ("b_psi", self.b_psi),
            ("m_u", self.m_u),
            ("b_u", self.b_u),
            ("fin_effectiveness", self.fin_effectiveness),
            ("thruster_gain", self.thruster_gain),
            ("fin_limit", self.fin_limit),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("plant.{name} must be strictly positive (got {v})"));
            }
        }
        if !(self.f_e.is_finite() && self.f_e >= 0.0) {
            return Err(format!("plant.f_e must be non-negative (got {})", self.f_e));
        }
        Ok(())
    }
}

/// Saturated actuator demand.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorCommand {
    /// Normalized thrust in `[-1, 1]`.
    pub thruster: f64,
    pub top_fin: f64,
    pub port_fin: f64,
    pub starboard_fin: f64,
    #[serde(skip)]
    saturated: bool,
}

impl ActuatorCommand {
    /// Clamps every channel to its limit. Non-finite demands become zero.
    pub fn new(thruster: f64, top_fin: f64, port_fin: f64, starboard_fin: f64, fin_limit: f64) -> Self {
        let mut saturated = false;
        let mut clamp = |v: f64, lim: f64| {
            if !v.is_finite() {
                saturated = true;
                return 0.0;
            }
            if v.abs() > lim {
                saturated = true;
            }
            v.clamp(-lim, lim)
        };
        let thruster = clamp(thruster, 1.0);
        let top_fin = clamp(top_fin, fin_limit);
        let port_fin = clamp(port_fin, fin_limit);
        let starboard_fin = clamp(starboard_fin, fin_limit);
        Self {
            thruster,
            top_fin,
            port_fin,
            starboard_fin,
            saturated,
        }
    }

    pub fn idle() -> Self {
        Self::default()
    }

    pub fn was_saturated(&self) -> bool {
        self.saturated
    }
}

/// Simulator ground truth for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose6,
    /// Surge speed along body x (m/s).
    pub u: f64,
    /// Vertical speed in the world frame, positive down (m/s).
    pub w_z: f64,
    /// Pitch rate (rad/s).
    pub q: f64,
    /// Yaw rate (rad/s).
    pub r: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose6) -> Self {
        Self {
            pose: Pose6 { roll: 0.0, ..pose },
            ..Self::default()
        }
    }

    /// Velocity of the vehicle expressed in the world frame.
    pub fn world_velocity(&self) -> nalgebra::Vector3<f64> {
        let (s, c) = self.pose.yaw.sin_cos();
        nalgebra::Vector3::new(self.u * c, self.u * s, self.w_z)
    }

    /// Velocity of the vehicle expressed in its body frame (what a DVL sees).
    pub fn body_velocity(&self) -> nalgebra::Vector3<f64> {
        self.pose.rotation().transpose() * self.world_velocity()
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && [self.u, self.w_z, self.q, self.r].iter().all(|v| v.is_finite())
    }
}

/// `(τ_pitch, τ_yaw)` produced by the fins. Effectiveness is held at the
/// linearization speed, so `u` does not enter.
pub fn fins_to_torques(cmd: &ActuatorCommand, _u: f64, params: &PlantParams) -> (f64, f64) {
    let pitch = params.fin_effectiveness * 0.5 * (cmd.port_fin + cmd.starboard_fin);
    let yaw = params.fin_effectiveness * cmd.top_fin;
    (pitch, yaw)
}

/// Exact ZOH step of `inertia·v̇ + damping·v = force`.
/// Returns the new velocity and the integral of velocity over the step.
fn first_order_step(v: f64, force: f64, damping: f64, inertia: f64, dt: f64) -> (f64, f64) {
    let v_inf = force / damping;
    let tau = inertia / damping;
    let decay = (-dt / tau).exp();
    let v_new = v_inf + (v - v_inf) * decay;
    let travelled = v_inf * dt + (v - v_inf) * tau * (1.0 - decay);
    (v_new, travelled)
}

pub fn step_dynamics(state: &VehicleState, cmd: &ActuatorCommand, params: &PlantParams, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0);
    let (tau_pitch, tau_yaw) = fins_to_torques(cmd, state.u, params);
    let thrust = params.thruster_gain * cmd.thruster;

    let (u, ds) = first_order_step(state.u, thrust, params.b_u, params.m_u, dt);
    let (r, dpsi) = first_order_step(state.r, tau_yaw, params.b_psi, params.i_z, dt);
    let (_, dpsi_half) = first_order_step(state.r, tau_yaw, params.b_psi, params.i_z, 0.5 * dt);
    let (mut q, dtheta) = first_order_step(state.q, tau_pitch, params.b_theta, params.i_y, dt);

    let theta0 = state.pose.pitch;
    let mut theta1 = theta0 + dtheta;
    if theta1.abs() >= FRAC_PI_2 {
        theta1 = theta1.clamp(-FRAC_PI_2 + 1e-6, FRAC_PI_2 - 1e-6);
        q = 0.0;
    }
    let theta_mid = 0.5 * (theta0 + theta1);
    let (mut w_z, dz) = first_order_step(state.w_z, -params.f_e * theta_mid, params.b_z, params.m, dt);

    let psi_mid = state.pose.yaw + dpsi_half;
    let (s, c) = psi_mid.sin_cos();
    let mut z = state.pose.z + dz;
    // The hull cannot rise above the free surface.
    if z < 0.0 {
        z = 0.0;
        w_z = w_z.max(0.0);
    }

    VehicleState {
        pose: Pose6 {
            x: state.pose.x + ds * c,
            y: state.pose.y + ds * s,
            z,
            roll: 0.0,
            pitch: theta1,
            yaw: wrap_angle(state.pose.yaw + dpsi),
        },
        u,
        w_z,
        q,
        r,
    }
}
