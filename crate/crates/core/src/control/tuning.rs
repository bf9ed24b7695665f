//! Gain selection by pole placement on the linear plant channels.
//!
//! * pitch: PD with a backward-difference derivative on the zero-order-hold
//!   sampled plant `1/(s (I_y s + b_θ))`. The closed loop is third order in
//!   `z`; two poles go to `exp(s₁ dt)` for the target pair and the third
//!   lands wherever the solve puts it (close to the origin for sane `dt`).
//! * depth: with the inner loop treated as ideal (`θ = θ_r`),
//!   `m s² + (b_z + F_e kD_z) s + F_e kP_z` matched to `m (s² + 2ζω s + ω²)`
//! * heading: PID on `I_z s² + b_ψ s` with fin gain `e`, closed-loop
//!   polynomial placed at `(s + α)(s² + 2ζω s + ω²)`
//! * speed: PI on `m_u s + b_u` with thruster gain `g`, placed at
//!   `s² + 2ζω s + ω²`
//!
//! Derivative gains that would come out negative (the plant is already
//! damped enough) are clipped to zero.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Gains, Limits, PdGains, PidGains};
use crate::dynamics::PlantParams;

/// Natural frequency (rad/s) and damping ratio of a closed-loop pole pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolePair {
    pub omega: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleTargets {
    pub pitch: PolePair,
    pub depth: PolePair,
    pub heading: PolePair,
    /// Real pole added by the heading integrator (rad/s).
    pub heading_integral_pole: f64,
    pub speed: PolePair,
}

impl Default for PoleTargets {
    fn default() -> Self {
        Self {
            pitch: PolePair { omega: 2.0, zeta: 0.9 },
            depth: PolePair { omega: 0.5, zeta: 1.0 },
            heading: PolePair { omega: 1.0, zeta: 1.5 },
            heading_integral_pole: 0.05,
            speed: PolePair { omega: 1.0, zeta: 1.0 },
        }
    }
}

/// Discrete PD gains for the pitch channel at sample period `dt`.
///
/// Plant `G(z) = (n₁ z + n₀) / ((z - 1)(z - e))` with `e = exp(-a dt)`,
/// `a = b_θ / I_y`; controller `kP + kD' (1 - z⁻¹)` with `kD = kD' dt`.
/// Matching `z (z-1)(z-e) + (kP + kD')(n₁ z + n₀) z - kD' (n₁ z + n₀)`
/// against `(z² + c₁ z + c₀)(z - p₃)` gives a 3×3 linear system.
pub fn pitch_gains(p: &PlantParams, pair: PolePair, dt: f64) -> PdGains {
    let PolePair { omega: w, zeta: z } = pair;
    let a = p.b_theta / p.i_y;
    let e = (-a * dt).exp();
    let k = 1.0 / p.b_theta;
    let tau = 1.0 / a;
    let n1 = k * (dt - tau * (1.0 - e));
    let n0 = k * (tau * (1.0 - e) - dt * e);

    let (c1, c0) = if z < 1.0 {
        let wd = w * (1.0 - z * z).sqrt();
        let r = (-z * w * dt).exp();
        (-2.0 * r * (wd * dt).cos(), r * r)
    } else {
        let s = w * (z * z - 1.0).sqrt();
        let (r1, r2) = (((-z * w + s) * dt).exp(), ((-z * w - s) * dt).exp());
        (-(r1 + r2), r1 * r2)
    };

    let m = Matrix3::new(n1, n1, 1.0, n0, n0 - n1, c1, 0.0, -n0, c0);
    let rhs = Vector3::new(c1 + 1.0 + e, c0 - e, 0.0);
    match m.lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => PdGains {
            kp: x[0].max(0.0),
            kd: (x[1] * dt).max(0.0),
        },
        _ => PdGains {
            kp: p.i_y * w * w,
            kd: (2.0 * z * w * p.i_y - p.b_theta).max(0.0),
        },
    }
}

/// Gains for every loop; `dt` is the controller sample period.
pub fn pole_placement(p: &PlantParams, t: &PoleTargets, dt: f64) -> Gains {
    let pitch_inner = pitch_gains(p, t.pitch, dt);

    let PolePair { omega: w, zeta: z } = t.depth;
    let depth_outer = PdGains {
        kp: p.m * w * w / p.f_e,
        kd: ((2.0 * z * w * p.m - p.b_z) / p.f_e).max(0.0),
    };

    let PolePair { omega: w, zeta: z } = t.heading;
    let a = t.heading_integral_pole;
    let e = p.fin_effectiveness;
    let heading = PidGains {
        kp: p.i_z * (w * w + 2.0 * z * w * a) / e,
        ki: p.i_z * a * w * w / e,
        kd: ((p.i_z * (a + 2.0 * z * w) - p.b_psi) / e).max(0.0),
    };

    let PolePair { omega: w, zeta: z } = t.speed;
    let g = p.thruster_gain;
    let speed = PidGains {
        kp: ((2.0 * z * w * p.m_u - p.b_u) / g).max(0.0),
        ki: p.m_u * w * w / g,
        kd: 0.0,
    };

    Gains {
        heading,
        speed,
        depth_outer,
        pitch_inner,
        limits: Limits {
            fin: p.fin_limit,
            ..Limits::default()
        },
    }
}

impl Gains {
    /// Pole-placement gains for `plant` at the default targets.
    pub fn tuned_for(plant: &PlantParams, dt: f64) -> Self {
        pole_placement(plant, &PoleTargets::default(), dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_loop_pitch_poles(p: &PlantParams, g: PdGains, dt: f64) -> Vec<nalgebra::Complex<f64>> {
        // Build the sampled loop from the state-space ZOH, independent of
        // the transfer-function algebra used for tuning.
        let a = nalgebra::Matrix2::new(0.0, 1.0, 0.0, -p.b_theta / p.i_y);
        let ad = (a * dt).exp();
        // ∫₀^dt exp(Aσ) dσ B by fine midpoint quadrature
        let n = 20_000;
        let h = dt / n as f64;
        let mut bd = nalgebra::Vector2::zeros();
        for i in 0..n {
            bd += (a * ((i as f64 + 0.5) * h)).exp() * nalgebra::Vector2::new(0.0, 1.0 / p.i_y) * h;
        }
        // state [θ, q, θ_prev]; u = -kP θ - kD (θ - θ_prev)/dt
        let kd = g.kd / dt;
        let mut cl = nalgebra::Matrix3::zeros();
        for r in 0..2 {
            cl[(r, 0)] = ad[(r, 0)] - bd[r] * (g.kp + kd);
            cl[(r, 1)] = ad[(r, 1)];
            cl[(r, 2)] = bd[r] * kd;
        }
        cl[(2, 0)] = 1.0;
        cl.complex_eigenvalues().iter().copied().collect()
    }

    #[test]
    fn pitch_loop_poles_land_on_target() {
        let p = PlantParams::default();
        for dt in [0.02, 0.05, 0.1] {
            let g = Gains::tuned_for(&p, dt);
            let (w, z) = (2.0f64, 0.9f64);
            let s1 = nalgebra::Complex::new(-z * w, w * (1.0 - z * z).sqrt());
            let target = (s1 * dt).exp();
            let poles = closed_loop_pitch_poles(&p, g.pitch_inner, dt);
            let best = poles.iter().map(|q| (q - target).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "dt {dt}: poles {poles:?} target {target}");
            assert!(poles.iter().all(|q| q.norm() < 1.0));
        }
    }

    #[test]
    fn heading_characteristic_polynomial_matches() {
        let p = PlantParams::default();
        let g = Gains::tuned_for(&p, 0.05);
        assert!(g.heading.kd > 0.0);
        let e = p.fin_effectiveness;
        // I s³ + (b + e kD) s² + e kP s + e kI
        let c2 = (p.b_psi + e * g.heading.kd) / p.i_z;
        let c1 = e * g.heading.kp / p.i_z;
        let c0 = e * g.heading.ki / p.i_z;
        let (w, z, a): (f64, f64, f64) = (1.0, 1.5, 0.05);
        assert!((c2 - (a + 2.0 * z * w)).abs() < 1e-12);
        assert!((c1 - (w * w + 2.0 * z * w * a)).abs() < 1e-12);
        assert!((c0 - a * w * w).abs() < 1e-12);
    }

    #[test]
    fn overdamped_plant_clips_derivative_gain() {
        // Yaw damping alone exceeds the target s² coefficient.
        let p = PlantParams {
            b_psi: 5.0,
            ..PlantParams::default()
        };
        let g = Gains::tuned_for(&p, 0.05);
        assert_eq!(g.heading.kd, 0.0);
    }

    #[test]
    fn gains_are_finite_and_non_negative() {
        let g = Gains::tuned_for(&PlantParams::default(), 0.05);
        g.validate().unwrap();
        for v in [g.heading.kp, g.heading.ki, g.heading.kd, g.speed.kp, g.speed.ki, g.depth_outer.kp, g.depth_outer.kd, g.pitch_inner.kp, g.pitch_inner.kd] {
            assert!(v >= 0.0 && v.is_finite());
        }
    }
}
