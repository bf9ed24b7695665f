use std::f64::consts::PI;

use auvfleet_core::control::tuning::{pole_placement, PoleTargets};
use auvfleet_core::control::{heading_error, Autopilot, DepthLoop, Gains, HeadingLoop, Measured, PitchLoop, Setpoint, SpeedLoop};
use auvfleet_core::dynamics::{step_dynamics, ActuatorCommand, PlantParams, VehicleState};
use auvfleet_core::geometry::Pose6;
use proptest::prelude::*;

fn gains() -> Gains {
    Gains::tuned_for(&PlantParams::default(), 0.05)
}

fn any_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1e6f64..1e6,
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
        1 => Just(f64::NEG_INFINITY),
    ]
}

proptest! {
    #[test]
    fn wrapped_error_is_at_most_half_turn(a in -1e4f64..1e4, b in -1e4f64..1e4) {
        let e = heading_error(a, b);
        prop_assert!(e.abs() <= PI);
        prop_assert!(e > -PI);
    }

    #[test]
    fn outputs_respect_clamps(zr in any_value(), z in any_value(), th in any_value(), hr in any_value(),
                              h in any_value(), ur in any_value(), u in any_value(), steps in 1usize..20) {
        let g = gains();
        let p = PlantParams::default();
        let mut ap = Autopilot::new();
        let sp = Setpoint { heading_ref: hr, speed_ref: ur, depth_ref: zr };
        let m = Measured { z, pitch: th, yaw: h, u };
        for _ in 0..steps {
            let tr = ap.step(&sp, &m, 0.05, &g, &p);
            let c = tr.command;
            prop_assert!(tr.pitch_ref.abs() <= g.limits.pitch_ref);
            prop_assert!(c.thruster.abs() <= 1.0);
            for f in [c.top_fin, c.port_fin, c.starboard_fin] {
                prop_assert!(f.is_finite() && f.abs() <= g.limits.fin.min(p.fin_limit));
            }
        }
    }

    #[test]
    fn channels_are_decoupled(hr in -3.0f64..3.0, h in -3.0f64..3.0, ur in 0.0f64..2.0, u in 0.0f64..2.0,
                              zr in 0.0f64..10.0, z in 0.0f64..10.0, th in -0.3f64..0.3, dz in -5.0f64..5.0, dh in -2.0f64..2.0) {
        let g = gains();
        let p = PlantParams::default();
        let base = Autopilot::new().step(&Setpoint { heading_ref: hr, speed_ref: ur, depth_ref: zr }, &Measured { z, pitch: th, yaw: h, u }, 0.05, &g, &p);
        // Perturbing depth inputs leaves heading and speed outputs alone.
        let depth = Autopilot::new().step(&Setpoint { heading_ref: hr, speed_ref: ur, depth_ref: zr + dz }, &Measured { z, pitch: th + 0.1, yaw: h, u }, 0.05, &g, &p);
        prop_assert_eq!(base.command.top_fin, depth.command.top_fin);
        prop_assert_eq!(base.command.thruster, depth.command.thruster);
        // Perturbing heading leaves the rest alone.
        let heading = Autopilot::new().step(&Setpoint { heading_ref: hr + dh, speed_ref: ur, depth_ref: zr }, &Measured { z, pitch: th, yaw: h, u }, 0.05, &g, &p);
        prop_assert_eq!(base.command.port_fin, heading.command.port_fin);
        prop_assert_eq!(base.command.starboard_fin, heading.command.starboard_fin);
        prop_assert_eq!(base.command.thruster, heading.command.thruster);
        // And speed only moves the thruster.
        let speed = Autopilot::new().step(&Setpoint { heading_ref: hr, speed_ref: ur + 0.5, depth_ref: zr }, &Measured { z, pitch: th, yaw: h, u }, 0.05, &g, &p);
        prop_assert_eq!(base.command.top_fin, speed.command.top_fin);
        prop_assert_eq!(base.command.port_fin, speed.command.port_fin);
    }

    #[test]
    fn frozen_outer_loop_leaves_plain_pd(theta_r in -0.3f64..0.3, thetas in prop::collection::vec(-0.5f64..0.5, 1..50)) {
        let g = gains();
        let eff = PlantParams::default().fin_effectiveness;
        let mut inner = PitchLoop::default();
        // Standalone PD with a plain backward-difference derivative.
        let dt = 0.05;
        let mut prev: Option<f64> = None;
        for th in thetas {
            let e = theta_r - th;
            let d = prev.map_or(0.0, |p| (e - p) / dt);
            prev = Some(e);
            let expect = ((g.pitch_inner.kp * e + g.pitch_inner.kd * d) / eff).clamp(-g.limits.fin, g.limits.fin);
            let (port, stbd) = inner.pitch_inner(theta_r, th, dt, &g, eff);
            prop_assert!((port - expect).abs() < 1e-12);
            prop_assert_eq!(port, stbd);
        }
    }
}

#[test]
fn depth_outer_direct_formula() {
    let mut g = gains();
    g.depth_outer.kp = 0.5;
    g.depth_outer.kd = 0.0;
    // Target 0.7 m deeper: nose down by 0.35 rad, which the 20 degree clamp pins.
    let out = DepthLoop::default().depth_outer(0.7, 0.0, 0.05, &g);
    assert_eq!(out, -0.35f64.min(g.limits.pitch_ref));
    g.limits.pitch_ref = 1.0;
    assert!((DepthLoop::default().depth_outer(0.7, 0.0, 0.05, &g) + 0.35).abs() < 1e-15);
    assert_eq!(DepthLoop::default().depth_outer(100.0, 0.0, 0.05, &g), -1.0);
    assert_eq!(DepthLoop::default().depth_outer(2.0, 2.0, 0.05, &g), 0.0);
}

#[test]
fn pitch_loop_tracks_continuous_second_order() {
    // Reference: the continuous second-order step at the target pair.
    let p = PlantParams::default();
    let g = pole_placement(&p, &PoleTargets::default(), 0.05);
    let (w, z) = (2.0f64, 0.9f64);
    let wd = w * (1.0 - z * z).sqrt();
    let theta_r = 0.1;
    let exact = |t: f64| theta_r * (1.0 - (-z * w * t).exp() * ((wd * t).cos() + z * w / wd * (wd * t).sin()));
    let dt = 0.05;
    let mut s = VehicleState::at_rest(Pose6::new(0.0, 0.0, 100.0, 0.0, 0.0, 0.0));
    let mut inner = PitchLoop::default();
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let (port, stbd) = inner.pitch_inner(theta_r, s.pose.pitch, dt, &g, p.fin_effectiveness);
        s = step_dynamics(&s, &ActuatorCommand::new(0.0, 0.0, port, stbd, p.fin_limit), &p, dt);
        let t = (k + 1) as f64 * dt;
        worst = worst.max((s.pose.pitch - exact(t)).abs() / theta_r);
    }
    assert!(worst < 0.02, "worst deviation {:.2}% of steady state", worst * 100.0);
}

#[test]
fn speed_loop_removes_steady_state_error() {
    let p = PlantParams::default();
    let g = gains();
    let mut lp = SpeedLoop::default();
    let mut s = VehicleState::at_rest(Pose6::default());
    for _ in 0..1200 {
        let th = lp.speed_pid(1.0, s.u, 0.05, &g);
        s = step_dynamics(&s, &ActuatorCommand::new(th, 0.0, 0.0, 0.0, p.fin_limit), &p, 0.05);
    }
    assert!((s.u - 1.0).abs() < 1e-6, "{}", s.u);
    assert!(lp.integrator() > 0.0);
}

#[test]
fn heading_step_without_integrator_state_is_zero() {
    let g = gains();
    assert_eq!(HeadingLoop::new().heading_pid(1.0, 1.0, 0.05, &g), 0.0);
    assert!((heading_error(PI / 2.0, -PI / 2.0) - PI).abs() < 1e-15);
}
