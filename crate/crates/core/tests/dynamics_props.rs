use auvfleet_core::dynamics::{step_dynamics, ActuatorCommand, PlantParams, VehicleState};
use auvfleet_core::geometry::Pose6;
use proptest::prelude::*;

fn simulate(s0: VehicleState, cmd: ActuatorCommand, p: &PlantParams, dt: f64, secs: f64) -> VehicleState {
    let mut s = s0;
    for _ in 0..(secs / dt).round() as usize {
        s = step_dynamics(&s, &cmd, p, dt);
    }
    s
}

fn deep() -> VehicleState {
    // Deep enough that the surface clamp never engages.
    VehicleState::at_rest(Pose6::new(0.0, 0.0, 500.0, 0.0, 0.0, 0.0))
}

proptest! {
    #[test]
    fn pitch_yaw_surge_scale_linearly(a in 0.01f64..0.2, k in 0.1f64..4.0) {
        let p = PlantParams::default();
        let lim = p.fin_limit;
        let one = simulate(deep(), ActuatorCommand::new(a, a, a, a, lim), &p, 0.05, 5.0);
        let scaled = simulate(deep(), ActuatorCommand::new(k * a, k * a, k * a, k * a, lim), &p, 0.05, 5.0);
        prop_assume!(k * a <= lim.min(1.0));
        prop_assert!((scaled.u - k * one.u).abs() < 1e-9 * (1.0 + scaled.u.abs()));
        prop_assert!((scaled.q - k * one.q).abs() < 1e-9 * (1.0 + scaled.q.abs()));
        prop_assert!((scaled.r - k * one.r).abs() < 1e-9 * (1.0 + scaled.r.abs()));
        prop_assert!((scaled.pose.pitch - k * one.pose.pitch).abs() < 1e-9);
    }

    #[test]
    fn zero_input_dissipates(u in -3.0f64..3.0, q in -1.0f64..1.0, r in -1.0f64..1.0, w in -1.0f64..1.0) {
        let p = PlantParams::default();
        let mut s = VehicleState { u, q, r, w_z: w, ..deep() };
        for _ in 0..200 {
            let next = step_dynamics(&s, &ActuatorCommand::idle(), &p, 0.05);
            prop_assert!(next.u.abs() <= s.u.abs());
            prop_assert!(next.q.abs() <= s.q.abs());
            prop_assert!(next.r.abs() <= s.r.abs());
            s = next;
        }
    }

    #[test]
    fn halving_dt_is_consistent(th in -1.0f64..1.0, top in -0.4f64..0.4, fin in -0.4f64..0.4) {
        let p = PlantParams::default();
        let cmd = ActuatorCommand::new(th, top, fin, fin, p.fin_limit);
        let a = simulate(deep(), cmd, &p, 0.05, 10.0);
        let b = simulate(deep(), cmd, &p, 0.025, 10.0);
        let pairs = [
            (a.pose.x, b.pose.x), (a.pose.y, b.pose.y), (a.pose.z, b.pose.z),
            (a.pose.pitch, b.pose.pitch), (a.u, b.u), (a.w_z, b.w_z), (a.q, b.q), (a.r, b.r),
        ];
        for (x, y) in pairs {
            prop_assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
        let dyaw = (a.pose.yaw - b.pose.yaw + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        prop_assert!(dyaw.abs() < 1e-3);
    }

    #[test]
    fn surface_is_never_crossed(th in -1.0f64..1.0, fin in -0.4f64..0.4) {
        let p = PlantParams::default();
        let cmd = ActuatorCommand::new(th, 0.0, fin, fin, p.fin_limit);
        let mut s = VehicleState::at_rest(Pose6::default());
        for _ in 0..400 {
            s = step_dynamics(&s, &cmd, &p, 0.05);
            prop_assert!(s.pose.z >= 0.0);
            prop_assert!(s.pose.pitch.abs() < std::f64::consts::FRAC_PI_2);
            prop_assert_eq!(s.pose.roll, 0.0);
        }
    }
}

#[test]
fn constant_yaw_torque_matches_closed_form() {
    // I ψ'' + b ψ' = τ from rest: ψ(t) = (τ/b)(t − (I/b)(1 − e^{−bt/I})).
    let p = PlantParams::default();
    let delta = 0.1;
    let tau = p.fin_effectiveness * delta;
    let cmd = ActuatorCommand::new(0.0, delta, 0.0, 0.0, p.fin_limit);
    let mut s = deep();
    let mut unwrapped = 0.0;
    let mut worst: f64 = 0.0;
    for k in 1..=400 {
        let prev = s.pose.yaw;
        s = step_dynamics(&s, &cmd, &p, 0.05);
        unwrapped += (s.pose.yaw - prev + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        let t = k as f64 * 0.05;
        let tc = p.i_z / p.b_psi;
        let exact = tau / p.b_psi * (t - tc * (1.0 - (-t / tc).exp()));
        worst = worst.max((unwrapped - exact).abs());
    }
    assert!(worst < 1e-9, "{worst}");
}
